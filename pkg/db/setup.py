import sys

from .runs import init_db, registry_url

# Usage: python -m db.setup [output_dir]
output_dir = sys.argv[1] if len(sys.argv) > 1 else "output"
init_db(registry_url(output_dir))
print(f"Run registry initialized in {output_dir}.")
