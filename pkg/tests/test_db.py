from db.runs import init_db, latest_run, record_run, registry_url


def test_registry_url(tmp_path):
    assert registry_url(tmp_path / "out") == f"sqlite:///{tmp_path / 'out' / 'runs.db'}"


def test_record_and_read_back(tmp_path):
    session_factory = init_db(registry_url(tmp_path / "nested" / "out"))
    assert (tmp_path / "nested" / "out" / "runs.db").is_file()
    assert latest_run(session_factory) is None

    first = record_run(session_factory, "synth", 42, {"seed": 42}, {"hours": 48}, [tmp_path / "d.csv"])
    record_run(session_factory, "compare", 42, {"seed": 42}, {"par_no_dr": 1.8})
    assert first.id is not None

    latest = latest_run(session_factory)
    assert latest.command == "compare"
    assert latest.summary == {"par_no_dr": 1.8}
    assert latest.artifacts == []
    synth = latest_run(session_factory, "synth")
    assert synth.artifacts == [str(tmp_path / "d.csv")]
    assert synth.config == {"seed": 42}
    assert synth.created is not None


def test_in_memory_registry():
    session_factory = init_db("sqlite:///:memory:")
    assert latest_run(session_factory, "evaluate") is None
