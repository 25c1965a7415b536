import json

import pytest

from riskpipe.cli import main, render_status
from riskpipe.gateway import COMPLETE, Gateway
from riskpipe.nn.modelfile import load_model


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = {
        "dataset": "w.benv",
        "model": "m.benv",
        "training": {"max_epochs": 1},
        "model_config": {"conv_filters": 4, "lstm_units": 8},
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_offline_workflow(workdir, capsys):
    assert run(capsys, "corpus", "--corpus-out", "c.csv", "--subjects", "3", "--minutes", "3")[0] == 0
    code, out, _ = run(capsys, "--config", "cfg.json", "label", "c.csv", "--summary-csv", "w.csv")
    assert code == 0 and "windows from 3 subjects" in out
    hist = json.loads((workdir / "w.histogram.json").read_text())
    assert hist["windows"] == 3 * (180 - 29)
    assert (workdir / "w.csv").read_text().startswith("subject_id,start_index,overall_score,label")

    assert run(capsys, "--config", "cfg.json", "train")[0] == 0
    bundle = load_model("m.benv")
    report = json.loads((workdir / "reports" / "train.json").read_text())
    assert report["model_fingerprint"] == bundle.fingerprint
    assert report["config"]["model_config"]["conv_filters"] == 4
    assert (workdir / "m.history.csv").exists()

    code, out, _ = run(capsys, "--config", "cfg.json", "evaluate", "--all-subjects")
    assert code == 0
    ev = json.loads((workdir / "reports" / "evaluate.json").read_text())
    assert ev["windows"] == hist["windows"] and len(ev["fingerprint"]) == 64
    assert len(list((workdir / "reports" / "roc").glob("*.csv"))) == 4

    code, out, _ = run(capsys, "--config", "cfg.json", "assess", "c.csv", "--subject", "S02")
    verdict = json.loads(out)
    assert code == 0 and verdict["window_count"] == 151

    code, _, err = run(capsys, "--config", "cfg.json", "assess", "c.csv")
    assert code == 1 and "exactly one session" in err


def test_exit_codes(workdir, capsys):
    assert run(capsys, "--config", "missing.json", "label", "x.csv")[0] == 1
    (workdir / "bad.json").write_text('{"nonsense": 1}')
    code, _, err = run(capsys, "--config", "bad.json", "label", "x.csv")
    assert code == 1 and "nonsense" in err
    assert run(capsys, "label", "nowhere.csv")[0] == 1
    (workdir / "junk.benv").write_bytes(b"nope")
    assert run(capsys, "assess", "nowhere.csv", "--model", "junk.benv")[0] == 1
    code, _, err = run(capsys, "status", "--gateway-url", "http://127.0.0.1:9")
    assert code == 2 and "unreachable" in err
    with pytest.raises(SystemExit):
        main(["no-such-command"])


def test_simulate_and_status_against_live_gateway(capsys):
    gw = Gateway(threshold=30, dispatcher=lambda s: {"label": "Run as usual", "confidence": 0.8, "window_count": 1})
    server = gw.server(port=0).start()
    try:
        code, out, _ = run(capsys, "simulate", "--gateway-url", server.url, "--rate-hz", "500", "--duration-s", "30")
        assert code == 0 and json.loads(out)["acked"] == 30
        assert gw.wait_for(COMPLETE, timeout=5)
        code, out, _ = run(capsys, "status", "--gateway-url", server.url, "--watch", "--until-complete", "--interval", "0.01")
        assert code == 0 and "verdict: Run as usual" in out
        code, out, _ = run(capsys, "status", "--gateway-url", server.url)
        assert json.loads(out)["state"] == COMPLETE
    finally:
        server.stop()


def test_render_status_without_verdict():
    line = render_status({"session_id": "abc", "state": "Filling", "buffered": 3, "threshold": 180})
    assert line.startswith("[abc] Filling") and "3/180" in line
