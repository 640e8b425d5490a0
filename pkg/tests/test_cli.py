import json

import numpy as np
import pytest

from ckacoin import acceptance, cli, quantum
from ckacoin.quantum import Q, StateVector


def report(argv, tmp_path, name="r.json"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, json.loads(out.read_text())


def strip_time(r):
    return json.dumps({k: v for k, v in r.items() if k != "wall_time"}, sort_keys=True)


def test_coin_report(tmp_path):
    code, r = report(["coin", "--n", "4", "--trials", "10000", "--seed", "7"], tmp_path)
    assert code == 0 and r["schema"] == 1
    assert r["aggregates"]["common_rate"] == 1.0
    assert len(r["trials"]) == 10_000
    assert 0.48 <= r["aggregates"]["p_hat_zero"] <= 0.52


def test_aggregates_recomputable(tmp_path):
    _, r = report(["coin", "--n", "3", "--trials", "200", "--corrupt", "1"], tmp_path)
    zeros = sum(t["common"] == 0 for t in r["trials"])
    assert r["aggregates"]["p_hat_zero"] == zeros / 200


def test_topology(tmp_path):
    code, r = report(["topology", "--n", "4"], tmp_path)
    assert code == 0
    assert (r["aggregates"]["pairwise"], r["aggregates"]["cka"]) == (6, 4)


def test_timebin(tmp_path):
    code, r = report(["timebin"], tmp_path)
    assert code == 0 and r["aggregates"]["min_fidelity"] >= 1 - 1e-9


@pytest.mark.parametrize(
    "argv",
    [
        ["coin", "--n", "5", "--trials", "50", "--seed", "3", "--noise", "bitflip", "--noise-p", "0.2"],
        ["bb84", "--trials", "3", "--photons", "2000", "--eavesdrop", "--seed", "1"],
        ["consensus", "--n", "5", "--trials", "5", "--corrupt", "1", "--scheduler", "random", "--block-len", "16"],
        ["consensus", "--protocol", "binary", "--n", "5", "--t", "2", "--trials", "10", "--scheduler", "random"],
        ["flp-demo", "--trials", "3", "--no-strawman"],
    ],
)
def test_byte_identical_reports(argv, tmp_path):
    _, a = report(argv, tmp_path, "a.json")
    _, b = report(argv, tmp_path, "a.json")
    assert strip_time(a) == strip_time(b)


def test_jobs_do_not_change_results(tmp_path):
    base = ["consensus", "--protocol", "binary", "--n", "5", "--t", "1", "--trials", "12", "--seed", "4"]
    _, a = report(base, tmp_path, "a.json")
    _, b = report([*base, "--jobs", "2"], tmp_path, "b.json")
    assert a["trials"] == b["trials"] and a["aggregates"] == b["aggregates"]


def test_config_file_merge(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# flat form\nn = 6\ntrials = 20\nseed = 9\n")
    _, r = report(["coin", "--config", str(cfg), "--n", "3"], tmp_path)
    assert r["config"]["n"] == 3  # flag wins
    assert r["config"]["trials"] == 20 and r["config"]["seed"] == 9
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"n": 5, "trials": 4}))
    _, r = report(["coin", "--config", str(js)], tmp_path)
    assert (r["config"]["n"], r["config"]["trials"]) == (5, 4)


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("colour = red\n")
    assert cli.main(["coin", "--config", str(cfg)]) == 2
    assert "colour" in capsys.readouterr().err


def test_bad_field_value_names_field(capsys):
    assert cli.main(["coin", "--trials", "0"]) == 2
    assert "trials" in capsys.readouterr().err


def test_every_flag_maps_to_a_field():
    parser = cli.build_parser()
    names = set(cli._FIELDS) | {"config"}
    for action in parser._subparsers._group_actions[0].choices["consensus"]._actions:
        if action.dest != "help":
            assert action.dest in names


def test_violation_exit_code(monkeypatch, tmp_path):
    monkeypatch.setattr(cli, "_aggregate", lambda cfg, recs: ({}, ["forced"]))
    code = cli.main(["topology", "--n", "3", "--out", str(tmp_path / "x.json")])
    assert code == 1


def test_verify_all_filter(capsys):
    assert cli.main(["verify-all", "--criteria", "3,5"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and lines[0].startswith("[PASS] 3") and lines[1].startswith("[PASS] 5")


def test_verify_all_unknown_criterion():
    with pytest.raises(SystemExit):
        cli.main(["verify-all", "--criteria", "42"])


def test_corrupt_ghz_is_caught(monkeypatch):
    def bad_ghz(n, labels=None):
        amps = np.zeros(1 << n, dtype=np.complex128)
        amps[0], amps[-1] = 0.6, 1 / np.sqrt(2)
        return StateVector([Q(i) for i in range(n)], amps, validate=False)

    monkeypatch.setattr(quantum, "make_ghz", bad_ghz)
    r = acceptance.run_criterion(1, scale=0.01)
    assert not r.passed
    assert cli.main(["verify-all", "--criteria", "1"]) == 1
