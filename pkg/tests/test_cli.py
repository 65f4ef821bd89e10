import json

import pytest

from bgvlab.cli import main


def _json(tmp_path, argv, name="r.json"):
    out = tmp_path / name
    code = main(argv + ["--out", str(out), "--format", "json"])
    return code, json.loads(out.read_text())


def test_estimate_reference_rows(tmp_path, capsys):
    code = main(["estimate", "--n", "8192", "--t", "65537", "--depth", "3"])
    text = capsys.readouterr().out
    assert code == 0
    for v in ("48.76", "40.84", "95.68"):
        assert v in text
    code, rep = _json(tmp_path, ["estimate", "--n", "8192", "--depth", "3"])
    assert rep["table"]["enc[0]"] == pytest.approx(48.76, abs=0.01)
    assert {"seed", "version", "fingerprint", "request"} <= set(rep)


def test_estimate_depth_zero_and_no_ms(tmp_path):
    _, rep = _json(tmp_path, ["estimate", "--n", "8192", "--depth", "0"])
    assert set(rep["table"]) == {"enc[0]", "final_ms"}
    _, rep = _json(tmp_path, ["estimate", "--n", "8192", "--depth", "3", "--ms-policy", "none"])
    assert rep["regime"] == "non_gaussian_fallback"
    assert rep["table"]["mult3[0]"] > 400


def test_invalid_flags_are_explained():
    with pytest.raises(SystemExit, match="1 mod 2n"):
        main(["estimate", "--n", "100"])
    with pytest.raises(SystemExit, match="--secret"):
        main(["estimate", "--n", "8192", "--secret", "binary"])
    with pytest.raises(SystemExit, match="trials"):
        main(["simulate", "--n", "256", "--trials", "10"])
    with pytest.raises(SystemExit, match="empty --grid"):
        main(["compare", "--grid", ""])


def test_simulate_is_reproducible(tmp_path):
    argv = ["simulate", "--n", "256", "--depth", "1", "--trials", "40", "--seed", "42"]
    main(argv + ["--csv", str(tmp_path / "a.csv"), "--out", str(tmp_path / "a.json")])
    main(argv + ["--csv", str(tmp_path / "b.csv"), "--out", str(tmp_path / "b.json")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rep = json.loads((tmp_path / "a.json").read_text())
    assert rep["seed"] == 42 and rep["failures"] == 0
    assert set(rep["probes"]) == {"enc[0]", "ms1[0]", "mult1[0]", "final_ms"}
    code, g = _json(tmp_path, ["gaussianity", str(tmp_path / "a.csv")], "g.json")
    assert code == 0 and g["reports"]["enc[0]"]["count"] == 40
    code, c = _json(tmp_path, ["compare", "--n", "256", "--simulation", str(tmp_path / "a.json")], "c.json")
    assert len(c["empirical_join"]) == 4


def test_select_params(tmp_path):
    code, rep = _json(tmp_path, ["select-params", "--depth", "3", "--n", "8192", "--D", "8"])
    p = rep["plan"]
    assert p["theoretical_total"] == pytest.approx(124.5, abs=1)
    # the realized chain overshoots by far more than 2 bits, which is an alarm
    assert code == 1 and rep["alarms"]
    _, worst = _json(tmp_path, ["select-params", "--depth", "3", "--n", "8192", "--mode", "worst-case"], "w.json")
    assert worst["plan"]["theoretical_total"] > p["theoretical_total"]
    _, big = _json(tmp_path, ["select-params", "--depth", "6", "--n", "32768"], "b.json")
    assert big["plan"]["theoretical_total"] == pytest.approx(229.8, abs=1)


def test_compare_grid(tmp_path):
    code, rep = _json(tmp_path, ["compare", "--grid", "4096,8192,16384,32768"])
    assert code == 0
    assert [round(r["log2_p"], 2) for r in rep["prime_ratio"]] == [29.55, 30.55, 31.55, 32.55]
    assert all(r["pass"] for r in rep["table1"] if r["pass"] is not None)


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("n = 16384\ndepth = 1\n")
    _, rep = _json(tmp_path, ["estimate", "--config", str(cfg)])
    assert rep["request"]["n"] == 16384 and rep["request"]["M"] == 1
    _, rep = _json(tmp_path, ["estimate", "--config", str(cfg), "--n", "8192"], "r2.json")
    assert rep["request"]["n"] == 8192
