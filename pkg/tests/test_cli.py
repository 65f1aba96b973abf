import json
import os

import pytest

from wignergaps import cli

MINIMAL = {"kind": "spectrum", "ensemble": "goe", "n_values": [100], "n_trials": 1, "base_seed": 7}


def _write(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _files(out):
    res = {}
    for root, _, names in os.walk(out):
        for n in names:
            path = os.path.join(root, n)
            res[os.path.relpath(path, out)] = open(path, "rb").read()
    return res


def test_minimal_spectrum_run(tmp_path, monkeypatch):
    monkeypatch.delenv("WIGNER_GAPS_OUT", raising=False)
    out = tmp_path / "out"
    code = cli.main(["spectrum", "--config", _write(tmp_path, MINIMAL), "--out-dir", str(out)])
    assert code == 0
    rows = (out / "spectra" / "spectrum_n100_trial00000.csv").read_text().splitlines()
    assert rows[0] == "index,lambda,evec_supnorm"
    lam = [float(r.split(",")[1]) for r in rows[1:]]
    assert len(lam) == 100 and lam == sorted(lam)
    manifest = json.loads((out / "manifest.json").read_text())
    on_disk = set(_files(out)) - {"manifest.json"}
    assert set(manifest["files"]) == on_disk
    assert manifest["exit_code"] == 0 and manifest["base_seed"] == 7


def _strip_times(files):
    m = json.loads(files["manifest.json"])
    for k in ("started", "finished"):
        m.pop(k)
    files["manifest.json"] = m
    return files


def test_rerun_is_byte_identical_across_workers(tmp_path, monkeypatch):
    monkeypatch.delenv("WIGNER_GAPS_OUT", raising=False)
    cfg = dict(MINIMAL, n_values=[40, 60], n_trials=4)
    path = _write(tmp_path, cfg)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["spectrum", "--config", path, "--out-dir", str(a)]) == 0
    assert cli.main(["spectrum", "--config", path, "--out-dir", str(b), "--workers", "4"]) == 0
    assert _strip_times(_files(a)) == _strip_times(_files(b))


def test_malformed_json_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"kind": "spectrum",\n "n_values": [100,]}')
    assert cli.main(["spectrum", "--config", str(p)]) == 2
    assert "line 2, column" in capsys.readouterr().err


def test_invalid_config_exits_2(tmp_path):
    assert cli.main(["spectrum", "--config", _write(tmp_path, dict(MINIMAL, n_trials=0))]) == 2
    assert cli.main(["gaps", "--config", _write(tmp_path, MINIMAL)]) == 2


def test_compare_gate_exits_4_before_sampling(tmp_path, monkeypatch):
    monkeypatch.delenv("WIGNER_GAPS_OUT", raising=False)
    cfg = {"kind": "four_moment", "ensemble": "gue", "ensemble_b": "gue_rademacher", "n_values": [50], "n_trials": 3}
    out = tmp_path / "out"
    assert cli.main(["compare", "--config", _write(tmp_path, cfg), "--out-dir", str(out)]) == 4
    assert not (out / "records.ndjson").exists()


def test_flow_gate_exits_4_unless_overridden(tmp_path, monkeypatch):
    monkeypatch.delenv("WIGNER_GAPS_OUT", raising=False)
    cfg = {"kind": "flow", "ensemble": "goe", "n_values": [50], "n_trials": 2, "params": {"t": 0.9}}
    path = _write(tmp_path, cfg)
    assert cli.main(["flow", "--config", path, "--out-dir", str(tmp_path / "o1")]) == 4
    assert cli.main(["flow", "--config", path, "--out-dir", str(tmp_path / "o2"), "--override-gates"]) == 0
    assert (tmp_path / "o2" / "flow.csv").read_text().startswith("n,count,ks,")


def test_env_var_overrides_out_dir(tmp_path, monkeypatch):
    env_out = tmp_path / "env"
    monkeypatch.setenv("WIGNER_GAPS_OUT", str(env_out))
    cfg = dict(MINIMAL, n_values=[30])
    assert cli.main(["spectrum", "--config", _write(tmp_path, cfg), "--out-dir", str(tmp_path / "flag")]) == 0
    assert (env_out / "manifest.json").exists()
    assert not (tmp_path / "flag").exists()


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    monkeypatch.delenv("WIGNER_GAPS_OUT", raising=False)
    from wignergaps import experiments as ex
    import numpy as np

    def boom(cfg, n, trial):
        raise np.linalg.LinAlgError("no convergence")

    monkeypatch.setitem(ex._TRIALS, "gaps", boom)
    cfg = {"kind": "gaps", "ensemble": "goe", "n_values": [30], "n_trials": 2}
    out = tmp_path / "out"
    assert cli.main(["gaps", "--config", _write(tmp_path, cfg), "--out-dir", str(out)]) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 3 and "records.ndjson" in manifest["files"]


def test_universality_writes_summary_per_n(tmp_path, monkeypatch):
    monkeypatch.delenv("WIGNER_GAPS_OUT", raising=False)
    cfg = {
        "kind": "universality",
        "ensemble": "gue",
        "n_values": [40, 60],
        "n_trials": 5,
        "selector": {"mode": "interval", "a": -1.0, "b": 1.0},
    }
    out = tmp_path / "out"
    assert cli.main(["universality", "--config", _write(tmp_path, cfg), "--out-dir", str(out)]) == 0
    rows = (out / "universality.csv").read_text().splitlines()
    assert rows[0] == "n,count,scaled_mean,scaled_sd" and len(rows) == 3


def test_seed_flag_and_version(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("WIGNER_GAPS_OUT", raising=False)
    out = tmp_path / "out"
    assert cli.main(["spectrum", "--config", _write(tmp_path, MINIMAL), "--out-dir", str(out), "--seed", "11"]) == 0
    assert json.loads((out / "manifest.json").read_text())["base_seed"] == 11
    with pytest.raises(SystemExit):
        cli.main(["--version"])
    assert "wigner-gaps" in capsys.readouterr().out
