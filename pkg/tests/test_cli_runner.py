import csv
import json
import math
from pathlib import Path

import pytest

from ergolab import cli_runner
from ergolab.cli_runner import (
    EXIT_COMPUTE,
    EXIT_FAIL,
    EXIT_PASS,
    EXIT_SCHEMA,
    ConfigError,
    config_hash,
    load_config,
    main,
    rate_table,
    run_experiment,
    validate_config,
)

BUNDLED = Path(cli_runner.__file__).parent / "configs" / "circle-t4.toml"


def _small(tmp_path, **kw):
    cfg = {"kind": "moment", "t_list": [1.0, 2.0], "replicas": 6, "h": 0.01, "n_max": 64, "seed": 7,
           "output": str(tmp_path / "out")}
    cfg.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_bundled_config_validates_and_targets_circle_constant():
    cfg = load_config(BUNDLED)
    assert cfg.kind == "moment" and cfg.replicas == 400 and cfg.t_list == [100.0, 200.0]
    from ergolab.model_spaces import space_from_dict
    from ergolab.spectral_oracles import basis_for, limit_t4

    lim = limit_t4(basis_for(space_from_dict(cfg.space), cfg.n_max))
    assert lim.value == pytest.approx(2 * math.pi**4 / 45, rel=1e-5)
    assert main(["validate", str(BUNDLED)]) == EXIT_PASS


@pytest.mark.parametrize("bad", [
    {"replicas": 0},
    {"h": -1e-3},
    {"t_list": [2.0, 1.0]},
    {"t_list": []},
    {"unknown_key": 1},
    {"kind": "nonsense"},
    {"replicas": 2.5},
    {"space": {"kind": "sphere"}},
    {"dynamics": {"kind": "levy"}},
    {"kind": "qsd"},
    {"kind": "bounds-audit", "space": {"kind": "torus", "dim": 2}},
])
def test_schema_errors_exit_2(tmp_path, bad, capsys):
    path = _small(tmp_path, **bad)
    assert main(["run", str(path)]) == EXIT_SCHEMA
    assert "config error" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unreadable_and_unparseable_configs(tmp_path):
    assert main(["validate", str(tmp_path / "missing.toml")]) == EXIT_SCHEMA
    bad = tmp_path / "bad.toml"
    bad.write_text("kind = \n")
    assert main(["validate", str(bad)]) == EXIT_SCHEMA
    yaml = tmp_path / "cfg.yaml"
    yaml.write_text("kind: moment\n")
    assert main(["validate", str(yaml)]) == EXIT_SCHEMA


def test_validate_config_coerces_types():
    cfg = validate_config({"kind": "moment", "replicas": 10.0, "t_list": [1, 2], "p": 2})
    assert isinstance(cfg.replicas, int) and cfg.t_list == [1.0, 2.0] and isinstance(cfg.p, float)
    with pytest.raises(ConfigError):
        validate_config({"replicas": 3})


def test_qsd_replicas_default_to_auto_sizing():
    sp = {"kind": "interval", "length": math.pi, "boundary": "dirichlet"}
    assert validate_config({"kind": "qsd", "space": sp}).replicas is None
    assert validate_config({"kind": "qsd", "space": sp, "replicas": 50}).replicas == 50
    with pytest.raises(ConfigError):
        validate_config({"kind": "moment", "replicas": None})


def test_config_hash_stable_and_sensitive():
    a = validate_config({"kind": "moment"})
    b = validate_config({"kind": "moment"})
    c = validate_config({"kind": "moment", "seed": 1})
    assert config_hash(a) == config_hash(b) != config_hash(c)


def test_run_writes_outputs(tmp_path):
    path = _small(tmp_path)
    code = main(["run", str(path)])
    out = tmp_path / "out"
    assert code in (EXIT_PASS, EXIT_FAIL)
    rep = json.loads((out / "report.json").read_text())
    man = json.loads((out / "manifest.json").read_text())
    assert rep["kind"] == "moment" and "runtime" not in rep
    assert man["config_hash"] == config_hash(load_config(path))
    assert {"seed", "version", "python", "numpy", "started", "finished", "runtime_seconds", "verdict"} <= set(man)
    assert man["verdict"] == rep["verdict"]
    with open(out / "series.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "estimate", "ci_low", "ci_high", "target", "ratio", "verdict"]
    assert [float(r[0]) for r in rows[1:]] == [1.0, 2.0]
    dat = (out / "series.dat").read_text().splitlines()
    assert dat[0].startswith("#") and len(dat) == 3
    assert code == (EXIT_FAIL if rep["verdict"] == "fail" else EXIT_PASS)


def test_report_is_byte_identical_across_runs(tmp_path):
    path = _small(tmp_path)
    main(["run", str(path), "-o", str(tmp_path / "a")])
    main(["run", str(path), "-o", str(tmp_path / "b")])
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_manifest_config_reruns_identically(tmp_path):
    path = _small(tmp_path)
    main(["run", str(path), "-o", str(tmp_path / "a")])
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    cfg2 = dict(man["config"], output=str(tmp_path / "b"))
    p2 = tmp_path / "rerun.json"
    p2.write_text(json.dumps(cfg2))
    main(["run", str(p2)])
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_compute_error_exit_3(tmp_path, monkeypatch, capsys):
    def boom(cfg):
        raise FloatingPointError("overflow in replica 0")

    monkeypatch.setattr(cli_runner, "run_experiment", boom)
    assert main(["run", str(_small(tmp_path))]) == EXIT_COMPUTE
    assert "compute error" in capsys.readouterr().err


def test_fail_verdict_exit_1(tmp_path, monkeypatch):
    real = cli_runner.run_experiment

    def failing(cfg):
        rep = real(cfg)
        rep.verdict = "fail"
        return rep

    monkeypatch.setattr(cli_runner, "run_experiment", failing)
    assert main(["run", str(_small(tmp_path))]) == EXIT_FAIL


def test_rate_table_examples():
    rows = list(csv.reader(rate_table("xi_k", {"K": 1.5}, [4, 16, 64]).splitlines()))
    assert rows[0] == ["t", "envelope"]
    assert [float(r[1]) for r in rows[1:]] == pytest.approx([0.5, 0.25, 0.125])
    t5 = float(rate_table("t5", {"d": 4}, [math.e - 1]).splitlines()[1].split(",")[1])
    assert t5 == pytest.approx(1 / (math.e - 1), rel=1e-12)
    cv = float(rate_table("cv51", {"l": 6, "p": 4}, [16]).splitlines()[1].split(",")[1])
    assert cv == pytest.approx(0.3299, abs=1e-4)


def test_rate_table_command(tmp_path, capsys):
    assert main(["rate-table", "--kind", "t5", "--param", "d=4", "--t", "2", "3"]) == EXIT_PASS
    assert capsys.readouterr().out.startswith("t,envelope\n2.0,")
    out = tmp_path / "rt.csv"
    assert main(["rate-table", "--kind", "gamma_d", "--param", "d=3", "--t", "5", "-o", str(out)]) == EXIT_PASS
    assert out.read_text().count("\n") == 2
    assert main(["rate-table", "--kind", "xi_k", "--t", "2"]) == EXIT_SCHEMA
    assert main(["rate-table", "--kind", "xi_k", "--param", "K", "--t", "2"]) == EXIT_SCHEMA


def test_rate_table_config_kind(tmp_path):
    path = tmp_path / "rt.json"
    path.write_text(json.dumps({"kind": "rate-table", "rate_kind": "xi_k", "rate_params": {"K": 0.5},
                                "t_list": [2, 4], "output": str(tmp_path / "rt")}))
    assert main(["run", str(path)]) == EXIT_PASS
    assert (tmp_path / "rt" / "rate_table.csv").read_text().splitlines()[1] == "2.0,0.5"


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == EXIT_PASS
    out = capsys.readouterr().out
    for k in ("moment", "qsd", "limit-law", "clt", "lb-consistency", "bounds-audit"):
        assert k in out
    assert "circle-t4.toml" in out


def test_small_runs_of_each_kind():
    base = {"replicas": 4, "h": 0.01, "n_max": 64, "seed": 2}
    cases = [
        {"kind": "qsd", "space": {"kind": "interval", "length": math.pi, "boundary": "dirichlet"}, "t_list": [0.5]},
        {"kind": "limit-law", "t_list": [2.0], "n_modes": 16},
        {"kind": "clt", "t_list": [2.0]},
        {"kind": "lb-consistency", "t_list": [2.0], "N_list": [1, 10]},
        {"kind": "bounds-audit", "n_pairs": 3, "grid": 256},
    ]
    for c in cases:
        rep = run_experiment(validate_config({**base, **c}))
        assert rep.verdict in ("pass", "fail", "inconclusive")
        json.dumps(cli_runner._jsonable(rep.to_dict()))
