import json
import shutil
from pathlib import Path

import pytest
import yaml

from cluster_limit import cli
from cluster_limit.cli import ConfigError, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _run(tmp_path, cfg: dict, command=None, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return cli.main([command or cfg.get("command", "verify"), "--config", str(p), "--out", str(tmp_path / "out")])


def test_empty_config_exit_2(tmp_path, capsys):
    p = tmp_path / "e.yaml"
    p.write_text("")
    assert cli.main(["verify", "--config", str(p)]) == 2


def test_unknown_key_points_at_it(capsys):
    with pytest.raises(ConfigError) as e:
        parse_config({"command": "verify", "seed": 1, "model": {"kind": "moving_max", "m": 2, "beta": 1}})
    assert e.value.key == "model.beta"
    with pytest.raises(ConfigError) as e:
        parse_config({"command": "verify", "seed": 1, "model": {"kind": "moving_max"}, "plan": {"n": [100]},
                      "canonical": {"variant": "compound_poisson_uniform", "a": 0.5, "pi": [1.0]},
                      "checks": [{"kind": "condition_a", "xs": [1]}]})
    assert e.value.key == "checks[0].xs"


def test_seed_required():
    with pytest.raises(ConfigError) as e:
        parse_config({"command": "limit"})
    assert e.value.key == "seed"


def test_command_mismatch_exit_2(tmp_path):
    assert _run(tmp_path, {"command": "limit", "seed": 1}, command="verify") == 2


def test_config_round_trip():
    text = (CONFIGS / "mm2_compound_poisson.yaml").read_text()
    a = parse_config(text)
    b = parse_config(a.dump())
    assert a.raw == b.raw and a.dump() == b.dump()


def test_verify_acceptance_config_and_determinism(tmp_path):
    cfg = str(CONFIGS / "mm2_compound_poisson.yaml")
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["verify", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(["verify", "--config", cfg, "--out", str(out2)]) == 0
    r1 = (out1 / "report.json").read_bytes()
    assert r1 == (out2 / "report.json").read_bytes()
    doc = json.loads(r1)
    assert doc["global_pass"] is True
    rows = sum(len(r["rows"]) for r in doc["reports"])
    plot = (out1 / "plotdata.csv").read_text().strip().splitlines()
    assert len(plot) == rows + 1


def test_workers_do_not_change_report(tmp_path):
    base = yaml.safe_load((CONFIGS / "mm2_compound_poisson.yaml").read_text())
    base["reps"] = 300
    base["model"] = {"kind": "ar1", "phi": 0.5, "alpha": 1.0}
    base["canonical"] = {"variant": "regvar_cluster", "theta": 0.5, "alpha": 1.0, "Q": {"kind": "signed_single"}}
    base["plan"] = {"n": [2000]}
    base["checks"] = [{"kind": "condition_a", "x": [1.0, 2.0]}]
    outs = []
    for w in (1, 3):
        cfg = dict(base, workers=w)
        d = tmp_path / f"w{w}"
        d.mkdir()
        _run(d, cfg)
        outs.append((d / "out" / "report.json").read_bytes())
    assert outs[0] == outs[1]


def test_failing_check_exit_1(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "mm2_compound_poisson.yaml").read_text())
    cfg["canonical"]["a"] = 1.0
    cfg["checks"] = cfg["checks"][:1]
    assert _run(tmp_path, cfg) == 1


def test_simulate_writes_csv(tmp_path):
    shutil.copy(CONFIGS / "simulate.yaml", tmp_path / "s.yaml")
    assert cli.main(["simulate", "--config", str(tmp_path / "s.yaml"), "--out", str(tmp_path / "o")]) == 0
    paths = (tmp_path / "o" / "paths.csv").read_text().splitlines()
    assert paths[0] == "replicate,j,value" and len(paths) == 1 + 3 * 1000
    assert (tmp_path / "o" / "blocks.csv").exists()


def test_limit_and_estimate(tmp_path):
    assert cli.main(["limit", "--config", str(CONFIGS / "limit_sample.yaml"), "--out", str(tmp_path / "l")]) == 0
    s = json.loads((tmp_path / "l" / "samples.json").read_text())
    assert len(s["samples"]) == 20000 and set(s["samples"][0]) == {"space", "atoms"}
    assert cli.main(["estimate", "--config", str(CONFIGS / "mm2_estimate.yaml"), "--seed", "3",
                     "--out", str(tmp_path / "e")]) == 0
