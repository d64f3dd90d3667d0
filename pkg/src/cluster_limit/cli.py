"""Config-driven command line front end.

    cluster-limit <simulate|estimate|verify|limit> --config FILE [--seed S] [--out DIR]

The config is a YAML mapping.  Every key is validated before any sampling
starts; unknown keys are rejected with a pointer to their location.

Example::

    command: verify
    seed: 20261019
    reps: 2000
    model: {kind: moving_max, m: 2, alpha: 1.0}
    plan: {n: [100000], rule: sqrt}
    canonical: {variant: compound_poisson_uniform, a: 0.5, pi: {2: 1.0}}
    checks:
      - {kind: condition_a, x: [0.2, 0.5, 0.8]}
      - {kind: laplace, panel: time, tau_abs: 0.03}
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import blocks, limits, models, verify
from ._mc import default_workers
from .measure_core import REAL_LINE, UNIT_TIME, interval, trapezoid
from .verify import ConvergenceReport, Row, emit_plotdata

COMMANDS = ("simulate", "estimate", "verify", "limit")
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


# -- validation helpers ----------------------------------------------------------

def _keys(d, allowed, where, required=()):
    if not isinstance(d, dict):
        raise ConfigError(where, "expected a mapping")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}" if where else str(k), "unknown key")
    for k in required:
        if k not in d:
            raise ConfigError(f"{where}.{k}" if where else k, "missing required key")


def _num(v, where, lo=None, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(where, "expected a number")
    if integer and int(v) != v:
        raise ConfigError(where, "expected an integer")
    if lo is not None and not v >= lo:
        raise ConfigError(where, f"must be >= {lo}")
    return int(v) if integer else float(v)


def _num_list(v, where, lo=None, integer=False):
    if not isinstance(v, list) or not v:
        v = [v] if isinstance(v, (int, float)) and not isinstance(v, bool) else None
    if v is None:
        raise ConfigError(where, "expected a number or a nonempty list")
    return [_num(x, f"{where}[{i}]", lo, integer) for i, x in enumerate(v)]


MODEL_KEYS = {"iid_pareto": {"alpha", "p"}, "moving_max": {"m", "alpha"}, "ar1": {"phi", "alpha", "burn_in"},
              "associated_linear": {"depth"}}
CHECK_KEYS = {
    "condition_a": {"x", "tau_rel"},
    "condition_b": {"x", "events", "tau_rel"},
    "laplace": {"panel", "tau_abs", "tau_rel"},
    "poisson_iid": {"x", "tau_rel"},
    "void": {"x", "rel_tol"},
}
ESTIMATOR_KEYS = {
    "extremal_index": {"target", "tol"},
    "cluster_sizes": {"target", "tol"},
    "ai_gap": {"panel", "mode", "below"},
    "association": {"m", "max_lag", "below"},
}
TOP_KEYS = {"command", "seed", "out", "workers", "reps", "model", "plan", "canonical", "checks", "estimators",
            "limit", "simulate", "tolerances"}


def _model(d, where="model"):
    _keys(d, {"kind"} | set().union(*MODEL_KEYS.values()), where, ("kind",))
    if d["kind"] not in MODEL_KEYS:
        raise ConfigError(f"{where}.kind", f"one of {sorted(MODEL_KEYS)}")
    _keys(d, {"kind"} | MODEL_KEYS[d["kind"]], where)
    try:
        return models.model_from_dict(d)
    except (TypeError, ValueError) as e:
        raise ConfigError(where, str(e)) from None


def _canonical(d, where="canonical"):
    _keys(d, {"variant", "a", "pi", "theta", "alpha", "Q"}, where, ("variant",))
    try:
        return limits.canonical_from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(where, str(e)) from None


def _plan(d, where="plan"):
    _keys(d, {"n", "rule"}, where, ("n",))
    ns = _num_list(d["n"], f"{where}.n", 1, integer=True)
    rule = d.get("rule", "sqrt")
    if not (rule in ("sqrt", "two_thirds") or (isinstance(rule, int) and not isinstance(rule, bool) and rule >= 1)):
        raise ConfigError(f"{where}.rule", "sqrt, two_thirds or a positive integer block length")
    try:
        return [blocks.block_plan(n, rule) for n in ns]
    except ValueError as e:
        raise ConfigError(where, str(e)) from None


def _panel(spec, where):
    if spec == "time":
        return verify.time_panel()
    if spec == "magnitude":
        return verify.magnitude_panel()
    if not isinstance(spec, dict) or not spec:
        raise ConfigError(where, "time, magnitude or a mapping name -> trapezoid")
    out = {}
    for name, t in spec.items():
        w = f"{where}.{name}"
        _keys(t, {"lo", "hi", "height", "ramp", "side", "space"}, w, ("lo", "hi", "height", "ramp"))
        space = {"time": UNIT_TIME, "line": REAL_LINE}.get(t.get("space", "line"))
        if space is None:
            raise ConfigError(f"{w}.space", "time or line")
        hi = math.inf if t["hi"] in ("inf", ".inf") else t["hi"]
        try:
            out[str(name)] = trapezoid(_num(t["lo"], f"{w}.lo"), _num(hi, f"{w}.hi"), _num(t["height"], f"{w}.height"),
                                       _num(t["ramp"], f"{w}.ramp"), space, t.get("side", "positive"))
        except ValueError as e:
            raise ConfigError(w, str(e)) from None
    return out


def _event(d, where):
    if not isinstance(d, dict) or len(d) != 1:
        raise ConfigError(where, "one of {count: k}, {always: true}, {count_at_least: {lo, hi, c}}")
    (k, v), = d.items()
    if k == "count":
        return limits.TotalCount(_num(v, f"{where}.count", 0, integer=True))
    if k == "always":
        return limits.Always()
    if k == "count_at_least":
        _keys(v, {"lo", "hi", "c"}, f"{where}.count_at_least", ("lo", "hi"))
        return limits.CountAtLeast(interval(_num(v["lo"], f"{where}.lo"), _num(v["hi"], f"{where}.hi")),
                                   _num(v.get("c", 1), f"{where}.c", 1, integer=True))
    raise ConfigError(f"{where}.{k}", "unknown event")


@dataclass
class ExperimentConfig:
    """Validated experiment description; ``raw`` is the normalised mapping."""

    raw: dict
    model: object = None
    plans: list = field(default_factory=list)
    canonical: object = None

    @property
    def command(self) -> str:
        return self.raw["command"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def reps(self) -> int:
        return self.raw.get("reps", 1000)

    @property
    def workers(self) -> int:
        return self.raw.get("workers", default_workers())

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def parse_config(data, seed=None, out=None, command=None) -> ExperimentConfig:
    """Validate a config mapping (or YAML text).

    ``seed``, ``out`` and ``command`` override the file; a file command that
    disagrees with ``command`` is an error.
    """
    if isinstance(data, (str, bytes)):
        try:
            data = yaml.safe_load(data)
        except yaml.YAMLError as e:
            raise ConfigError("<file>", f"not valid YAML: {e}") from None
    if not data:
        raise ConfigError("command", "empty config")
    raw = copy.deepcopy(data)
    _keys(raw, TOP_KEYS, "")
    if command is not None:
        if raw.setdefault("command", command) != command:
            raise ConfigError("command", f"config says {raw['command']!r}, invoked as {command!r}")
    if "command" not in raw:
        raise ConfigError("command", "missing required key")
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = str(out)
    if "seed" not in raw:
        raise ConfigError("seed", "a seed is required")
    raw["seed"] = _num(raw["seed"], "seed", 0, integer=True)
    if raw["command"] not in COMMANDS:
        raise ConfigError("command", f"one of {COMMANDS}")
    for k in ("reps", "workers"):
        if k in raw:
            raw[k] = _num(raw[k], k, 1, integer=True)
    cfg = ExperimentConfig(raw)
    cmd = raw["command"]
    if "model" in raw:
        cfg.model = _model(raw["model"])
    if "plan" in raw:
        cfg.plans = _plan(raw["plan"])
    if "canonical" in raw:
        cfg.canonical = _canonical(raw["canonical"])
    if "tolerances" in raw:
        _keys(raw["tolerances"], {"tau_abs", "tau_rel"}, "tolerances")
        for k, v in raw["tolerances"].items():
            _num(v, f"tolerances.{k}", 0)
    if "simulate" in raw:
        _keys(raw["simulate"], {"mode", "floor", "paths"}, "simulate")
        if raw["simulate"].get("mode", "scaled") not in ("scaled", "exceedance"):
            raise ConfigError("simulate.mode", "scaled or exceedance")
        if raw["simulate"].get("mode", "scaled") == "scaled":
            _num(raw["simulate"].get("floor"), "simulate.floor", 1e-300)
    if "limit" in raw:
        _keys(raw["limit"], {"eps", "size", "x", "panel"}, "limit", ("eps", "size"))
        _num(raw["limit"]["eps"], "limit.eps", 0)
        _num(raw["limit"]["size"], "limit.size", 1, integer=True)
        if "panel" in raw["limit"]:
            _panel(raw["limit"]["panel"], "limit.panel")
    need = {"simulate": ("model", "plan"), "estimate": ("model", "plan", "estimators"),
            "verify": ("model", "checks"), "limit": ("canonical", "limit")}[cmd]
    for k in need:
        if k not in raw:
            raise ConfigError(k, f"required for {cmd}")
    if cmd == "verify":
        _validate_checks(cfg)
    if cmd == "estimate":
        _validate_estimators(cfg)
    return cfg


def _validate_checks(cfg):
    checks = cfg.raw["checks"]
    if not isinstance(checks, list) or not checks:
        raise ConfigError("checks", "expected a nonempty list")
    for i, c in enumerate(checks):
        w = f"checks[{i}]"
        if not isinstance(c, dict) or c.get("kind") not in CHECK_KEYS:
            raise ConfigError(f"{w}.kind", f"one of {sorted(CHECK_KEYS)}")
        _keys(c, {"kind"} | CHECK_KEYS[c["kind"]], w)
        kind = c["kind"]
        if kind != "poisson_iid" and cfg.canonical is None:
            raise ConfigError("canonical", f"required by {w}")
        if kind != "laplace" and "x" not in c:
            raise ConfigError(f"{w}.x", "missing required key")
        if kind in ("condition_a", "poisson_iid", "void"):
            _num_list(c["x"], f"{w}.x", 0)
        if kind == "condition_b":
            _num(c["x"], f"{w}.x", 0)
            for j, e in enumerate(c.get("events", [])):
                _event(e, f"{w}.events[{j}]")
        if kind == "laplace":
            _panel(c.get("panel", "time"), f"{w}.panel")
        if not cfg.plans:
            raise ConfigError("plan", f"required by {w}")


def _validate_estimators(cfg):
    ests = cfg.raw["estimators"]
    if not isinstance(ests, list) or not ests:
        raise ConfigError("estimators", "expected a nonempty list")
    for i, e in enumerate(ests):
        w = f"estimators[{i}]"
        if not isinstance(e, dict) or e.get("kind") not in ESTIMATOR_KEYS:
            raise ConfigError(f"{w}.kind", f"one of {sorted(ESTIMATOR_KEYS)}")
        _keys(e, {"kind"} | ESTIMATOR_KEYS[e["kind"]], w)
        if e["kind"] == "ai_gap":
            _panel(e.get("panel", "time"), f"{w}.panel")


# -- commands -----------------------------------------------------------------------------

def _tol(cfg, check, key, default):
    return check.get(key, cfg.raw.get("tolerances", {}).get(key, default))


def _run_verify(cfg) -> list[ConvergenceReport]:
    reports = []
    m, c, S, R, W = cfg.model, cfg.canonical, cfg.seed, cfg.reps, cfg.workers
    for i, ch in enumerate(cfg.raw["checks"]):
        seed = (S, i)
        kind = ch["kind"]
        if kind == "condition_a":
            r = verify.check_condition_a(m, c, cfg.plans, _num_list(ch["x"], "x"), R, seed,
                                         tau_rel=_tol(cfg, ch, "tau_rel", verify.TAU_REL), workers=W)
        elif kind == "condition_b":
            x = float(ch["x"])
            events = ([_event(e, "") for e in ch["events"]] if "events" in ch
                      else verify.default_events(0.5 * (1 + x) if c.space.bounded else 2 * x))
            rows = [verify.check_condition_b(m, c, p, x, events, R, seed, _tol(cfg, ch, "tau_rel", verify.TAU_REL), W)
                    for p in cfg.plans]
            r = rows[0]
            for extra in rows[1:]:
                r.rows.extend(extra.rows)
        elif kind == "laplace":
            r = verify.check_laplace(m, c, _panel(ch.get("panel", "time"), ""), cfg.plans, R, seed,
                                     tau_abs=_tol(cfg, ch, "tau_abs", verify.TAU_ABS),
                                     tau_rel=_tol(cfg, ch, "tau_rel", verify.TAU_REL), workers=W)
        elif kind == "poisson_iid":
            r = verify.check_poisson_iid(m, cfg.plans, _num_list(ch["x"], "x"), R, seed,
                                         _tol(cfg, ch, "tau_rel", verify.TAU_REL), workers=W)
        else:
            r = verify.check_void(m, c, cfg.plans[0].n, _num_list(ch["x"], "x"), R, seed, ch.get("rel_tol", 0.05), W)
        reports.append(r)
    return reports


def _run_estimate(cfg) -> list[ConvergenceReport]:
    m, S, R, W = cfg.model, cfg.seed, cfg.reps, cfg.workers
    reports = []
    for i, e in enumerate(cfg.raw["estimators"]):
        seed = (S, i)
        kind = e["kind"]
        rep = ConvergenceReport(kind, metadata={"seed": S, "reps": R, "model": m.to_dict()})
        tgt = e.get("target")
        rule = "ci" if tgt is not None else "info"
        tol = float(e.get("tol", 0.0))
        if kind == "extremal_index":
            for row in blocks.extremal_index(m, cfg.plans, R, seed, workers=W):
                est = row.estimate
                rep.add(Row(kind, row.n, f"r={row.r}", est.value, est.lo, est.hi,
                            float(tgt) if tgt is not None else math.nan, rule, tol))
        elif kind == "cluster_sizes":
            for p in cfg.plans:
                sizes = blocks.cluster_sizes(m, p, R, seed, W)
                rep.metadata[f"sizes_n{p.n}"] = sizes.probs
                if tgt is not None:
                    tv = verify.tv_distance(sizes, tgt if isinstance(tgt, dict) else {int(tgt): 1.0})
                    rep.add(Row(kind, p.n, "tv", tv, tv, tv, tol or 0.1, "below"))
                else:
                    for k, v in sorted(sizes.probs.items()):
                        rep.add(Row(kind, p.n, f"k={k}", v, v, v, math.nan, "info"))
        elif kind == "ai_gap":
            panel = _panel(e.get("panel", "time"), "")
            for p in cfg.plans:
                for name, f in panel.items():
                    g = blocks.ai_gap(m, p, f, R, seed, e.get("mode", "scaled"), W)
                    below = e.get("below")
                    rep.add(Row(kind, p.n, name, g.value, g.lo, g.hi,
                                float(below) if below is not None else math.nan,
                                "below" if below is not None else "info"))
        else:
            for p in cfg.plans:
                a = models.assoc_covariance_bound(m, p.n, int(e.get("m", 5)), R, seed, e.get("max_lag"))
                below = e.get("below")
                est = a.estimate
                rep.add(Row(kind, p.n, f"m={e.get('m', 5)}", est.value, est.lo, est.hi,
                            float(below) if below is not None else math.nan,
                            "below" if below is not None else "info"))
        reports.append(rep)
    return reports


def _paths_csv(model, n, reps, seed) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["replicate", "j", "value"])
    for r in range(reps):
        xi = models.sample_path(model, n, (seed, r))
        for j, v in enumerate(xi, 1):
            w.writerow([r, j, repr(float(v))])
    return buf.getvalue()


def _run_limit(cfg, out: Path) -> list[ConvergenceReport]:
    spec = cfg.raw["limit"]
    c, eps, size = cfg.canonical, float(spec["eps"]), int(spec["size"])
    s = limits.sample_many(c, eps, size, cfg.seed)
    samples = [json.loads(s.measure(i).to_json()) for i in range(size)]
    (out / "samples.json").write_text(json.dumps({"canonical": c.to_dict(), "eps": eps, "seed": cfg.seed,
                                                   "samples": samples}, sort_keys=True))
    if "panel" not in spec and "x" not in spec:
        return []
    panel = _panel(spec["panel"], "") if "panel" in spec else {}
    return [verify.check_sampler(c, panel, eps, size, cfg.seed, _num_list(spec.get("x", []) or [], "x")
                                 if spec.get("x") else ())]


def _write_reports(reports, out: Path):
    doc = {"global_pass": all(r.passed for r in reports), "reports": [r.to_dict() for r in reports]}
    (out / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=2, default=verify._jsonable) + "\n")
    merged = ConvergenceReport("all", [row for r in reports for row in r.rows])
    with open(out / "plotdata.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(emit_plotdata(merged))
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("".join(r.to_csv() if i == 0 else r.to_csv().split("\r\n", 1)[1]
                         for i, r in enumerate(reports)))


def run(cfg: ExperimentConfig) -> int:
    out = Path(cfg.raw.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    cmd = cfg.command
    reports: list[ConvergenceReport] = []
    if cmd == "simulate":
        spec = cfg.raw.get("simulate", {})
        mode = spec.get("mode", "scaled")
        plan = cfg.plans[0]
        if spec.get("paths", True):
            with open(out / "paths.csv", "w", newline="", encoding="utf-8") as fh:
                fh.write(_paths_csv(cfg.model, plan.n, cfg.reps, cfg.seed))
        bs = blocks.simulate_blocks(cfg.model, plan, mode, cfg.reps, cfg.seed, spec.get("floor"), cfg.workers)
        with open(out / "blocks.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write(bs.summaries_csv())
        print(f"simulate: {cfg.reps} replicates of n={plan.n} written to {out}")
        return EXIT_PASS
    if cmd == "verify":
        reports = _run_verify(cfg)
    elif cmd == "estimate":
        reports = _run_estimate(cfg)
    else:
        reports = _run_limit(cfg, out)
    _write_reports(reports, out)
    for r in reports:
        for line in r.summary_lines():
            print(line)
    ok = all(r.passed for r in reports)
    print(f"{'PASS' if ok else 'FAIL'} {cmd}: {sum(len(r.rows) for r in reports)} rows")
    return EXIT_PASS if ok else EXIT_FAIL


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="cluster-limit", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args(argv)
    try:
        text = args.config.read_bytes()
        cfg = parse_config(text, args.seed, args.out, args.command)
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"config error at {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
