"""Command-line front end.

Exit codes: 0 success, 1 case or input parse error, 2 infeasible problem,
3 solver failure, 64 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from ._toml import loads as toml_loads
from .attack import AttackSpec, AttackSpecError
from .attack.loop import run_attack_loop
from .attack.study import PAPER_LS_GRID, PAPER_N1_GRID, critical_targets, sweep_study
from .ems import EmsParams, ems_step, run_rtca, sced_lp_text
from .estimation import UnobservableError, measure
from .grid import CaseError, CaseSyntaxError, load_case, parse_case, serialize_case, summarize
from .lp import INFEASIBLE
from .sensitivity import IslandingError, build_sensitivities, injection, solve_dc_flow

EXIT_OK, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2, 3, 64
OUT_ENV = "GRIDATTACK_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def bundled_cases() -> list[str]:
    root = resources.files("gridattack") / "cases"
    return sorted(p.name for p in root.iterdir() if p.name.endswith((".case", ".toml")))


def resolve(path: str, base: Path | None = None) -> Path:
    """A file path, else a path relative to ``base``, else a bundled case or config."""
    p = Path(path)
    if p.is_file():
        return p
    if base is not None and (base / p).is_file():
        return base / p
    root = resources.files("gridattack") / "cases"
    for cand in (path, path + ".case", path + ".toml"):
        bundled = root / cand
        if bundled.is_file():
            return Path(str(bundled))
    raise UsageError(f"no such case or config: {path}")


@dataclass
class RunConfig:
    case: Path | None = None
    out_dir: Path = Path(".")
    format: str = "json"
    ems: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    source: str = ""

    @classmethod
    def from_toml(cls, path: Path) -> "RunConfig":
        try:
            data = toml_loads(path.read_text(encoding="utf-8"))
        except Exception as exc:
            raise CaseError(f"{path}: {exc}") from exc
        cfg = cls(source=str(path))
        if "case" in data:
            cfg.case = resolve(data["case"], path.parent)
        if "out_dir" in data:
            cfg.out_dir = Path(data["out_dir"])
        cfg.format = data.get("format", cfg.format)
        for sec in ("ems", "attack", "sweep"):
            setattr(cfg, sec, dict(data.get(sec, {})))
        return cfg


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    parts = [p for p in str(text).replace(",", " ").split() if p]
    if len(parts) == 1 and ":" in parts[0]:
        lo, step, hi = (float(v) for v in parts[0].split(":"))
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + i * step, 12) for i in range(n)]
    return [float(p) for p in parts]


def _params(cfg: RunConfig, args) -> EmsParams:
    e = dict(cfg.ems)
    if getattr(args, "tau", None) is not None:
        e["tau"] = args.tau
    if getattr(args, "tau_base", None) is not None:
        e["tau_base"] = args.tau_base
    tau = float(e.get("tau", 0.9))
    tau_base = e.get("tau_base")
    if not 0.0 <= tau <= 1.0 or (tau_base is not None and not 0.0 <= float(tau_base) <= 1.0):
        raise UsageError("tau and tau_base must lie in [0, 1]")
    known = {"tau", "tau_base", "shortterm_factor", "look_ahead_min", "reserve_time_min", "kv_floor",
             "bdd_confidence", "ctg_false_load_term", "noise_seed"}
    bad = set(e) - known
    if bad:
        raise UsageError(f"unknown [ems] keys: {sorted(bad)}")
    kw = {k: v for k, v in e.items() if k in known and k != "noise_seed"}
    kw["tau"] = tau
    return EmsParams(**kw)


def _config(args) -> RunConfig:
    cfg = RunConfig.from_toml(resolve(args.config)) if args.config else RunConfig()
    if args.case:
        cfg.case = resolve(args.case)
    if cfg.case is None:
        raise UsageError("no case given (positional CASE or 'case' in the config file)")
    if args.out:
        cfg.out_dir = Path(args.out)
    elif not args.config or "out_dir" not in toml_loads(resolve(args.config).read_text()):
        cfg.out_dir = Path(os.environ.get(OUT_ENV, "."))
    if getattr(args, "format", None):
        cfg.format = args.format
    if cfg.format not in ("json", "csv"):
        raise UsageError("format must be json or csv")
    return cfg


def _write(cfg: RunConfig, name: str, text: str) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / name
    path.write_text(text, encoding="utf-8")
    return path


def _echo(cfg: RunConfig, extra: dict) -> list[str]:
    lines = [f"# gridattack {__version__}", f"# case: {cfg.case.name}"]
    lines += [f"# {k}: {v}" for k, v in extra.items()]
    return lines


# ---------------------------------------------------------------------------

def cmd_ems(args) -> int:
    cfg = _config(args)
    case = load_case(cfg.case)
    params = _params(cfg, args)
    seed = int(args.noise_seed if args.noise_seed is not None else cfg.ems.get("noise_seed", 0))
    sens = build_sensitivities(case)
    point = solve_dc_flow(case, injection(case, case.dispatch0(), case.loads()))
    step = ems_step(case, measure(case, point.flows, point.angles, seed), case.dispatch0(), params, sens)
    if args.emit_lp:
        Path(args.emit_lp).write_text(sced_lp_text(case, step.loads, sens, step.scs, case.dispatch0(),
                                                   params), encoding="utf-8")
    crit = [{"branch": c.branch, "contingency": None, "ratio": c.ratio} for c in step.scs.base_critical]
    crit += [{"branch": c.branch, "contingency": c.contingency, "ratio": c.ratio}
             for c in step.scs.ctg_critical]
    report = {
        "case": case.name,
        "params": {"tau": params.tau, "tau_base": params.base_threshold, "noise_seed": seed},
        "state_estimation": {"J": step.state.J, "threshold": step.state.threshold,
                             "dof": step.state.dof, "bdd_alarm": step.bdd_alarm},
        "estimated_loads_pu": [float(v) for v in step.loads],
        "security_constraints": step.scs.to_dict(),
        "critical": crit,
        "dispatch": step.dispatch.to_dict(case),
    }
    if cfg.format == "json":
        path = _write(cfg, "ems_report.json", json.dumps(report, indent=1) + "\n")
    else:
        buf = io.StringIO()
        buf.write("\n".join(_echo(cfg, {"tau": params.tau, "ratio": "flow / limit"})) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["branch", "contingency", "ratio"])
        for c in crit:
            w.writerow([c["branch"], c["contingency"] or "", f"{c['ratio']:.6f}"])
        path = _write(cfg, "ems_critical.csv", buf.getvalue())
        _write(cfg, "ems_report.json", json.dumps(report, indent=1) + "\n")
    print(f"{case.name}: SCED {step.dispatch.status}, {len(crit)} critical, report {path}")
    if not step.dispatch.ok:
        for name, v in step.dispatch.infeasibility[:10]:
            print(f"  violated {name} by {v:.6g} pu", file=sys.stderr)
        return EXIT_INFEASIBLE if step.dispatch.status == INFEASIBLE else EXIT_SOLVER
    return EXIT_OK


def _attack_base(cfg: RunConfig, args) -> dict:
    a = dict(cfg.attack)
    if args.spec:
        p = resolve(args.spec)
        text = p.read_text(encoding="utf-8")
        a.update((AttackSpec.from_json(text) if p.suffix == ".json" else AttackSpec.from_toml(text)).to_dict())
    for flag, key in (("target", "target_branch"), ("contingency", "target_contingency"),
                      ("ls", "L_S"), ("sigma", "sigma"), ("big_m", "big_m"), ("response", "response_model")):
        v = getattr(args, flag, None)
        if v is not None:
            a[key] = v
    if a.get("target_contingency") in ("", "none"):
        a["target_contingency"] = None
    return a


def cmd_attack(args) -> int:
    cfg = _config(args)
    case = load_case(cfg.case)
    params = _params(cfg, args)
    a = _attack_base(cfg, args)
    n1 = _float_list(args.n1) if args.n1 is not None else _float_list(a.pop("N1", [1.0]))
    a.pop("N1", None)
    rounds = int(args.rounds if args.rounds is not None else a.pop("rounds", 2))
    a.pop("rounds", None)
    if not n1:
        raise UsageError("empty N1 grid")
    if "target_branch" not in a:
        raise UsageError("attack needs a target branch (--target or [attack] target_branch)")
    rows, reports = [], []
    for v in n1:
        spec = AttackSpec.from_dict({**a, "N1": v})
        rep = run_attack_loop(case, spec, params, rounds=rounds)
        reports.append(rep.to_dict())
        rows.append((v, rep.predicted_pct, rep.physical.target_pct, rep.cyber.target_pct,
                     rep.cyber.max_ctg_pct, rep.cyber.max_base_pct, rep.attack.c.l0,
                     len(rep.attack.c.subgraph_buses), rep.bdd_max_delta))
    spec0 = AttackSpec.from_dict({**a, "N1": n1[0]})
    buf = io.StringIO()
    buf.write("\n".join(_echo(cfg, {
        "target": spec0.target_branch, "contingency": spec0.target_contingency or "base case",
        "response_model": spec0.response_model, "L_S": spec0.L_S, "sigma": spec0.sigma,
        "units": "flows in percent of the limit; N1 in radians"})) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N1", "predicted_pct", "physical_pct", "cyber_pct", "cyber_max_ctg_pct",
                "cyber_max_base_pct", "l0", "subgraph", "bdd_delta"])
    for r in rows:
        w.writerow([f"{r[0]:g}"] + [f"{x:.4f}" for x in r[1:6]] + [r[6], r[7], f"{r[8]:.3g}"])
    path = _write(cfg, "attack_flows.csv", buf.getvalue())
    _write(cfg, "attack_loop.json", json.dumps(reports, indent=1) + "\n")
    sys.stdout.write(buf.getvalue())
    print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _targets(spec_list, case, params) -> list[tuple[str, str | None]]:
    if spec_list in (None, "critical", ["critical"]):
        sens = build_sensitivities(case)
        return critical_targets(run_rtca(case, case.loads(), case.dispatch0(), sens, params=params))
    if isinstance(spec_list, str):
        spec_list = [s for s in spec_list.replace(",", " ").split() if s]
    out = []
    for item in spec_list:
        br, _, k = item.partition("|")
        out.append((br, k or None))
    return out


def cmd_sweep(args) -> int:
    cfg = _config(args)
    case = load_case(cfg.case)
    params = _params(cfg, args)
    s = dict(cfg.sweep)
    n1 = _float_list(args.n1) if args.n1 is not None else _float_list(s.get("N1", list(PAPER_N1_GRID)))
    ls = _float_list(args.ls) if args.ls is not None else _float_list(s.get("L_S", list(PAPER_LS_GRID)))
    if not n1 or not ls:
        raise UsageError("empty N1 or L_S grid")
    model = args.response or s.get("response_model", "sced")
    targets = _targets(args.targets if args.targets is not None else s.get("targets"), case, params)
    jobs = int(args.jobs if args.jobs is not None else s.get("jobs", 1))
    if jobs < 1:
        raise UsageError("--jobs must be at least 1")
    known = {t for t in case.branch_ids}
    for t, k in targets:
        if t not in known or (k is not None and k not in known):
            raise UsageError(f"unknown target {t}|{k}")
    table = sweep_study(case, targets, n1, ls, model,
                        float(s.get("sigma", args.sigma if args.sigma is not None else 1e-3)),
                        float(s.get("big_m", 1e4)), params, jobs)
    text = table.to_csv()
    path = _write(cfg, "sweep.csv", text)
    sys.stdout.write(text)
    print(f"wrote {path}", file=sys.stderr)
    if table.rows and table.n_ok == 0:
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_case_check(args) -> int:
    case = load_case(resolve(args.file))
    s = summarize(case)
    sens = build_sensitivities(case)
    radial = [b for b, r in sens.radial_map().items() if r]
    print(f"{s.name}: {s.n_bus} buses, {s.n_branch} branches, {s.n_gen} generators, slack {s.slack_bus}")
    print(f"load {s.total_load * case.system_base:.3f} MW, capacity {s.total_capacity * case.system_base:.3f} MW")
    print(f"radial branches: {', '.join(radial) if radial else 'none'}")
    return EXIT_OK


def cmd_case_convert(args) -> int:
    from .matpower import read_matpower

    src = Path(args.input)
    text = src.read_text(encoding="utf-8")
    name = args.name or src.stem
    if src.suffix == ".m":
        case = read_matpower(text, name=name, loss_fraction=args.loss_fraction)
    else:
        case = parse_case(text)
    out = serialize_case(case)
    if args.output:
        Path(args.output).write_text(out, encoding="utf-8")
    else:
        sys.stdout.write(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gridattack", description="False-data attack studies on DC grid models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("case", nargs="?", help="case file or bundled case name")
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
        sp.add_argument("--tau", type=float, help="RTCA warning threshold in [0, 1]")
        sp.add_argument("--tau-base", type=float, help="base-case threshold (defaults to tau)")

    e = sub.add_parser("ems", help="run one SE, RTCA, SCED pass at the case operating point")
    common(e)
    e.add_argument("--format", choices=("json", "csv"))
    e.add_argument("--noise-seed", type=int, help="measurement noise seed; 0 is noiseless")
    e.add_argument("--emit-lp", metavar="PATH", help="write the SCED instance in LP format")
    e.set_defaults(func=cmd_ems)

    a = sub.add_parser("attack", help="design attacks and evaluate them in closed loop")
    common(a)
    a.add_argument("--spec", help="attack spec as JSON or TOML")
    a.add_argument("--target")
    a.add_argument("--contingency")
    a.add_argument("--n1", help="budget values: '0.2 0.4', '0.2,0.4' or 'start:step:stop'")
    a.add_argument("--ls", type=float, help="load-shift fraction")
    a.add_argument("--sigma", type=float)
    a.add_argument("--big-m", type=float)
    a.add_argument("--response", choices=("dcopf", "sced"))
    a.add_argument("--rounds", type=int)
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("sweep", help="attack every target across N1 and L_S grids")
    common(s)
    s.add_argument("--targets", help="'branch|contingency ...' or 'critical'")
    s.add_argument("--n1")
    s.add_argument("--ls")
    s.add_argument("--sigma", type=float)
    s.add_argument("--response", choices=("dcopf", "sced"))
    s.add_argument("--jobs", type=int)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("case", help="case-file utilities")
    csub = c.add_subparsers(dest="case_command", parser_class=_Parser)
    chk = csub.add_parser("check", help="validate and summarize a case")
    chk.add_argument("file")
    chk.set_defaults(func=cmd_case_check)
    cv = csub.add_parser("convert", help="convert a MATPOWER .m file to the case format")
    cv.add_argument("input")
    cv.add_argument("output", nargs="?")
    cv.add_argument("--name")
    cv.add_argument("--loss-fraction", type=float, default=0.02)
    cv.set_defaults(func=cmd_case_convert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gridattack: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CaseSyntaxError as exc:
        print(f"gridattack: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (CaseError, AttackSpecError, json.JSONDecodeError, OSError) as exc:
        print(f"gridattack: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (IslandingError, UnobservableError, np.linalg.LinAlgError) as exc:
        print(f"gridattack: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except RuntimeError as exc:
        msg = str(exc)
        print(f"gridattack: {msg}", file=sys.stderr)
        return EXIT_INFEASIBLE if INFEASIBLE in msg else EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
