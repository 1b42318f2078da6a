"""Command line entry point: ``roughslip <command> [options]``.

Every command reads an optional config file (INI sections ``[dataset]``,
``[fno]``, ``[hmm]``, ``[reference]``, ``[eval]``; or the ``run.json`` of an
earlier run), applies ``--set section.key=value`` overrides and the
command's own flags, and writes its outputs into a run directory together
with ``run.json`` (resolved config, seeds, argv, git revision).

Exit codes: 0 success, 1 validation failure (bad input, failed check),
2 numerical failure (solver breakdown, divergence, non-finite values).
"""

from __future__ import annotations

import argparse
import ast
import configparser
import json
import logging
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from roughslip import __version__
from roughslip.errors import (
    CompatibilityError,
    ConfigError,
    DatasetError,
    DegenerateFlowError,
    DivergenceError,
    GeometryError,
    MetricError,
    NumericalError,
    SolverError,
)

log = logging.getLogger("roughslip")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

DEFAULTS = {
    "dataset": {"K": 2000, "J": 128, "seed": 0, "family": "gp"},
    "fno": {"epochs": 200, "batch_size": 32, "lr": 1e-3, "seed": 0, "L": 4, "d": 32, "K_max": 16},
    "hmm": {"epsilon": 0.04, "n_micro": 13, "backend": "bie", "J": 256, "model": None, "tol": 1e-8,
            "max_iter": 30, "algorithm": 2, "wall": "sine", "wall_seed": 0},
    "reference": {"Nx": 256, "Ny": 512, "stretch": 2.0},
    "eval": {"offsets": [2, 4, 8], "n_points": 512},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration


def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        low = text.strip().lower()
        if low in ("none", "null"):
            return None
        if low in ("true", "false"):
            return low == "true"
        return text.strip()


def load_config(path) -> dict:
    """Nested ``{section: {key: value}}`` from an INI file or a run manifest."""
    cfg = json.loads(json.dumps(DEFAULTS))
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text()
    if path.suffix == ".json":
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        loaded = loaded.get("config", loaded)
    else:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        loaded = {s: {k: _parse_value(v) for k, v in cp.items(s)} for s in cp.sections()}
    for sec, vals in loaded.items():
        if sec not in cfg:
            raise ConfigError(f"unknown config section [{sec}]")
        if not isinstance(vals, dict):
            raise ConfigError(f"section [{sec}] must be a table")
        cfg[sec].update(vals)
    return cfg


def apply_overrides(cfg: dict, pairs) -> dict:
    for item in pairs or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        sec, name = key.split(".", 1)
        if sec not in cfg:
            raise ConfigError(f"unknown config section {sec!r}")
        cfg[sec][name] = _parse_value(value)
    return cfg


def git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


class RunDir:
    """Output directory with ``run.json`` and line-delimited ``records.jsonl``."""

    def __init__(self, path, command: str, argv, cfg: dict):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "argv": list(argv),
            "config": cfg,
            "seeds": {"dataset": cfg["dataset"].get("seed"), "fno": cfg["fno"].get("seed"),
                      "wall": cfg["hmm"].get("wall_seed")},
            "git": git_revision(),
            "version": __version__,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "outputs": {},
            "status": "running",
        }
        self.save()

    def file(self, name: str) -> Path:
        return self.path / name

    def output(self, key: str, name: str):
        self.manifest["outputs"][key] = name

    def record(self, rec: dict):
        with open(self.file("records.jsonl"), "a") as f:
            f.write(json.dumps(rec, sort_keys=True, default=_json_default) + "\n")

    def finish(self, status: str, **extra):
        self.manifest["status"] = status
        self.manifest.update(extra)
        self.save()

    def save(self):
        self.file("run.json").write_text(json.dumps(self.manifest, indent=1, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def read_run(path) -> dict:
    f = Path(path) / "run.json"
    if not f.exists():
        raise ConfigError(f"{path} is not a run directory (no run.json)")
    return json.loads(f.read_text())


# ---------------------------------------------------------------------------
# builders


def dataset_config(sec: dict):
    from roughslip.dataset import DatasetConfig

    sec = dict(sec)
    family = sec.pop("family", "gp")
    if family == "sine":
        return DatasetConfig.sine(**sec)
    return DatasetConfig(**sec)


def hmm_config(sec: dict):
    from roughslip.hmm import HmmConfig

    try:
        return HmmConfig(**sec)
    except TypeError as exc:
        raise ConfigError(f"bad [hmm] option: {exc}") from exc


def fno_hyper(sec: dict):
    from roughslip.fno import FnoHyper

    return FnoHyper(**{k: sec[k] for k in ("L", "d", "K_max") if k in sec})


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, cfg, run: RunDir):
    from roughslip.dataset import generate_dataset

    dc = dataset_config(cfg["dataset"])
    man = generate_dataset(dc, run.path / "dataset")
    run.output("dataset", "dataset")
    rec = {"kind": "dataset", "K": man["K"], "J": man["J"], "skipped": man["skipped"], "crc64": man["crc64"]}
    run.record(rec)
    print(json.dumps(rec))
    return rec


def _dataset_dir(path) -> Path:
    p = Path(path)
    return p / "dataset" if (p / "dataset" / "manifest.json").exists() else p


def cmd_train(args, cfg, run: RunDir):
    from roughslip import dataset as ds
    from roughslip import fno

    if not args.data:
        raise ConfigError("train needs --data")
    d = _dataset_dir(args.data)
    man = ds.read_manifest(d)
    arr = ds.load_array(d, man)
    tr, te = ds.split(man)
    x, y = fno.arrays_to_io(arr)
    sec = cfg["fno"]
    st = fno.train(x[tr], y[tr], fno_hyper(sec), mean=man["stats"]["mean"], std=man["stats"]["std"],
                   x_test=x[te] if len(te) else None, y_test=y[te] if len(te) else None,
                   epochs=int(sec["epochs"]), batch_size=int(sec["batch_size"]), lr=float(sec["lr"]),
                   seed=int(sec["seed"]), log_every=max(1, int(sec["epochs"]) // 20))
    st.model.meta["dataset_crc64"] = man["crc64"]
    crc = fno.save_model(st.model, run.file("model.rsfno"))
    run.output("model", "model.rsfno")
    np.savez(run.file("history.npz"), train=np.array(st.train_loss), test=np.array(st.test_loss))
    rec = {"kind": "train", "train_loss": st.train_loss[-1],
           "test_loss": st.test_loss[-1] if st.test_loss else None, "model_crc": crc}
    run.record(rec)
    print(json.dumps(rec))
    return rec


def _resolve_model(hc, run_root=None):
    if hc.backend == "fno" and hc.model and Path(hc.model).is_dir():
        return replace(hc, model=str(Path(hc.model) / "model.rsfno"))
    return hc


def cmd_precompute(args, cfg, run: RunDir):
    from roughslip.hmm import build_sites, precompute_representors

    hc = _resolve_model(hmm_config(cfg["hmm"]))
    t = time.perf_counter()
    sites = precompute_representors(hc, build_sites(hc))
    dt = time.perf_counter() - t
    np.savez(run.file("representors.npz"),
             x=np.array([s.x for s in sites]),
             **{f"r1_{n}": s.pair.r1 for n, s in enumerate(sites)},
             **{f"r2_{n}": s.pair.r2 for n, s in enumerate(sites)},
             **{f"nodes_{n}": s.curve.x for n, s in enumerate(sites)})
    run.output("representors", "representors.npz")
    rec = {"kind": "precompute", "backend": hc.backend, "sites": len(sites), "seconds": dt}
    run.record(rec)
    print(json.dumps(rec))
    return rec


def cmd_hmm_solve(args, cfg, run: RunDir):
    from roughslip.hmm import run_hmm

    hc = _resolve_model(hmm_config(cfg["hmm"]))
    res = run_hmm(hc)
    rec = {"kind": "hmm", "backend": hc.backend, **res.record()}
    (run.file("hmm_result.json")).write_text(json.dumps(rec, indent=1, default=_json_default))
    run.output("hmm_result", "hmm_result.json")
    run.record(rec)
    print(json.dumps({k: rec[k] for k in ("kind", "backend", "iterations", "converged", "residuals")}))
    if not res.converged:
        raise NumericalError(f"HMM did not converge in {hc.max_iter} iterations")
    return rec


def _field_from_run(path):
    """Rebuild the converged macro field of an ``hmm-solve`` run from its manifest."""
    from roughslip.hmm import HmmConfig
    from roughslip.macro_channel import interpolate_slip, solve_macro

    man = read_run(path)
    if man["command"] != "hmm-solve":
        raise ConfigError(f"{path} is not an hmm-solve run")
    res = json.loads((Path(path) / "hmm_result.json").read_text())
    hc = HmmConfig(**man["config"]["hmm"])
    slip = interpolate_slip(hc.sites, np.array(res["alphas"][-1]), hc.period)
    return hc, solve_macro(slip, hc.geometry, Nx=hc.Nx, Ny=hc.Ny), man


def cmd_eval(args, cfg, run: RunDir):
    from roughslip.hmm import make_wall, naive_solution
    from roughslip.macro_channel import top_data
    from roughslip.metrics import error_family
    from roughslip.reference import solve_full

    if not args.run:
        raise ConfigError("eval needs at least one --run")
    runs = [_field_from_run(p) for p in args.run]
    hc = runs[0][0]
    for other, _, _ in runs[1:]:
        if (other.epsilon, other.wall, other.wall_seed, other.line_offset) != (hc.epsilon, hc.wall, hc.wall_seed, hc.line_offset):
            raise ConfigError("runs to compare must share the channel and the macro boundary")
    rs = cfg["reference"]
    ref = solve_full(make_wall(hc), top_data, hc.epsilon if hc.wall == "sine" else hc.period,
                     Nx=int(rs["Nx"]), Ny=int(rs["Ny"]), stretch=float(rs["stretch"]))
    sources = {"bie": runs[0][1].velocity, "naive": naive_solution(hc).velocity, "ref": ref.velocity}
    if len(runs) > 1:
        sources["fno"] = runs[1][1].velocity
    offsets = args.offsets or cfg["eval"]["offsets"]
    rep = error_family(sources, [d * hc.epsilon for d in offsets], hc.y0, hc.epsilon, hc.period,
                       int(cfg["eval"]["n_points"]), meta={"runs": [str(p) for p in args.run]})
    run.file("error_report.jsonl").write_text(rep.to_lines())
    run.output("error_report", "error_report.jsonl")
    for r in rep.records():
        run.record(r)
    print(rep.to_lines(), end="")
    return rep


def cmd_check_theory(args, cfg, run: RunDir):
    from roughslip.metrics import check_ratio_lemma

    ok = True
    for d1, d2 in ((0.01, 0.01), (0.0, 0.1)):
        r = check_ratio_lemma(d1, d2, 1.0, trials=args.trials, seed=cfg["fno"].get("seed", 0))
        rec = {"kind": "ratio_lemma", **r.to_dict()}
        run.record(rec)
        print(json.dumps(rec))
        ok &= r.passed
    if args.model and args.data:
        from roughslip import dataset as ds
        from roughslip.fno import geo_fno_eval, load_model
        from roughslip.metrics import check_slip_error_bound

        model = load_model(args.model)
        samples, man = ds.load_dataset(_dataset_dir(args.data))
        test = [samples[i] for i in man["split"]["test"]] or samples
        rec = check_slip_error_bound(lambda s: geo_fno_eval(model, s.curve, s.rt1, s.rt2), test)
        rec = {"kind": "slip_error_bound", **rec}
        run.record(rec)
        print(json.dumps(rec))
        ok &= rec["passed"]
    if not ok:
        raise _CheckFailed("theory check failed")
    return ok


def cmd_bench(args, cfg, run: RunDir):
    from roughslip.hmm import build_sites, precompute_representors, run_hmm

    hc = _resolve_model(hmm_config(cfg["hmm"]))
    out = []
    backends = [("bie", J) for J in args.J_list] + ([("fno", hc.J)] if hc.model else [])
    for backend, J in backends:
        c = replace(hc, backend=backend, J=J, algorithm=2)
        t = time.perf_counter()
        sites = precompute_representors(c, build_sites(c))
        pre = time.perf_counter() - t
        res = run_hmm(c, sites)
        rec = {"kind": "bench", "backend": backend, "J": J, "precompute": pre,
               "macro": res.timings["macro"], "micro": res.timings["micro"], "iterations": res.iterations}
        run.record(rec)
        print(json.dumps(rec))
        out.append(rec)
    return out


class _CheckFailed(Exception):
    pass


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "precompute": cmd_precompute,
    "hmm-solve": cmd_hmm_solve,
    "eval": cmd_eval,
    "check-theory": cmd_check_theory,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="roughslip", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="INI config file or run.json of an earlier run")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
        sp.add_argument("--out", help="run directory (default runs/<command>-<time>)")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("gen-data", help="generate a representor dataset")
    common(sp)
    sp.add_argument("--k", type=int, dest="K")
    sp.add_argument("--J", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--family", choices=["gp", "sine"])

    sp = sub.add_parser("train", help="train the geo-FNO on a dataset")
    common(sp)
    sp.add_argument("--data", help="dataset directory or gen-data run")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)

    for name, help_ in (("precompute", "precompute representors at the micro sites"),
                        ("hmm-solve", "run the HMM fixed-point iteration"),
                        ("bench", "time BIE and FNO backends")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--backend", choices=["bie", "fno"])
        sp.add_argument("--J", type=int)
        sp.add_argument("--eps", type=float, dest="epsilon")
        sp.add_argument("--model")
        sp.add_argument("--n-micro", type=int, dest="n_micro")
        sp.add_argument("--algorithm", type=int, choices=[1, 2])
        if name == "bench":
            sp.add_argument("--J-list", type=lambda s: [int(v) for v in s.split(",")], default=[128, 256])

    sp = sub.add_parser("eval", help="error family of hmm-solve runs against the reference")
    common(sp)
    sp.add_argument("--run", action="append", default=[], help="hmm-solve run (first: BIE, second: FNO)")
    sp.add_argument("--offsets", type=lambda s: [float(v) for v in s.split(",")], help="offsets in units of eps")

    sp = sub.add_parser("check-theory", help="Monte-Carlo checks of the slip error bounds")
    common(sp)
    sp.add_argument("--trials", type=int, default=1_000_000)
    sp.add_argument("--model")
    sp.add_argument("--data")
    return p


FLAG_MAP = {
    "gen-data": ("dataset", ("K", "J", "seed", "family")),
    "train": ("fno", ("epochs", "seed")),
    "precompute": ("hmm", ("backend", "J", "epsilon", "model", "n_micro", "algorithm")),
    "hmm-solve": ("hmm", ("backend", "J", "epsilon", "model", "n_micro", "algorithm")),
    "bench": ("hmm", ("backend", "J", "epsilon", "model", "n_micro", "algorithm")),
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"roughslip: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if not args.command:
        build_parser().print_help()
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        cfg = apply_overrides(load_config(args.config), args.set)
        if args.command in FLAG_MAP:
            sec, keys = FLAG_MAP[args.command]
            for k in keys:
                v = getattr(args, k, None)
                if v is not None:
                    cfg[sec][k] = v
        out = args.out or f"runs/{args.command}-{time.strftime('%Y%m%d-%H%M%S')}"
        run = RunDir(out, args.command, argv, cfg)
        COMMANDS[args.command](args, cfg, run)
        run.finish("ok")
        return EXIT_OK
    except (ConfigError, GeometryError, CompatibilityError, DatasetError, _CheckFailed, FileNotFoundError) as exc:
        status, code = f"invalid: {exc}", EXIT_INVALID
    except (SolverError, NumericalError, DivergenceError, DegenerateFlowError, MetricError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        status, code = f"numerical: {exc}", EXIT_NUMERICAL
    print(f"roughslip: {status}", file=sys.stderr)
    if run is not None:
        run.finish(status)
    return code


if __name__ == "__main__":
    sys.exit(main())
