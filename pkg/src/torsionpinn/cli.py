"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure
(divergence, solver non-convergence, quadrature failure).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (CheckpointError, ConfigError, ConvergenceError, GeometryError, PointFileError,
                     PointValidationError, QuadratureError, TrainingDivergenceError)

log = logging.getLogger("torsionpinn")

OUT_ENV = "TORSIONPINN_OUT"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# config files and defaults
# ---------------------------------------------------------------------------

DEFAULTS = {
    "torsion2d": {
        "shape": "circle", "domain": "", "points": "grid", "point_file": "", "oracle": "auto",
        "epochs": 10000, "seed": 0, "lr": 1e-3, "hidden": "64,64,64", "G": 1.0,
        "lambda_r": 1.0, "lambda_b": 1e5, "point_spacing": 0.005, "boundary_spacing": 0.0025,
        "quad_h": 0.001, "oracle_h": 0.0025, "field_h": 0.0025, "resample": "fixed-once", "out": "",
    },
    "vs1d": {
        "scale": "1", "seeds": 5, "seed": 0, "epochs": 20000, "lr": 1e-3, "jobs": 1,
        "resample": "fixed-once", "out": "",
    },
    "parametric": {
        "seed": 0, "epochs": 2000, "lr": 1e-3, "hidden": "64,64,64,64", "lambda_r": 4.0, "lambda_b": 1.0,
        "n_param_residual": 1000, "n_x_residual": 100, "n_param_boundary": 10000, "n_x_boundary": 2,
        "resample": "fixed-once", "time_budget": 0.0, "ckpt": "", "out": "",
    },
    "oracle": {"shape": "square", "domain": "", "G": 1.0, "h": "0.0025", "n": 4096, "out": ""},
}


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value.strip()


def parse_config_text(text: str, command: str) -> dict:
    """``key = value`` lines; ``#`` comments; unknown keys are rejected."""
    known = DEFAULTS[command]
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "problem":
            if value != command:
                raise ConfigError(f"line {lineno}: config is for {value!r}, not {command!r}")
            continue
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(value, known[key])
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
    return out


def effective_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        cfg.update(parse_config_text(text, command))
    for key in DEFAULTS[command]:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def _floats(text: str, name: str) -> list[float]:
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of numbers") from None
    if not vals:
        raise UsageError(f"{name} is empty")
    return vals


def _ints(text: str, name: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of integers") from None
    if not vals or min(vals) < 1:
        raise UsageError(f"{name} needs positive integers")
    return vals


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(outdir: Path, argv: list[str], config: dict, seed, started: float, files) -> Path:
    """Digest every output and write ``manifest.json`` atomically."""
    outdir = Path(outdir)
    digests = {}
    for f in sorted({Path(f) for f in files}):
        digests[os.path.relpath(f, outdir)] = sha256_file(f)
    manifest = {
        "command": argv,
        "config": config,
        "seed": seed,
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime()),
        "files": digests,
    }
    path = outdir / "manifest.json"
    tmp = outdir / ".manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def verify_manifest(path) -> list[str]:
    """Names of files whose digest no longer matches (empty when intact)."""
    path = Path(path)
    data = json.loads(path.read_text())
    return [name for name, digest in data["files"].items()
            if not (path.parent / name).exists() or sha256_file(path.parent / name) != digest]


def _outdir(cfg: dict, default_name: str) -> Path:
    if cfg.get("out"):
        out = Path(cfg["out"])
    else:
        out = Path(os.environ.get(OUT_ENV, "runs")) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _domain_from(cfg: dict, positional: str | None = None):
    from .geometry import load_domain, standard_domain

    if cfg.get("domain"):
        try:
            return load_domain(cfg["domain"]), Path(cfg["domain"]).stem
        except OSError as exc:
            raise UsageError(f"cannot read domain file: {exc}") from None
    shape = positional or cfg.get("shape")
    if not shape:
        raise UsageError("a shape or --domain is required")
    return standard_domain(shape), shape


def cmd_torsion2d(args, argv) -> int:
    from .fd_oracle import solve_poisson_2d
    from .geometry import load_points
    from .torsion2d import CaseConfig, run_case

    if args.shape is None and args.domain is None and not args.config:
        raise UsageError("torsion2d needs a shape (circle, square, triangle, irregular) or --domain")
    cfg = effective_config("torsion2d", args)
    if args.shape is not None:
        cfg["shape"] = args.shape
    started = time.time()
    domain, name = _domain_from(cfg, args.shape if not cfg.get("domain") else None)
    case_cfg = CaseConfig(
        epochs=cfg["epochs"], seed=cfg["seed"], lr=cfg["lr"], hidden_layers=_ints(cfg["hidden"], "hidden"),
        G=cfg["G"], lambda_r=cfg["lambda_r"], lambda_b=cfg["lambda_b"], points=cfg["points"],
        point_spacing=cfg["point_spacing"], boundary_spacing=cfg["boundary_spacing"], quad_h=cfg["quad_h"],
        oracle_h=cfg["oracle_h"], field_h=cfg["field_h"], resample=cfg["resample"],
    )
    points = None
    if cfg["point_file"]:
        try:
            points = load_points(cfg["point_file"], domain)
        except OSError as exc:
            raise UsageError(f"cannot read point file: {exc}") from None
    out = _outdir(cfg, f"torsion2d-{name}-seed{cfg['seed']}")
    case = run_case(domain, case_cfg, outdir=out, points=points, name=name)
    if cfg["oracle"] == "fd" and case.reference.startswith("analytic"):
        fd = solve_poisson_2d(domain, cfg["G"], cfg["oracle_h"])
        print(f"fd_J = {fd.J!r}")
    print(f"J_pinn = {case.J_pinn!r}")
    print(f"J_reference = {case.J_reference!r} ({case.reference})")
    print(f"rel_error = {case.rel_error!r}")
    write_manifest(out, argv, cfg, cfg["seed"], started, case.files.values())
    return EXIT_OK


def _vs_job(job):
    from .torsion1d_vs import run_vs_case

    N, seed, epochs, lr, resample, outdir = job
    res = run_vs_case(N, seed, epochs=epochs, lr=lr, outdir=outdir, resample=resample)
    return N, seed, res.rel_l2, res.report.final["loss_total"], [str(p) for p in res.files.values()]


def cmd_vs1d(args, argv) -> int:
    import csv

    cfg = effective_config("vs1d", args)
    scales = _floats(cfg["scale"], "--scale")
    if min(scales) < 1.0:
        raise UsageError(f"scale N must be >= 1 (got {min(scales)})")
    if cfg["seeds"] < 1 or cfg["jobs"] < 1:
        raise UsageError("--seeds and --jobs must be >= 1")
    started = time.time()
    out = _outdir(cfg, "vs1d-" + "-".join(f"N{n:g}" for n in scales))
    jobs = [(N, cfg["seed"] + k, cfg["epochs"], cfg["lr"], cfg["resample"], out / f"N{N:g}" / f"seed{cfg['seed'] + k}")
            for N in scales for k in range(cfg["seeds"])]
    if cfg["jobs"] > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(cfg["jobs"]) as pool:
            results = list(pool.map(_vs_job, jobs))
    else:
        results = [_vs_job(j) for j in jobs]
    files = [f for r in results for f in r[4]]
    table = out / "comparison.csv"
    with table.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "seed", "rel_l2", "final_loss"])
        for N, seed, err, loss, _ in results:
            w.writerow([repr(N), seed, repr(err), repr(loss)])
    files.append(table)
    for N in scales:
        errs = [r[2] for r in results if r[0] == N]
        print(f"N={N:g}: best rel_l2 = {min(errs)!r} over {len(errs)} seeds")
    write_manifest(out, argv, cfg, cfg["seed"], started, files)
    return EXIT_OK


def _parametric_problem(cfg):
    from .optim import LossWeights
    from .parametric1d import ParametricProblem

    return ParametricProblem(
        hidden_layers=_ints(cfg["hidden"], "hidden"), weights=LossWeights(cfg["lambda_r"], cfg["lambda_b"]),
        n_param_residual=cfg["n_param_residual"], n_x_residual=cfg["n_x_residual"],
        n_param_boundary=cfg["n_param_boundary"], n_x_boundary=cfg["n_x_boundary"],
    )


def _load_ckpt(path):
    from .network import load_checkpoint

    if not path:
        raise UsageError("--ckpt is required")
    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path, expected_input_dim=4)


def cmd_parametric(args, argv) -> int:
    from .network import save_checkpoint
    from .optim import TrainConfig
    from .parametric1d import (Predictor, checkpoint_metadata, problem_from_checkpoint, train_parametric,
                               write_curves)

    cfg = effective_config("parametric", args)
    action = args.action
    if action == "train":
        started = time.time()
        problem = _parametric_problem(cfg)
        config = TrainConfig(epochs=cfg["epochs"], seed=cfg["seed"], lr=cfg["lr"], resample=cfg["resample"],
                             time_budget=cfg["time_budget"] or None)
        out = _outdir(cfg, f"parametric-seed{cfg['seed']}")
        params, report, problem = train_parametric(cfg["seed"], problem, config)
        ckpt = Path(cfg["ckpt"]) if cfg["ckpt"] else out / "model.ckpt"
        save_checkpoint(ckpt, params, problem.spec, checkpoint_metadata(problem, config, report))
        files = [ckpt, report.write_csv(out / "loss.csv"), write_curves(problem, params, out / "curves.csv")]
        print(f"rel_l2 = {report.final['rel_l2']!r}")
        print(f"checkpoint = {ckpt}")
        write_manifest(out, argv, cfg, cfg["seed"], started, files)
        return EXIT_OK
    ckpt = _load_ckpt(cfg["ckpt"])
    if action == "eval":
        problem = problem_from_checkpoint(ckpt)
        print(f"rel_l2 = {problem.rel_l2(ckpt.params)!r}")
        return EXIT_OK
    predictor = Predictor(ckpt)
    if action == "predict":
        if None in (args.x, args.T, args.m, args.sigma):
            raise UsageError("predict needs --x, --T, --m and --sigma")
        xs = _floats(args.x, "--x")
        if args.sigma <= 0:
            raise UsageError("sigma must be positive")
        pred = predictor(np.array(xs), args.T, args.m, args.sigma, warn=False)
        for v in pred.phi:
            print(repr(float(v)))
        if pred.extrapolated:
            print("warning: parameters outside the training box (extrapolated)", file=sys.stderr)
        return EXIT_OK
    if action == "serve":
        from .server import make_server

        server = make_server(predictor, args.host, args.port)
        host, port = server.server_address[:2]
        print(f"serving on http://{host}:{port}", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
        return EXIT_OK
    raise UsageError(f"unknown parametric action {action!r}")


def cmd_oracle(args, argv) -> int:
    from .fd_oracle import sensitivity_sweep, solve_ode_1d, solve_poisson_2d, write_sensitivity
    from .torsion1d_vs import exact_profile, neumann_target, polar_moment

    cfg = effective_config("oracle", args)
    started = time.time()
    if args.action == "ode":
        n = cfg["n"]
        if n < 16:
            raise UsageError("n must be >= 16")
        sol = solve_ode_1d(polar_moment, (0.0, neumann_target(1.0)), n)
        out = _outdir(cfg, f"oracle-ode-n{n}")
        import csv
        path = out / "oracle_ode.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "phi"])
            for x, v in zip(sol.x, sol.phi):
                w.writerow([repr(float(x)), repr(float(v))])
        xs, exact = exact_profile(n + 1)
        err = float(np.linalg.norm(sol.phi - exact) / np.linalg.norm(exact))
        print(f"rel_l2_vs_quadrature = {err!r}")
        write_manifest(out, argv, cfg, None, started, [path])
        return EXIT_OK
    domain, name = _domain_from(cfg, None)
    hs = _floats(cfg["h"], "--h")
    if any(h <= 0 for h in hs):
        raise UsageError("grid sizes must be positive")
    if args.action == "poisson":
        if len(hs) != 1:
            raise UsageError("poisson takes a single --h")
        out = _outdir(cfg, f"oracle-poisson-{name}")
        sol = solve_poisson_2d(domain, cfg["G"], hs[0])
        path = sol.write_csv(out / "oracle_field.csv")
        print(f"J = {sol.J!r}")
        print(f"cg_iterations = {sol.iterations}")
        write_manifest(out, argv, cfg, None, started, [path])
        return EXIT_OK
    if args.action == "sweep":
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise UsageError("--h must be strictly decreasing")
        out = _outdir(cfg, f"oracle-sweep-{name}")
        rows = sensitivity_sweep(domain, hs, cfg["G"])
        path = write_sensitivity(rows, out / "sensitivity.csv")
        for r in rows:
            print(f"h={r.h!r} J={r.J!r} rel_change={r.rel_change!r}")
        write_manifest(out, argv, cfg, None, started, [path])
        return EXIT_OK
    raise UsageError(f"unknown oracle action {args.action!r}")


def cmd_defaults(args, argv) -> int:
    names = [args.problem] if args.problem else list(DEFAULTS)
    for name in names:
        print(f"# {name}")
        print(f"problem = {name}")
        for k, v in DEFAULTS[name].items():
            print(f"{k} = {v}")
        print()
    return EXIT_OK


def cmd_inspect(args, argv) -> int:
    from .network import load_checkpoint

    if not Path(args.ckpt).exists():
        raise UsageError(f"checkpoint not found: {args.ckpt}")
    ckpt = load_checkpoint(args.ckpt)
    print(f"network = {ckpt.spec.describe()}")
    print(f"n_params = {ckpt.spec.n_params}")
    for k in sorted(ckpt.metadata):
        print(f"{k} = {ckpt.metadata[k]}")
    return EXIT_OK


def cmd_verify(args, argv) -> int:
    bad = verify_manifest(args.manifest)
    for name in bad:
        print(f"MISMATCH {name}")
    if bad:
        return EXIT_NUMERIC
    print("ok")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="torsionpinn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("torsion2d", help="train a 2D cross-section")
    t.add_argument("shape", nargs="?", choices=["circle", "square", "triangle", "irregular"])
    t.add_argument("--domain", help="domain file (key = value format)")
    t.add_argument("--points", choices=["grid", "sampled"])
    t.add_argument("--point-file", dest="point_file")
    t.add_argument("--oracle", choices=["auto", "fd"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--hidden")
    t.add_argument("--G", type=float)
    t.add_argument("--lambda-r", dest="lambda_r", type=float)
    t.add_argument("--lambda-b", dest="lambda_b", type=float)
    t.add_argument("--quad-h", dest="quad_h", type=float)
    t.add_argument("--resample", choices=["fixed-once", "per-epoch"])
    t.add_argument("--config")
    t.add_argument("--out")

    v = sub.add_parser("vs1d", help="1D shaft with variable scaling")
    v.add_argument("--scale", help="N, or a comma list such as 1,4")
    v.add_argument("--seeds", type=int)
    v.add_argument("--seed", type=int, help="first seed")
    v.add_argument("--epochs", type=int)
    v.add_argument("--lr", type=float)
    v.add_argument("--jobs", type=int)
    v.add_argument("--resample", choices=["fixed-once", "per-epoch"])
    v.add_argument("--config")
    v.add_argument("--out")

    pa = sub.add_parser("parametric", help="parametric Gaussian-torque model")
    pa.add_argument("action", choices=["train", "eval", "predict", "serve"])
    pa.add_argument("--ckpt")
    pa.add_argument("--seed", type=int)
    pa.add_argument("--epochs", type=int)
    pa.add_argument("--lr", type=float)
    pa.add_argument("--resample", choices=["fixed-once", "per-epoch"])
    pa.add_argument("--time-budget", dest="time_budget", type=float, help="seconds; stop training once exceeded")
    pa.add_argument("--x")
    pa.add_argument("--T", type=float)
    pa.add_argument("--m", type=float)
    pa.add_argument("--sigma", type=float)
    pa.add_argument("--host", default="127.0.0.1")
    pa.add_argument("--port", type=int, default=8000)
    pa.add_argument("--config")
    pa.add_argument("--out")

    o = sub.add_parser("oracle", help="finite-difference reference solvers")
    o.add_argument("action", choices=["poisson", "sweep", "ode"])
    o.add_argument("--shape", choices=["circle", "square", "triangle", "irregular", "l_shape"])
    o.add_argument("--domain")
    o.add_argument("--h")
    o.add_argument("--G", type=float)
    o.add_argument("--n", type=int)
    o.add_argument("--config")
    o.add_argument("--out")

    d = sub.add_parser("defaults", help="print default configuration")
    d.add_argument("problem", nargs="?", choices=list(DEFAULTS))

    i = sub.add_parser("inspect", help="show checkpoint header")
    i.add_argument("ckpt")

    m = sub.add_parser("verify", help="check a run manifest against its files")
    m.add_argument("manifest")
    return p


COMMANDS = {
    "torsion2d": cmd_torsion2d, "vs1d": cmd_vs1d, "parametric": cmd_parametric, "oracle": cmd_oracle,
    "defaults": cmd_defaults, "inspect": cmd_inspect, "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, ["torsionpinn"] + argv)
    except (UsageError, ConfigError, GeometryError, PointFileError, PointValidationError,
            CheckpointError) as exc:
        print(f"torsionpinn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergenceError, ConvergenceError, QuadratureError) as exc:
        print(f"torsionpinn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
