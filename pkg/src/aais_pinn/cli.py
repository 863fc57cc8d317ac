"""Command-line entry points: ``fit``, ``solve`` and ``export-grid``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .aais import AaisConfig, run_aais
from .mixture import ComponentKind, MixtureModel
from .pde import PRESETS, ExactField, get_problem
from .pinn import MlpField, MlpParams
from .samplers import Aais, Rad, Uniform
from .target import BoxDomain, MixtureTarget, PeaksTarget, ResidualTarget
from .train import TrainConfig, resample_train

log = logging.getLogger("aais_pinn")

EXIT_USAGE = 2


class ConfigError(ValueError):
    pass


def _bimodal():
    covs = np.array([np.eye(2) * 0.01] * 2)
    model = MixtureModel([0.5, 0.5], [[-0.5, -0.5], [0.5, 0.5]], covs)
    return MixtureTarget(model, BoxDomain.cube(2))


def _broad():
    return MixtureTarget(MixtureModel.single([0.2, -0.1], np.eye(2) * 0.09), BoxDomain.cube(2))


TARGETS = {
    "one-peak-2d": lambda: PeaksTarget([[0.5, 0.5]], 1000.0),
    "two-peak-2d": lambda: PeaksTarget([[-0.5, -0.5], [0.5, 0.5]], 1000.0),
    "nine-peak-2d": lambda: PeaksTarget(get_problem("poisson2d-9p").centers, 1000.0),
    "bimodal-2d": _bimodal,
    "gaussian-2d": _broad,
}


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[_fmt(v) for v in row] for row in rows])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _kind(name: str, dof: float) -> ComponentKind:
    if name in ("gaussian", "g"):
        return ComponentKind.gaussian()
    if name in ("student-t", "t"):
        return ComponentKind.student_t(dof)
    raise ConfigError(f"unknown component kind {name!r}")


def cmd_fit(args) -> int:
    if args.target not in TARGETS:
        print(f"error: unknown target {args.target!r}; choose from {', '.join(TARGETS)}",
              file=sys.stderr)
        return EXIT_USAGE
    target = TARGETS[args.target]()
    cfg = AaisConfig(n_search=args.n_search, kind=_kind(args.kind, args.dof))
    rng = np.random.default_rng(args.seed)
    model, trace = run_aais(target, cfg, rng)
    samples = model.sample(args.n_samples, rng)
    out = Path(args.out) / args.target / str(args.seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "mixture.json").write_text(model.to_json(indent=2) + "\n", encoding="utf-8")
    (out / "trace.jsonl").write_text(trace.to_jsonl(), encoding="utf-8")
    write_csv(out / "samples.csv", [f"x{j + 1}" for j in range(model.dim)], samples)
    if args.plot:
        from .plotting import plot_fit
        plot_fit(target, samples, out / "samples.png")
    best = trace.best
    print(f"{args.target} seed={args.seed}: {model.n_components} components, "
          f"ESS={best.ess_final:.4f} -> {out}")
    return 0


TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"sampler", "seed"}
AAIS_KEYS = {"component", "dof", "n_search", "n_proposal", "n_candidate", "t_accept",
             "t_merge", "delete_fraction", "update_weight", "cycle_limit", "ladder",
             "ess_ladder", "iter_ladder", "sigma0_diag", "merge_rule"}
TOP_KEYS = {"experiment", "problem", "form", "seeds", "out", "layers", "train",
            "sampler", "aais"}


def _reject_unknown(section: str, table: dict, allowed: set):
    extra = sorted(set(table) - allowed)
    if extra:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def load_run_config(path):
    """Parse and validate a TOML run configuration.

    Returns a dict with ``experiment``, ``problem``, ``layers``, ``seeds``,
    ``out`` and a ``train`` factory taking a seed.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    _reject_unknown("", raw, TOP_KEYS)
    for key in ("experiment", "problem", "seeds"):
        if key not in raw:
            raise ConfigError(f"top level: missing required key {key!r}")
    try:
        problem = get_problem(raw["problem"], raw.get("form", "product"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"problem: {exc}") from None
    seeds = raw["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds: must be a nonempty list of nonnegative integers")
    layers = raw.get("layers", [problem.dim] + [20] * 7 + [1])
    if layers[0] != problem.dim or layers[-1] != 1:
        raise ConfigError(f"layers: must start with {problem.dim} and end with 1")

    train = dict(raw.get("train", {}))
    _reject_unknown("train", train, TRAIN_KEYS)
    samp = dict(raw.get("sampler", {"kind": "uniform"}))
    _reject_unknown("sampler", samp, {"kind", "n_search"})
    aais = dict(raw.get("aais", {}))
    _reject_unknown("aais", aais, AAIS_KEYS)

    kind = samp.get("kind", "uniform")
    if kind == "uniform":
        sampler = Uniform()
    elif kind == "rad":
        sampler = Rad(samp.get("n_search", 10000))
    elif kind == "aais":
        if "n_search" in samp:
            aais.setdefault("n_search", samp["n_search"])
        comp = _kind(aais.pop("component", "student-t"), aais.pop("dof", 3.0))
        diag = aais.pop("sigma0_diag", None)
        sigma0 = None if diag is None else float(diag) * np.eye(problem.dim)
        try:
            sampler = Aais(AaisConfig(kind=comp, sigma0=sigma0, **aais))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[aais]: {exc}") from None
    else:
        raise ConfigError(f"[sampler] kind: unknown sampler {kind!r} (uniform, rad, aais)")

    def make_train(seed):
        try:
            return TrainConfig(sampler=sampler, seed=seed, **train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[train]: {exc}") from None

    make_train(seeds[0])
    return {"experiment": str(raw["experiment"]), "problem": problem, "layers": layers,
            "seeds": seeds, "out": raw.get("out", "runs"), "train": make_train}


def cmd_solve(args) -> int:
    try:
        cfg = load_run_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_root = Path(args.out or cfg["out"]) / cfg["experiment"]
    out_root.mkdir(parents=True, exist_ok=True)
    finals, records = {}, {}
    for seed in cfg["seeds"]:
        params, record = resample_train(cfg["problem"], cfg["layers"], cfg["train"](seed),
                                        progress=_progress(seed))
        run_dir = out_root / str(seed)
        run_dir.mkdir(exist_ok=True)
        timing = [{"iteration": e["iteration"], "wall_time": e["wall_time"]}
                  for e in record.entries]
        stable = [{k: v for k, v in e.items() if k != "wall_time"} for e in record.entries]
        (run_dir / "record.jsonl").write_text(
            "".join(json.dumps(e) + "\n" for e in stable), encoding="utf-8")
        (run_dir / "timing.jsonl").write_text(
            "".join(json.dumps(e) + "\n" for e in timing), encoding="utf-8")
        params.save(run_dir / "checkpoint")
        finals[seed] = record.final
        records[seed] = stable
    summary = {"experiment": cfg["experiment"], "problem": cfg["problem"].name,
               "seeds": cfg["seeds"], "final": {}}
    for key in ("e_r", "e_inf", "loss"):
        vals = [finals[s][key] for s in cfg["seeds"]]
        summary["final"][key] = {"median": statistics.median(vals), "min": min(vals),
                                 "max": max(vals),
                                 "per_seed": {str(s): finals[s][key] for s in cfg["seeds"]}}
    _write_json(out_root / "summary.json", summary)
    if args.plot:
        from .plotting import plot_convergence
        plot_convergence(records, out_root / "convergence.png")
    print(f"{cfg['experiment']}: median e_r={summary['final']['e_r']['median']:.4g} -> {out_root}")
    return 0


def _progress(seed):
    def report(entry):
        log.info("seed %s iter %d loss=%.4g e_r=%.4g e_inf=%.4g", seed, entry["iteration"],
                 entry["loss"], entry["e_r"], entry["e_inf"])
    return report


def _parse_plane(spec: str, d: int):
    import re
    m = re.fullmatch(r"x(\d+)x(\d+)", spec)
    if not m:
        raise ValueError(f"plane must look like x1x2, got {spec!r}")
    i, j = int(m.group(1)) - 1, int(m.group(2)) - 1
    if not (0 <= i < d and 0 <= j < d and i != j):
        raise ValueError(f"plane {spec!r} invalid for dimension {d}")
    return i, j


def grid_table(field, problem, res: int, plane=(0, 1), fixed: float = 0.0):
    """Grid over one coordinate plane: columns x_i, x_j, u, u_exact, abs_err, residual."""
    i, j = plane
    g = np.linspace(-1.0, 1.0, res)
    A, B = np.meshgrid(g, g)
    pts = np.full((res * res, problem.dim), fixed, dtype=float)
    pts[:, i], pts[:, j] = A.ravel(), B.ravel()
    u = field.value(pts)
    exact = problem.exact_solution(pts)
    residual = ResidualTarget(field, problem).residual(pts) ** 2
    return pts[:, i], pts[:, j], u, exact, np.abs(u - exact), residual


def cmd_export_grid(args) -> int:
    try:
        problem = get_problem(args.problem)
        plane = _parse_plane(args.plane, problem.dim)
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.ckpt == "exact":
        field = ExactField(problem)
    else:
        try:
            params = MlpParams.load(args.ckpt)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot read checkpoint {args.ckpt}: {exc}", file=sys.stderr)
            return 1
        if params.dim != problem.dim:
            print("error: checkpoint dimension does not match the problem", file=sys.stderr)
            return EXIT_USAGE
        field = MlpField(params)
    cols = grid_table(field, problem, args.res, plane, args.fixed)
    i, j = plane
    header = [f"x{i + 1}", f"x{j + 1}", "u", "u_exact", "abs_err", "residual"]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, header, np.column_stack(cols))
    if args.plot:
        from .plotting import plot_grid
        plot_grid(cols[0], cols[1], dict(zip(header[2:], cols[2:])), out.with_suffix(".png"),
                  labels=header[:2])
    print(f"wrote {args.res * args.res} rows -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aais-pinn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit an AAIS mixture to a named synthetic target")
    fit.add_argument("--target", required=True)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", default="runs")
    fit.add_argument("--kind", default="student-t", choices=["gaussian", "student-t"])
    fit.add_argument("--dof", type=float, default=3.0)
    fit.add_argument("--n-search", type=int, default=10000)
    fit.add_argument("--n-samples", type=int, default=1000)
    fit.add_argument("--no-plot", dest="plot", action="store_false")
    fit.set_defaults(func=cmd_fit)

    solve = sub.add_parser("solve", help="run a resampling PINN experiment from TOML")
    solve.add_argument("--config", required=True)
    solve.add_argument("--out", default=None, help="override the config's output root")
    solve.add_argument("--no-plot", dest="plot", action="store_false")
    solve.set_defaults(func=cmd_solve)

    grid = sub.add_parser("export-grid", help="tabulate a checkpoint on a 2D slice")
    grid.add_argument("--ckpt", required=True, help="checkpoint path, or 'exact'")
    grid.add_argument("--problem", required=True, choices=sorted(PRESETS))
    grid.add_argument("--res", type=int, default=101)
    grid.add_argument("--plane", default="x1x2")
    grid.add_argument("--fixed", type=float, default=0.0,
                      help="value of the coordinates outside the plane")
    grid.add_argument("--out", required=True)
    grid.add_argument("--no-plot", dest="plot", action="store_false")
    grid.set_defaults(func=cmd_export_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # small dense matmuls: extra BLAS threads only add contention
    with threadpool_limits(limits=int(os.environ.get("AAIS_PINN_BLAS_THREADS", "1"))):
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
