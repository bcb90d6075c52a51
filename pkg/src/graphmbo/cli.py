"""Configuration-driven experiment runner.

Usage:
    graphmbo run <config.json> [--seed S] [--n N] [--out DIR]
    graphmbo validate <config.json>

A config is a single JSON document selecting an experiment and its
parameters; seeds are always explicit.  Exit codes are stable: 0 success,
2 configuration problems, 3 numeric-tolerance failures, 4 solver
non-convergence.  The only environment state honored is GRAPHMBO_NUM_THREADS.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io as gio
from .continuum import (
    degree_convergence_experiment,
    dirichlet_consistency_experiment,
    flat_torus,
    heat_consistency_experiment,
    monotonicity_sweep,
    one_step_consistency_experiment,
    sample_cloud,
    uniform_sphere,
    DensityModel,
    SweepResult,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    GraphMboError,
    IsolatedVertexError,
    PaddingError,
    QuadratureError,
    SigmaValidationError,
    ToleranceError,
    UnsupportedDensityError,
)
from .euclid_grid import (
    Grid,
    half_plane_field,
    monotonicity_audit,
    random_smooth_two_phase,
    standard_bump,
)
from .kernel_graph import KernelProfile, build_graph, epsilon_scale, kernel_constants
from .mbo import (
    LabelField,
    forced_energy,
    lipschitz_forcing,
    mbo_run,
    uniform_sigma,
    validate_sigma,
)
from .operators import GraphOperator

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TOLERANCE = 3
EXIT_CONVERGENCE = 4

EXPERIMENTS = (
    "monotonicity", "degrees", "dirichlet", "heat-consistency",
    "one-step-consistency", "grid-monotonicity", "ssl-demo", "mbo-run",
)


def _model_from_config(cfg):
    spec = cfg.get("model")
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("config needs model.kind")
    kind = spec["kind"]
    if kind == "uniform-sphere":
        return uniform_sphere()
    if kind == "uniform-flat-torus":
        return flat_torus(int(spec.get("k", 2)))
    raise ConfigError(f"unsupported model kind {kind!r} (custom models are API-only)")


def _kernel_from_config(cfg, model):
    spec = cfg.get("kernel", {"shape": "gaussian"})
    try:
        return KernelProfile(
            shape=spec.get("shape", "gaussian"),
            k=int(spec.get("k", model.k)),
            scale=float(spec.get("scale", 1.0)),
            width=float(spec.get("width", 0.1)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad kernel: {exc}") from exc


def _require_seeds(cfg):
    seeds = cfg.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) for s in seeds
    ):
        raise ConfigError("config needs an explicit nonempty integer list 'seeds'")
    return seeds


def _require_grid(cfg, key, minlen=1):
    grid = cfg.get(key)
    if not isinstance(grid, list) or len(grid) < minlen:
        raise ConfigError(f"config needs a nonempty list '{key}'")
    arr = np.asarray(grid, dtype=float)
    if arr.size > 1 and not np.all(np.diff(arr) > 0):
        raise ConfigError(f"'{key}' must be strictly increasing")
    return grid


def _sigma_from_config(cfg, P):
    spec = cfg.get("sigma", "uniform")
    if spec == "uniform":
        return uniform_sigma(P)
    try:
        return validate_sigma(np.asarray(spec, dtype=float))
    except SigmaValidationError:
        raise
    except Exception as exc:
        raise ConfigError(f"bad sigma: {exc}") from exc


def validate_config(cfg):
    """Check a configuration document; raises ConfigError on problems."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {exp!r}; choose one of {', '.join(EXPERIMENTS)}"
        )
    if exp in ("monotonicity", "ssl-demo", "mbo-run"):
        if not isinstance(cfg.get("n"), int) or cfg["n"] < 2:
            raise ConfigError("config needs an integer 'n' >= 2")
        if not isinstance(cfg.get("seed"), int):
            raise ConfigError("config needs an explicit integer 'seed'")
        _model_from_config(cfg)
    if exp in ("degrees", "dirichlet", "heat-consistency", "one-step-consistency"):
        _require_seeds(cfg)
        _require_grid(cfg, "n_grid", minlen=2 if "consistency" in exp else 1)
        _model_from_config(cfg)
    if exp == "monotonicity":
        j = cfg.get("j_range", [-5, 4])
        if not (isinstance(j, list) and len(j) == 2 and j[0] <= j[1]):
            raise ConfigError("'j_range' must be [j_min, j_max] with j_min <= j_max")
    if exp == "heat-consistency" and not isinstance(cfg.get("t"), (int, float)):
        raise ConfigError("config needs a numeric 't'")
    if exp == "ssl-demo":
        frac = cfg.get("label_fraction")
        if not isinstance(frac, (int, float)) or not 0.0 < frac <= 1.0:
            raise ConfigError(
                "ssl-demo needs label_fraction in (0, 1]: labels are required"
            )
        if not isinstance(cfg.get("gamma"), (int, float)) or cfg["gamma"] <= 0:
            raise ConfigError("ssl-demo needs a positive 'gamma'")
    if exp == "mbo-run":
        P = cfg.get("P", 2)
        if not isinstance(P, int) or P < 2:
            raise ConfigError("'P' must be an integer >= 2")
        _sigma_from_config(cfg, P)
    if exp == "grid-monotonicity":
        _require_grid(cfg, "h_grid")
        if not isinstance(cfg.get("m", 256), int):
            raise ConfigError("'m' must be an integer")
        if cfg.get("field", "half-plane") not in ("half-plane", "random-smooth"):
            raise ConfigError("'field' must be half-plane or random-smooth")
        if cfg.get("field") == "random-smooth" and not isinstance(
            cfg.get("field_seed"), int
        ):
            raise ConfigError("random-smooth field needs an integer 'field_seed'")
    return cfg


def _summarize_sweep(sweep):
    for g in sweep.grid:
        med = float(np.median(sweep.observables(g)))
        print(f"{sweep.experiment}: grid={g:g} median observable = {med:.6g}")


def _run_sweep_experiment(cfg, outdir):
    exp = cfg["experiment"]
    model = _model_from_config(cfg)
    kernel = _kernel_from_config(cfg, model)
    if exp == "monotonicity":
        j0, j1 = cfg.get("j_range", [-5, 4])
        sweep = monotonicity_sweep(model, kernel, cfg["n"], cfg["seed"],
                                   j_range=range(j0, j1 + 1))
        master = cfg["seed"]
    elif exp == "degrees":
        sweep = degree_convergence_experiment(model, kernel, cfg["n_grid"],
                                              _require_seeds(cfg))
        master = cfg["seeds"][0]
    elif exp == "dirichlet":
        if cfg.get("test_function", "sphere-x3") != "sphere-x3":
            raise ConfigError("only the sphere-x3 test function is built in")
        if model.kind != "uniform-sphere":
            raise ConfigError("dirichlet experiment requires the sphere model")
        consts = kernel_constants(kernel)
        # closed form for u = x3 against the uniform sphere density
        oracle = consts.C2 / (24.0 * np.pi)
        sweep = dirichlet_consistency_experiment(
            model, kernel, lambda pts: pts[:, 2], oracle, cfg["n_grid"],
            _require_seeds(cfg),
        )
        master = cfg["seeds"][0]
    elif exp == "heat-consistency":
        if model.kind != "uniform-sphere":
            raise ConfigError("heat-consistency is configured for the sphere model")
        sweep = heat_consistency_experiment(
            model, kernel, lambda pts: pts[:, 2], float(cfg["t"]),
            cfg["n_grid"], _require_seeds(cfg),
        )
        master = cfg["seeds"][0]
    else:  # one-step-consistency
        if model.kind != "uniform-sphere":
            raise ConfigError("one-step-consistency is configured for the sphere model")
        sweep = one_step_consistency_experiment(
            model, kernel, lambda pts: (pts[:, 2] >= 0).astype(int),
            cfg.get("h", "eps2"), cfg["n_grid"], _require_seeds(cfg),
        )
        master = cfg["seeds"][0]
    paths = gio.write_sweep(sweep, outdir, master)
    _summarize_sweep(sweep)
    print(f"wrote {paths[0]} and {paths[1]}")
    return EXIT_OK


def _run_grid_monotonicity(cfg, outdir):
    m = int(cfg.get("m", 256))
    h_grid = [float(h) for h in cfg["h_grid"]]
    n_values = [int(v) for v in cfg.get("n_values", [2, 3])]
    worst = max(
        max((np.sqrt(a) + np.sqrt(b)) ** 2 for a in h_grid for b in h_grid),
        max(n * n * h for n in n_values for h in h_grid),
    )
    L = float(cfg.get("L", max(2.0, np.ceil(1.0 + 6.0 * np.sqrt(worst)))))
    grid = Grid(m=m, half_width=L)
    if cfg.get("field", "half-plane") == "half-plane":
        fld = half_plane_field(grid)
    else:
        fld = random_smooth_two_phase(grid, cfg["field_seed"])
    beta = standard_bump(grid)
    rows = monotonicity_audit(fld, beta, h_grid, n_values=n_values)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"grid-monotonicity_m{m}.csv"
    gio.write_audit_csv(rows, path)
    by_id = {}
    for row in rows:
        by_id.setdefault(row.inequality_id, []).append(row.residual - row.quadrature_bound)
    for iid in sorted(by_id):
        print(
            f"grid-monotonicity: inequality ({iid}) worst residual-bound = "
            f"{max(by_id[iid]):.3e} over {len(by_id[iid])} instances"
        )
    print(f"wrote {path}")
    return EXIT_OK


def _run_ssl_demo(cfg, outdir):
    model = _model_from_config(cfg)
    if model.kind != "uniform-sphere":
        raise ConfigError("ssl-demo is configured for the sphere model")
    kernel = _kernel_from_config(cfg, model)
    n, seed = cfg["n"], cfg["seed"]
    gamma = float(cfg["gamma"])
    frac = float(cfg["label_fraction"])
    cloud = sample_cloud(model, n, seed)
    eps = epsilon_scale(n, model.k)
    h = eps**2 if cfg.get("h", "eps2") == "eps2" else float(cfg["h"])
    steps = int(cfg.get("steps", 30))
    graph = build_graph(cloud, eps, kernel)
    op = GraphOperator(graph)

    truth = (cloud.points[:, 2] >= 0).astype(int)  # two hemispheres
    rng = np.random.default_rng([seed, 2])
    n_labels = max(1, int(round(frac * n)))
    labeled = rng.choice(n, n_labels, replace=False)
    forcing = lipschitz_forcing(graph, (labeled, truth[labeled].astype(float)), gamma)

    init = rng.integers(0, 2, n)
    init[labeled] = truth[labeled]
    traj = mbo_run(op, LabelField.from_indices(init, 2), uniform_sigma(2), h,
                   steps, forcing=forcing)
    final = traj.fields[-1].to_indices()
    accuracy = float(np.mean(final == truth))

    outdir.mkdir(parents=True, exist_ok=True)
    base = outdir / f"ssl-demo_seed{seed}"
    gio.write_labels_csv(traj.fields[-1], base.with_suffix(".labels.csv"))
    gio.write_energy_trace_csv(traj.reports, base.with_suffix(".energy.csv"))
    summary = {
        "accuracy": accuracy, "n": n, "seed": seed, "gamma": gamma,
        "label_fraction": frac, "h": h, "steps_run": traj.stop_index,
        "stabilized": traj.stabilized,
    }
    with open(base.with_suffix(".json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"ssl-demo: accuracy = {accuracy:.4f} after {traj.stop_index} steps "
          f"({'stabilized' if traj.stabilized else 'budget exhausted'})")
    print(f"wrote {base}.labels.csv, {base}.energy.csv, {base}.json")
    return EXIT_OK


def _run_mbo(cfg, outdir):
    model = _model_from_config(cfg)
    kernel = _kernel_from_config(cfg, model)
    n, seed = cfg["n"], cfg["seed"]
    P = int(cfg.get("P", 2))
    sigma = _sigma_from_config(cfg, P)
    cloud = sample_cloud(model, n, seed)
    eps = epsilon_scale(n, model.k)
    h = eps**2 if cfg.get("h", "eps2") == "eps2" else float(cfg["h"])
    steps = int(cfg.get("steps", 20))
    graph = build_graph(cloud, eps, kernel)
    op = GraphOperator(graph)
    rng = np.random.default_rng([seed, 3])
    if cfg.get("init", "random") == "hemisphere":
        if model.kind != "uniform-sphere" or P != 2:
            raise ConfigError("hemisphere init needs the sphere model and P = 2")
        idx = (cloud.points[:, 2] >= 0).astype(int)
    else:
        idx = rng.integers(0, P, n)
    traj = mbo_run(op, LabelField.from_indices(idx, P), sigma, h, steps)
    outdir.mkdir(parents=True, exist_ok=True)
    base = outdir / f"mbo-run_seed{seed}"
    gio.write_labels_csv(traj.fields[-1], base.with_suffix(".labels.csv"))
    gio.write_energy_trace_csv(traj.reports, base.with_suffix(".energy.csv"))
    energies = [r.total for r in traj.reports]
    print(f"mbo-run: {traj.stop_index} steps, energy {energies[0]:.6g} -> "
          f"{energies[-1]:.6g} ({'stabilized' if traj.stabilized else 'budget exhausted'})")
    print(f"wrote {base}.labels.csv, {base}.energy.csv")
    return EXIT_OK


def run_config(cfg, outdir=None):
    validate_config(cfg)
    outdir = Path(outdir if outdir is not None else cfg.get("out", "."))
    exp = cfg["experiment"]
    if exp in ("monotonicity", "degrees", "dirichlet", "heat-consistency",
               "one-step-consistency"):
        return _run_sweep_experiment(cfg, outdir)
    if exp == "grid-monotonicity":
        return _run_grid_monotonicity(cfg, outdir)
    if exp == "ssl-demo":
        return _run_ssl_demo(cfg, outdir)
    return _run_mbo(cfg, outdir)


def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="graphmbo", description="graph MBO experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the seed / seeds list")
    p_run.add_argument("--n", type=int, default=None, help="override n")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_val = sub.add_parser("validate", help="validate a JSON config")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    threads = os.environ.get("GRAPHMBO_NUM_THREADS")
    if threads:
        try:
            import numba

            numba.set_num_threads(max(1, int(threads)))
        except (ValueError, ImportError):
            pass

    try:
        cfg = _load_config(args.config)
        if args.command == "validate":
            validate_config(cfg)
            print("config ok")
            return EXIT_OK
        if args.seed is not None:
            cfg["seed"] = args.seed
            if "seeds" in cfg:
                cfg["seeds"] = [args.seed]
        if args.n is not None:
            cfg["n"] = args.n
        return run_config(cfg, outdir=args.out)
    except (ConfigError, SigmaValidationError, DimensionError,
            UnsupportedDensityError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ToleranceError, QuadratureError, IsolatedVertexError,
            PaddingError) as exc:
        print(f"numeric-tolerance failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except GraphMboError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
