"""Command-line entry point: ``rpflab <subcommand> --config cfg.json --out DIR``.

Exit codes: 0 success, 1 configuration error, 2 an iteration did not
converge, 3 a certificate or acceptance threshold failed.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, build_function, build_map, build_measure, build_modulus,
                     echo, grid_size, load_config, section)
from .decay import (FitError, fit_decay, measure_correlation_decay, measure_operator_decay,
                    measure_wasserstein_decays)
from .grid import circle_distance
from .kernel import (coupled_trajectory, coupling_cost, flatness_empirical, flatness_runs,
                     flatness_series)
from .rpf import ConvergenceError, rpf_triple

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_REFUTED = 0, 1, 2, 3


def _clean(obj):
    # strict JSON has no inf/nan, so spell them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _envelope(cfg, args, **body) -> dict:
    return {"tool": "rpflab", "version": __version__, "command": args.command,
            "seed": _seed(cfg, args), "config": echo(cfg), **body}


def _seed(cfg, args, required=False):
    if args.seed is not None:
        return int(args.seed)
    if "seed" in cfg:
        if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
            raise ConfigError("config.seed: expected a non-negative integer")
        return cfg["seed"]
    if required:
        raise ConfigError("config: sampled computations need a 'seed' (or --seed)")
    return None


def _tolerances(cfg):
    tol = section(cfg, "tolerances", {"power", "dual", "max_iter"})
    return (float(tol.get("power", 1e-13)), float(tol.get("dual", 1e-12)),
            int(tol.get("max_iter", 100_000)))


def _rpf(cfg):
    m = build_map(cfg)
    n = grid_size(cfg)
    potential = build_function(cfg, "potential", n, m)
    power_tol, dual_tol, max_iter = _tolerances(cfg)
    res = cfg.get("merge_resolution")
    return m, rpf_triple(m, potential, power_tol, res, dual_tol, max_iter)


def cmd_rpf(cfg, args, out: Path) -> int:
    m, data = _rpf(cfg)
    d = data.diagnostics
    passed = (d["eigen_residual"] <= 1e-8 and d["normalized_residual"] <= 1e-8
              and d["h_min"] > 0 and abs(data.mu.total - 1.0) <= 1e-12)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "h.csv", "w") as fh:
        fh.write("x,h\n")
        for x, v in zip(data.h.nodes, data.h.values):
            fh.write(f"{x!r},{v!r}\n")
    data.mu.to_csv(out / "mu.csv")
    data.nu.to_csv(out / "nu.csv")
    _write_json(out / "rpf.json", _envelope(cfg, args, map=m.to_dict(), passed=passed,
                                            **data.to_dict()))
    return EXIT_OK if passed else EXIT_REFUTED


def cmd_flatness(cfg, args, out: Path) -> int:
    m = build_map(cfg)
    fl = section(cfg, "flatness", {"method", "n_max", "tail_rtol", "r_grid", "pairs",
                                   "words_per_pair", "t_max", "derivative_bound"})
    method = fl.get("method", "series")
    target = build_modulus(cfg.get("target_modulus", {}), "target_modulus")
    seed = _seed(cfg, args, required=method != "series")
    if method == "series":
        pot_mod = build_modulus(cfg.get("potential_modulus", {}), "potential_modulus")
        r_grid = fl.get("r_grid")
        cert = flatness_series(m, pot_mod, target, None if r_grid is None else np.asarray(r_grid),
                               int(fl.get("n_max", 200_000)), float(fl.get("tail_rtol", 0.05)))
    elif method in ("empirical", "runs"):
        potential = build_function(cfg, "potential", grid_size(cfg), m)
        kw = dict(pairs=int(fl.get("pairs", 2000)),
                  words_per_pair=int(fl.get("words_per_pair", 4)),
                  t_max=int(fl.get("t_max", 200)), seed=seed)
        if method == "empirical":
            cert = flatness_empirical(m, potential, target, **kw)
        else:
            db = fl.get("derivative_bound")
            try:
                cert = flatness_runs(m, potential, target,
                                     derivative_bound=None if db is None else tuple(db), **kw)
            except ValueError as exc:
                raise ConfigError(f"flatness: {exc}") from exc
    else:
        raise ConfigError(f"flatness.method: unknown method {method!r}")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "certificate.json", _envelope(cfg, args, map=m.to_dict(), **cert.to_dict()))
    return EXIT_OK if cert.passed else EXIT_REFUTED


def cmd_decay(cfg, args, out: Path) -> int:
    dc = section(cfg, "decay", {"quantities", "t_max", "family", "fit_t_min", "fit_t_max",
                                "pairs", "merge_resolution", "thresholds"})
    quantities = dc.get("quantities", ["operator"])
    unknown = set(quantities) - {"operator", "wasserstein", "correlation"}
    if unknown:
        raise ConfigError(f"decay.quantities: unknown {sorted(unknown)}")
    th = section(dc, "thresholds", {"max_residual", "max_slope", "half_life_ratio"})
    family = dc.get("family", "exponential")
    t_max = int(dc.get("t_max", 200))
    fit_lo, fit_hi = dc.get("fit_t_min"), dc.get("fit_t_max")
    m = build_map(cfg)
    n = grid_size(cfg)
    observables = {}
    if {"operator", "correlation"} & set(quantities):
        observables["f"] = build_function(cfg, "observable", n, m)
        observables["g"] = (build_function(cfg, "observable_b", n, m)
                            if "observable_b" in cfg else observables["f"])
    if "wasserstein" in quantities:
        spec = build_modulus(cfg.get("target_modulus", {}), "target_modulus")
        pairs = [tuple(p) for p in dc.get("pairs", [[0.3, 0.7]])]
        if not all(len(p) == 2 for p in pairs):
            raise ConfigError("decay.pairs: expected a list of [x, y]")
    m, data = _rpf(cfg)
    out.mkdir(parents=True, exist_ok=True)
    fits, ok = {}, True

    def record(name, trace, check_residual=True):
        nonlocal ok
        trace.to_csv(out / f"{name}_trace.csv")
        try:
            model = fit_decay(trace, family, fit_lo, fit_hi)
        except FitError as exc:
            fits[name] = {"error": str(exc)}
            ok = False
            return None
        fits[name] = model.to_dict()
        if check_residual and "max_residual" in th and model.fit_residual > th["max_residual"]:
            ok = False
        if "max_slope" in th and model.slope > th["max_slope"]:
            ok = False
        return model

    if "operator" in quantities:
        record("operator", measure_operator_decay(m, data, observables["f"], t_max))
    if "correlation" in quantities:
        record("correlation", measure_correlation_decay(m, data, observables["f"],
                                                        observables["g"], t_max))
    if "wasserstein" in quantities:
        traces = measure_wasserstein_decays(m, data.normalized_potential, pairs, spec, t_max,
                                            float(dc.get("merge_resolution", 1.0 / 512)),
                                            threads=args.threads)
        halves = []
        for i, tr in enumerate(traces):
            model = record(f"wasserstein_{i}", tr, check_residual=False)
            if model is not None:
                halves.append(model.half_life(tr.r))
        if halves:
            fits["wasserstein_half_lives"] = halves
            if "half_life_ratio" in th and max(halves) > th["half_life_ratio"] * min(halves):
                ok = False
    _write_json(out / "fits.json", _envelope(cfg, args, rho=data.rho, fits=fits, passed=ok))
    return EXIT_OK if ok else EXIT_REFUTED


def cmd_wasserstein(cfg, args, out: Path) -> int:
    from .transport import wasserstein

    ws = section(cfg, "wasserstein", {"mu", "nu", "modulus", "method"})
    mu = build_measure(cfg, ws.get("mu"), "wasserstein.mu")
    nu = build_measure(cfg, ws.get("nu"), "wasserstein.nu")
    spec = build_modulus(ws.get("modulus", {"alpha": 1.0}), "wasserstein.modulus")
    try:
        value, plan = wasserstein(mu, nu, spec, ws.get("method", "auto"))
    except ValueError as exc:
        raise ConfigError(f"wasserstein: {exc}") from exc
    out.mkdir(parents=True, exist_ok=True)
    plan.to_csv(out / "plan.csv", mu, nu)
    _write_json(out / "wasserstein.json", _envelope(cfg, args, value=value, method=plan.method))
    return EXIT_OK


def cmd_coupling(cfg, args, out: Path) -> int:
    m = build_map(cfg)
    cp = section(cfg, "coupling", {"x", "y", "t", "mode", "n_samples", "word"})
    spec = build_modulus(cfg.get("target_modulus", {"alpha": 1.0}), "target_modulus")
    try:
        x, y, t = float(cp["x"]), float(cp["y"]), int(cp["t"])
    except KeyError as exc:
        raise ConfigError(f"coupling: missing {exc}") from exc
    mode = cp.get("mode", "exhaustive")
    seed = _seed(cfg, args, required=mode == "sampled")
    traj = None
    try:
        est = coupling_cost(m, x, y, t, spec, mode, int(cp.get("n_samples", 10_000)), seed or 0)
        if "word" in cp:
            potential = None
            if "potential" in cfg:
                potential = build_function(cfg, "potential", grid_size(cfg), m)
            traj = coupled_trajectory(m, x, y, cp["word"], potential)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"coupling: {exc}") from exc
    out.mkdir(parents=True, exist_ok=True)
    if traj is not None:
        traj.to_csv(out / "trajectory.csv")
    body = {"value": est.value, "stderr": est.stderr, "n_words": est.n_words,
            "initial_distance": float(circle_distance(x, y))}
    _write_json(out / "coupling.json", _envelope(cfg, args, **body))
    return EXIT_OK


def _selftest_checks():
    from .grid import GridFunction
    from .maps import k_fold, pm_log, pomeau_manneville, tabulated_map, verify_branch_contraction
    from .moduli import choose_r0, eval_modulus
    from .rpf import power_iteration
    from .transport import DiscreteMeasure, wasserstein

    def moduli():
        for a, b in [(1, 0), (0.5, 0), (0, 2), (0.3, 1), (0.5, -1)]:
            s = choose_r0(a, b)
            r = np.linspace(0, 1, 2001)
            w = eval_modulus(s, r)
            if np.any(np.diff(w) <= 0) or np.any(np.diff(w, 2) > 1e-12):
                return False
        return True

    def maps():
        y = np.random.default_rng(1).random(2000)
        for m in (pomeau_manneville(0.5), pomeau_manneville(1.0), pm_log(1.0), k_fold(3)):
            if np.max(np.abs(np.mod(m.forward(m.branches(y)) - y + 0.5, 1) - 0.5)) > 1e-13:
                return False
            if not verify_branch_contraction(m, 2000, seed=2).passed:
                return False
        return True

    def transport():
        rng = np.random.default_rng(3)
        specs = [choose_r0(1, 0), choose_r0(0.5, 0), choose_r0(0, 2)]
        for i in range(30):
            n = int(rng.integers(2, 6))
            mu = DiscreteMeasure(rng.random(n), np.full(n, 1 / n))
            nu = DiscreteMeasure(rng.random(n), np.full(n, 1 / n))
            s = specs[i % 3]
            value, _ = wasserstein(mu, nu, s)
            brute = min(math.fsum(eval_modulus(s, circle_distance(mu.positions, nu.positions[list(p)])))
                        for p in itertools.permutations(range(n))) / n
            if abs(value - brute) > 1e-12:
                return False
        return True

    def kernel():
        y = np.linspace(0, 1, 11)
        m = tabulated_map(y, np.stack([y, y / 2 + 0.25]), 2.0, {"form": "linear", "lambda": 1.0},
                          contracted_branch=1)
        s = choose_r0(1, 0)
        return all(abs(coupling_cost(m, 0.2, 0.4, t, s).value - 0.2 * 0.75**t) < 1e-10
                   for t in range(9))

    def rpf():
        m = k_fold(2)
        rho, h = power_iteration(m, GridFunction.from_callable(lambda x: 0 * x, 1024))
        return abs(rho - 1) < 1e-10 and np.max(np.abs(h.values - 1)) < 1e-8

    return [("moduli", moduli), ("maps", maps), ("transport", transport),
            ("kernel", kernel), ("rpf", rpf)]


def cmd_selftest(cfg, args, out) -> int:
    failed = 0
    for name, check in _selftest_checks():
        start = time.perf_counter()
        try:
            ok = bool(check())
        except Exception as exc:  # report and keep going
            ok = False
            print(f"  {name}: error {exc!r}", file=sys.stderr)
        elapsed = time.perf_counter() - start
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name:<10} {elapsed:7.2f}s")
    print(f"{'all checks passed' if not failed else f'{failed} check(s) failed'}")
    return EXIT_OK if not failed else EXIT_REFUTED


COMMANDS = {
    "rpf": cmd_rpf,
    "flatness": cmd_flatness,
    "decay": cmd_decay,
    "wasserstein": cmd_wasserstein,
    "coupling": cmd_coupling,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpflab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rpflab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name != "selftest")
        p.add_argument("--out", type=Path, default=Path("rpflab_out"))
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        return COMMANDS[args.command](cfg, args, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
