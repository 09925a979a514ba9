"""Experiment runner.

    rpregress run CONFIG [--jobs N] [--seed S] [--output-dir P]
    rpregress gen CONFIG -o PATH [--seed S]
    rpregress eval --model-seedspec CONFIG[:SEED] --data PATH [--train PATH]

Exit codes: 0 success, 2 invalid configuration or input, 3 core failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, load_dataset, save_dataset
from .geometry import APPROX2, EXACT, InvalidInput
from .regress import AUTOSTOP, CV, PARTITIONERS, adaptive_rptree, decrease_rate, empirical_risk
from .rptree import CoreFailure, RngStream
from .synth import (FAMILIES, FunctionSpec, GeneratorSpec, NoiseSpec, RegressionProblem,
                    oracle_excess_risk, random_orthonormal)

log = logging.getLogger("rpregress")

EXIT_CONFIG = 2
EXIT_CORE = 3

RESULT_FIELDS = [
    "family", "partitioner", "selector", "delta", "diameter_mode", "noisy_median_scope",
    "D", "d", "n", "seed",
    "k", "n_cells", "level", "avg_diam", "empirical_risk", "oracle_excess_risk",
    "build_ms", "predict_ns_per_query",
]
TIMING_FIELDS = ("build_ms", "predict_ns_per_query")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    family: str = "subspace"
    d: int = 2
    epsilon: float = 0.05
    rotation_seed: int = 0
    order: int = 6
    f_kind: str = "linear"
    lipschitz: float = 1.0
    f_c: float = 4.0
    f_value: float = 0.0
    noise_kind: str = "uniform"
    noise_radius: float = 1.0
    y_diameter: float | None = None
    partitioner: str = "rptree"
    selector: str = CV
    delta: float = 0.05
    n_grid: list = field(default_factory=lambda: [256])
    D_grid: list = field(default_factory=lambda: [8])
    seeds: list = field(default_factory=lambda: [0])
    repetitions: int | None = None
    diameter_mode: str = EXACT
    noisy_median_scope: str = "root"
    squared_diameter: bool = True
    eval_points: int = 100_000
    latency_queries: int = 200
    output_dir: str = "results"

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown generator family {self.family!r}")
        if self.partitioner not in PARTITIONERS:
            raise ConfigError(f"unknown partitioner {self.partitioner!r}")
        if self.selector not in (CV, AUTOSTOP):
            raise ConfigError(f"unknown selector {self.selector!r}")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        for name in ("n_grid", "D_grid", "seeds"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be nonempty")
        if min(self.n_grid) < 2:
            raise ConfigError("every n must be >= 2")
        if self.diameter_mode not in (EXACT, APPROX2):
            raise ConfigError(f"unknown diameter_mode {self.diameter_mode!r}")
        if self.noisy_median_scope not in ("root", "cell"):
            raise ConfigError(f"unknown noisy_median_scope {self.noisy_median_scope!r}")
        if self.f_kind not in ("linear", "sine", "constant"):
            raise ConfigError(f"unknown function kind {self.f_kind!r}")
        if self.noise_kind not in ("uniform", "gaussian"):
            raise ConfigError(f"unknown noise kind {self.noise_kind!r}")
        if self.repetitions is not None and self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        for D in self.D_grid:
            if self.family == "sparse_star" and D < 2:
                raise ConfigError("sparse_star needs D >= 2")
            if self.family == "subspace" and not 1 <= self.d <= D:
                raise ConfigError("subspace needs 1 <= d <= D")
            if self.family == "sphere_manifold" and not 1 <= self.d < D:
                raise ConfigError("sphere_manifold needs 1 <= d < D")
            if self.family == "hilbert_curve" and D < 2:
                raise ConfigError("hilbert_curve needs D >= 2")
        return self


def _ints(text):
    return [int(v) for v in text.replace(",", " ").split()]


_KEYS = {
    "generator": {"family": str, "d": int, "epsilon": float, "rotation_seed": int,
                  "order": int},
    "function": {"kind": ("f_kind", str), "lipschitz": float, "c": ("f_c", float),
                 "value": ("f_value", float)},
    "noise": {"kind": ("noise_kind", str), "radius": ("noise_radius", float),
              "y_diameter": float},
    "experiment": {"partitioner": str, "selector": str, "delta": float, "n_grid": _ints,
                   "d_grid": ("D_grid", _ints), "seeds": _ints, "repetitions": int,
                   "diameter_mode": str, "noisy_median_scope": str,
                   "squared_diameter": "bool", "eval_points": int, "latency_queries": int,
                   "output_dir": str},
}


def parse_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = ExperimentConfig()
    for section in cp.sections():
        keys = _KEYS.get(section)
        if keys is None:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            spec = keys.get(key)
            if spec is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            attr, conv = spec if isinstance(spec, tuple) else (key, spec)
            try:
                if conv == "bool":
                    value = cp.getboolean(section, key)
                elif raw.strip() == "" and attr in ("repetitions", "y_diameter"):
                    value = None
                else:
                    value = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
            setattr(cfg, attr, value)
    return cfg.validate()


def build_problem(cfg: ExperimentConfig, D: int) -> RegressionProblem:
    gen = GeneratorSpec(cfg.family, D, cfg.d, cfg.epsilon, cfg.rotation_seed, cfg.order)
    if cfg.f_kind == "constant":
        f = FunctionSpec("constant", value=cfg.f_value)
    else:
        # weight direction inside the data span so the Lipschitz constant is felt
        span = {"subspace": cfg.d, "sphere_manifold": cfg.d + 1, "hilbert_curve": 2}.get(cfg.family)
        u = np.random.default_rng([cfg.rotation_seed, 7]).normal(size=span or D)
        u /= np.linalg.norm(u)
        w = random_orthonormal(D, span, cfg.rotation_seed) @ u if span else u
        f = FunctionSpec(cfg.f_kind, cfg.lipschitz * w, c=cfg.f_c)
    prob = RegressionProblem(gen, f, NoiseSpec(1.0, cfg.noise_kind))
    y_diam = cfg.y_diameter if cfg.y_diameter is not None else prob.f_range + 2 * cfg.noise_radius
    prob.noise = NoiseSpec(y_diam, cfg.noise_kind)
    return prob


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def run_point(cfg: ExperimentConfig, n: int, D: int, seed: int, return_model: bool = False):
    """Generate, fit, select and evaluate one (n, D, seed) grid point.

    Returns the result row, or ``(row, model, trace)`` with ``return_model``.
    """
    prob = build_problem(cfg, D)
    train = prob.dataset(n, _rng(seed, n, D, 0))
    cv_set = prob.dataset(n, _rng(seed, n, D, 1))
    test = prob.dataset(n, _rng(seed, n, D, 2))
    fresh = prob.points(cfg.eval_points, _rng(seed, n, D, 3))
    t0 = time.perf_counter()
    model, trace = adaptive_rptree(
        train, cfg.delta, cfg.selector, RngStream(seed, (n, D)),
        test=cv_set if cfg.selector == CV else None, partitioner=cfg.partitioner,
        noisy_median_scope=cfg.noisy_median_scope, diameter_mode=cfg.diameter_mode,
        squared_diam=cfg.squared_diameter, n_repetitions=cfg.repetitions)
    build_ms = (time.perf_counter() - t0) * 1e3
    queries = fresh[: cfg.latency_queries]
    lat = []
    for q in queries:
        t = time.perf_counter_ns()
        model.predict_one(q)
        lat.append(time.perf_counter_ns() - t)
    snap = model.frontier
    row = {
        "family": cfg.family, "partitioner": cfg.partitioner, "selector": cfg.selector,
        "delta": cfg.delta, "diameter_mode": cfg.diameter_mode,
        "noisy_median_scope": cfg.noisy_median_scope,
        "D": D, "d": cfg.d, "n": n, "seed": seed,
        "k": decrease_rate(trace), "n_cells": snap.size, "level": snap.level,
        "avg_diam": snap.avg_diam,
        "empirical_risk": empirical_risk(model, test),
        "oracle_excess_risk": oracle_excess_risk(model, prob.f, fresh),
        "build_ms": build_ms,
        "predict_ns_per_query": float(np.median(lat)) if lat else 0.0,
    }
    return (row, model, trace) if return_model else row


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in RESULT_FIELDS])


def loglog_slope(ns, values) -> float:
    ns = np.asarray(ns, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = v > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log2(ns[ok]), np.log2(v[ok]), 1)[0])


def summarize(rows) -> str:
    out = io.StringIO()
    out.write("# Results\n\n")
    for D in sorted({r["D"] for r in rows}):
        sub = [r for r in rows if r["D"] == D]
        ns = sorted({r["n"] for r in sub})
        out.write(f"## D = {D}\n\n")
        out.write("| n | median oracle excess risk | median empirical risk | median k | "
                  "median cells |\n|---|---|---|---|---|\n")
        med_risk, med_emp = [], []
        for n in ns:
            rs = [r for r in sub if r["n"] == n]
            o = float(np.median([r["oracle_excess_risk"] for r in rs]))
            e = float(np.median([r["empirical_risk"] for r in rs]))
            k = float(np.median([r["k"] for r in rs]))
            c = float(np.median([r["n_cells"] for r in rs]))
            med_risk.append(o)
            med_emp.append(e)
            out.write(f"| {n} | {o:.6g} | {e:.6g} | {k:g} | {c:g} |\n")
        if len(ns) > 1:
            out.write(f"\nlog2-log2 slope of median oracle excess risk vs n: "
                      f"{loglog_slope(ns, med_risk):.4f}\n")
            out.write(f"log2-log2 slope of median empirical risk vs n: "
                      f"{loglog_slope(ns, med_emp):.4f}\n")
        out.write("\n")
    return out.getvalue()


def _grid(cfg):
    return [(n, D, s) for D in cfg.D_grid for n in cfg.n_grid for s in cfg.seeds]


def run_experiment(config_path, output_dir=None, jobs=1, seed=None) -> int:
    try:
        cfg = parse_config(config_path)
        if seed is not None:
            cfg.seeds = [seed]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, status = [], 0
    grid = _grid(cfg)
    try:
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as pool:
                futures = [pool.submit(run_point, cfg, n, D, s) for n, D, s in grid]
                for fut in futures:
                    rows.append(fut.result())
        else:
            for n, D, s in grid:
                rows.append(run_point(cfg, n, D, s))
    except CoreFailure as exc:
        print(f"core failure: {exc} {json.dumps(exc.diagnostics, default=str)}", file=sys.stderr)
        status = EXIT_CORE
    write_csv(rows, out / "results.csv")
    (out / "summary.md").write_text(summarize(rows) if rows else "# Results\n\nno rows\n")
    return status


def cmd_gen(config_path, out_path, seed=None) -> int:
    try:
        cfg = parse_config(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    s = cfg.seeds[0] if seed is None else seed
    n, D = cfg.n_grid[0], cfg.D_grid[0]
    data = build_problem(cfg, D).dataset(n, _rng(s, n, D, 0))
    save_dataset(data, out_path)
    return 0


def cmd_eval(seedspec, data_path, train_path=None) -> int:
    path, _, seed_txt = seedspec.rpartition(":") if ":" in seedspec else (seedspec, "", "")
    try:
        cfg = parse_config(path)
        seed = int(seed_txt) if seed_txt else cfg.seeds[0]
        test = load_dataset(data_path)
    except (ConfigError, InvalidInput, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    n, D = cfg.n_grid[0], cfg.D_grid[0]
    if train_path is not None:
        try:
            train = load_dataset(train_path)
        except (InvalidInput, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        cv_set = None
        if cfg.selector == CV:
            log.warning("fixed training data: splitting 50/50 for cross-validation")
            perm = _rng(seed, 99).permutation(len(train))
            half = len(train) // 2
            train, cv_set = train.subset(np.sort(perm[:half])), train.subset(np.sort(perm[half:]))
    else:
        prob = build_problem(cfg, D)
        train = prob.dataset(n, _rng(seed, n, D, 0))
        cv_set = prob.dataset(n, _rng(seed, n, D, 1))
    if test.D != train.D:
        print(f"error: data dimension {test.D} != model dimension {train.D}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        model, trace = adaptive_rptree(
            train, cfg.delta, cfg.selector, RngStream(seed, (n, D)),
            test=cv_set if cfg.selector == CV else None, partitioner=cfg.partitioner,
            noisy_median_scope=cfg.noisy_median_scope, diameter_mode=cfg.diameter_mode,
            squared_diam=cfg.squared_diameter, n_repetitions=cfg.repetitions)
    except CoreFailure as exc:
        print(f"core failure: {exc}", file=sys.stderr)
        return EXIT_CORE
    print(json.dumps({"empirical_risk": empirical_risk(model, test), "k": decrease_rate(trace),
                      "n_cells": model.frontier.size, "level": model.frontier.level}))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rpregress", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment sweep")
    p_run.add_argument("config")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--output-dir")
    p_gen = sub.add_parser("gen", help="generate a dataset file")
    p_gen.add_argument("config")
    p_gen.add_argument("-o", "--output", required=True)
    p_gen.add_argument("--seed", type=int)
    p_eval = sub.add_parser("eval", help="rebuild a model from a seed and score a dataset")
    p_eval.add_argument("--model-seedspec", required=True, help="CONFIG[:SEED]")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--train")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return run_experiment(args.config, args.output_dir, args.jobs, args.seed)
    if args.command == "gen":
        return cmd_gen(args.config, args.output, args.seed)
    return cmd_eval(args.model_seedspec, args.data, args.train)


if __name__ == "__main__":
    sys.exit(main())
