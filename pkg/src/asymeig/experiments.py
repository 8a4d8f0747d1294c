"""Seeded experiment harness reproducing the desk-scale figure data.

Each scenario runner executes one (d, seed) cell and returns long-format
metric rows (scenario, d, seed, index, metric, measured, predicted).
Predictions are always recomputed from the ground truth alone, never from
the measurements.  Cells run in a thread pool; rows are gathered and
written in deterministic order so identical configs give byte-identical
CSV output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import completion, model, nonbacktracking as nb
from .errors import ContractViolationError
from .operators import SparseOperator
from .eigensolve import top_eigenpairs

SCENARIOS = {}


def _register(name):
    def deco(fn):
        SCENARIOS[name] = fn
        return fn

    return deco


@dataclass
class ExperimentConfig:
    scenario: str
    seeds: list
    d_grid: list
    dims: dict = field(default_factory=dict)
    sampler: str = "gaussian"
    methods: list = field(default_factory=lambda: ["sim", "avg", "svd_baseline"])
    params: dict = field(default_factory=dict)
    output_dir: str = "experiment-out"

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ContractViolationError(
                f"unknown scenario {self.scenario!r}; registered: "
                f"{sorted(SCENARIOS)}"
            )
        if not self.seeds:
            raise ContractViolationError("seeds list must not be empty")
        if not self.d_grid:
            raise ContractViolationError("d_grid must not be empty")
        return self

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "seeds": list(self.seeds),
            "d_grid": [float(d) for d in self.d_grid],
            "dims": dict(self.dims),
            "sampler": self.sampler,
            "methods": list(self.methods),
            "params": dict(self.params),
            "output_dir": self.output_dir,
        }

    def config_hash(self):
        payload = self.to_dict()
        payload.pop("output_dir", None)  # not part of the semantic identity
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_toml(self):
        return _emit_toml(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        extra = {k: v for k, v in data.items() if k not in known}
        kwargs = {k: v for k, v in data.items() if k in known}
        if extra:
            kwargs.setdefault("params", {}).update(extra)
        return cls(**kwargs).validate()

    @classmethod
    def from_toml(cls, path):
        try:
            import tomllib as toml_reader
        except ModuleNotFoundError:
            import tomli as toml_reader

        with open(path, "rb") as fh:
            return cls.from_dict(toml_reader.load(fh))


def _emit_toml(data, prefix=""):
    """Minimal TOML writer for the config's scalar/list/table schema."""
    lines = []
    tables = []
    for key, value in data.items():
        if isinstance(value, dict):
            tables.append((key, value))
        else:
            lines.append(f"{key} = {_toml_value(value)}")
    for key, value in tables:
        lines.append("")
        lines.append(f"[{prefix}{key}]")
        for k2, v2 in value.items():
            lines.append(f"{k2} = {_toml_value(v2)}")
    return "\n".join(lines) + "\n"


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ContractViolationError(f"cannot serialize config value {v!r}")


@dataclass
class MetricRow:
    scenario: str
    d: float
    seed: int
    index: int
    family: str
    metric: str
    measured: float
    predicted: float | None


@dataclass
class RunRecord:
    config_hash: str
    scenario: str
    rows: list
    wall_clock: float

    def summary(self):
        groups = {}
        for r in self.rows:
            key = (r.metric, r.d)
            groups.setdefault(key, []).append(r)
        out = []
        for (metric, d), rs in sorted(groups.items()):
            measured = [r.measured for r in rs]
            preds = [r.predicted for r in rs if r.predicted is not None]
            out.append({
                "metric": metric,
                "d": d,
                "mean_measured": float(np.mean(measured)),
                "std_measured": float(np.std(measured)),
                "predicted": float(np.mean(preds)) if preds else None,
                "cells": len(rs),
            })
        return out


def _two_block_truth(n, a, b):
    """The rank-two block matrix with eigenvalues a + b and a - b."""
    if n % 2:
        raise ContractViolationError("two-block example needs even n")
    phi1 = np.ones(n) / np.sqrt(n)
    phi2 = np.concatenate([np.ones(n // 2), -np.ones(n // 2)]) / np.sqrt(n)
    return model.ground_truth_from_factors(
        [float(a + b), float(a - b)],
        np.column_stack([phi1, phi2]),
        np.column_stack([phi1, phi2]),
        symmetric=True,
        sampler="two_block",
    )


@_register("er_square")
def _run_er_square(cfg, d, seed):
    n = int(cfg.dims.get("n", 5000))
    gt = model.generate_ground_truth(n, n, eigenvalues=[1.0], sampler="constant",
                                     seed=0)
    mask = model.sample_mask(n, n, d, seed)
    obs = model.observe(gt, mask, n / d)
    rep = completion.square_spectrum(obs.matrix, k=2, tol=1e-6, seed=seed)
    lam1 = d * rep.values[0].real
    lam2 = d * abs(rep.values[1])
    ones = np.ones(n) / np.sqrt(n)
    overlap = abs(np.vdot(rep.pairs[0].right, ones))
    rows = [
        MetricRow(cfg.scenario, d, seed, 0, "eigenvalues", "lambda1", lam1, d),
        MetricRow(cfg.scenario, d, seed, 1, "eigenvalues", "lambda2_modulus",
                  lam2, float(np.sqrt(d))),
        MetricRow(cfg.scenario, d, seed, 0, "overlaps", "top_overlap",
                  float(overlap), float(np.sqrt(1 - 1 / d))),
    ]
    return rows


@_register("rank1_square")
def _run_rank1_square(cfg, d, seed):
    n = int(cfg.dims.get("n", 4000))
    gt = model.generate_ground_truth(n, n, eigenvalues=[1.0], sampler=cfg.sampler,
                                     seed=int(cfg.params.get("truth_seed", 0)))
    phi = gt.right_vectors[:, 0]
    f4 = float(n * np.sum(phi**4))
    pred = model.rank_one_predictions(d, fourth_moment=f4, symmetric=True)
    mask = model.sample_mask(n, n, d, seed)
    obs = model.observe(gt, mask, n / d)
    rep = top_eigenpairs(SparseOperator(obs.matrix), k=1, tol=1e-8, seed=seed)
    pair = rep.pairs[0]
    psi = np.real(pair.right)
    psil = np.real(pair.left)
    avg = psi + psil
    avg = avg / np.linalg.norm(avg)
    rows = [
        MetricRow(cfg.scenario, d, seed, 0, "overlaps", "overlap_sim",
                  float(abs(psi @ phi)), pred["overlap_sim"]),
        MetricRow(cfg.scenario, d, seed, 0, "overlaps", "overlap_avg",
                  float(abs(avg @ phi)), pred["overlap_avg"]),
        MetricRow(cfg.scenario, d, seed, 0, "overlaps", "lr_dot",
                  float(pair.lr_overlap), pred["lr_dot"]),
        MetricRow(cfg.scenario, d, seed, 0, "eigenvalues", "lambda1",
                  float(abs(pair.value)), 1.0 if not pred["below_threshold"] else None),
    ]
    return rows


@_register("sweep_d")
def _run_sweep_d(cfg, d, seed):
    return _run_rank1_square(cfg, d, seed)


@_register("rank1_rect")
def _run_rank1_rect(cfg, d, seed):
    m = int(cfg.dims.get("m", 2000))
    n = int(cfg.dims.get("n", 3000))
    gt = model.generate_ground_truth(m, n, singular_values=[1.0],
                                     sampler=cfg.sampler,
                                     seed=int(cfg.params.get("truth_seed", 0)))
    profile = model.detection_profile(gt, d, "rectangular")
    mask = model.sample_mask(m, n, d, seed)
    obs = model.observe(gt, mask, 1.0)
    rows = []
    preds = {"sim": None, "avg": None}
    if profile.r0 >= 1:
        tables = model.correlation_tables(gt, profile, d)
        preds = {
            "sim": completion.mse_star(gt, tables, "sim"),
            "avg": completion.mse_star(gt, tables, "avg"),
        }
    for method in cfg.methods:
        cm = completion.complete(obs.matrix, d, r_hat=1, method=method, seed=seed)
        err = cm.frobenius_error_sq(gt)
        rows.append(MetricRow(cfg.scenario, d, seed, 0, "errors",
                              f"mse_{method}", float(err), preds.get(method)))
        if cm.estimates:
            est = cm.estimates[0]
            rows.append(MetricRow(cfg.scenario, d, seed, 0, "weights",
                                  f"w_{method}", float(cm.weights[0]), None))
            rows.append(MetricRow(cfg.scenario, d, seed, 0, "correlations",
                                  "c1_sim", est.c1_sim, None))
            rows.append(MetricRow(cfg.scenario, d, seed, 0, "correlations",
                                  "c2_sim", est.c2_sim, None))
    return rows


@_register("nb_example")
def _run_nb_example(cfg, d, seed):
    n = int(cfg.dims.get("n", 2000))
    a = float(cfg.params.get("a", 4.0))
    b = float(cfg.params.get("b", 1.0))
    gt = _two_block_truth(n, a, b)
    dbar = 2.0 * d
    rho = 2 * (a**2 + b**2)
    theta = float(np.sqrt(rho / d))
    theta_bar = float(np.sqrt(rho / dbar))
    mask = model.sample_mask(n, n, d, seed)
    obs = model.observe(gt, mask, n / d)
    rep = top_eigenpairs(SparseOperator(obs.matrix), k=3, tol=1e-6, seed=seed,
                         compute_left=False)
    # real eigenvalues clearly separated from the bulk (1.15 margin)
    above = [v.real for v in rep.values
             if abs(v) > 1.15 * theta and abs(v.imag) <= 1e-6 * abs(v)]
    sym_mask = model.sample_symmetric_mask(n, dbar, seed)
    sym_obs = model.observe(gt, sym_mask, 1.0)
    op = nb.nb_operator_from_observed(sym_obs.matrix, dbar)
    nb_rep = top_eigenpairs(op, k=3, tol=1e-6, seed=seed, compute_left=False)
    nb_above = [v.real for v in nb_rep.values if abs(v) > 1.15 * theta_bar
                and abs(v.imag) < 1e-6 * abs(v)]
    rows = [
        MetricRow(cfg.scenario, d, seed, 0, "eigenvalues", "a_outliers",
                  float(len(above)), 1.0),
        MetricRow(cfg.scenario, d, seed, 0, "eigenvalues", "a_lambda1",
                  float(abs(rep.values[0])), a + b),
        MetricRow(cfg.scenario, d, seed, 0, "eigenvalues", "nb_outliers",
                  float(len(nb_above)), 2.0),
        MetricRow(cfg.scenario, d, seed, 0, "eigenvalues", "nb_lambda1",
                  float(abs(nb_rep.values[0])), a + b),
        MetricRow(cfg.scenario, d, seed, 1, "eigenvalues", "nb_lambda2",
                  float(abs(nb_rep.values[1])), a - b),
        MetricRow(cfg.scenario, d, seed, 0, "thresholds", "theta", theta, theta),
        MetricRow(cfg.scenario, d, seed, 0, "thresholds", "theta_bar",
                  theta_bar, theta_bar),
    ]
    return rows


@_register("rect_two_spikes")
def _run_rect_two_spikes(cfg, d, seed):
    m = int(cfg.dims.get("m", 1000))
    n = int(cfg.dims.get("n", 5000))
    sigma = [float(s) for s in cfg.params.get("sigma", [5.0, 3.0])]
    gt = model.generate_ground_truth(m, n, singular_values=sigma,
                                     sampler=cfg.sampler,
                                     seed=int(cfg.params.get("truth_seed", 1)))
    profile = model.detection_profile(gt, d, "rectangular")
    mask = model.sample_mask(m, n, d, seed)
    obs = model.observe(gt, mask, 1.0)
    cm = completion.complete(obs.matrix, d, r_hat=len(sigma), method="avg",
                             seed=seed)
    rows = []
    for idx, est in enumerate(cm.estimates):
        pred = sigma[idx] if idx < len(sigma) else None
        rows.append(MetricRow(cfg.scenario, d, seed, idx, "eigenvalues",
                              "sigma_hat", est.sigma_hat, pred))
    bulk_lim = 1.15 * profile.theta2**2
    others = [abs(v) for v in cm.x_report.values
              if not any(abs(v.real - e.nu) < 1e-9 for e in cm.estimates)]
    rows.append(MetricRow(cfg.scenario, d, seed, 0, "eigenvalues",
                          "x_bulk_max", float(max(others)) if others else 0.0,
                          bulk_lim))
    return rows


def run_experiment(config: ExperimentConfig, output_dir=None, threads=1,
                   figures=True) -> RunRecord:
    """Execute the scenario across the d grid and seeds; emit CSV + JSON.

    Writes one CSV per metric family (long format), a JSON summary, and,
    unless disabled, a PNG figure per metric family alongside the CSVs.
    """
    config.validate()
    runner = SCENARIOS[config.scenario]
    outdir = Path(output_dir or config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    cells = [(d, seed) for d in config.d_grid for seed in config.seeds]
    start = time.time()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: runner(config, c[0], c[1]), cells))
    else:
        results = [runner(config, d, seed) for d, seed in cells]
    rows = [row for cell_rows in results for row in cell_rows]
    rows.sort(key=lambda r: (r.family, r.metric, r.d, r.seed, r.index))
    record = RunRecord(
        config_hash=config.config_hash(),
        scenario=config.scenario,
        rows=rows,
        wall_clock=time.time() - start,
    )
    _write_outputs(record, config, outdir, figures)
    return record


def _write_outputs(record: RunRecord, config, outdir: Path, figures):
    families = {}
    for r in record.rows:
        families.setdefault(r.family, []).append(r)
    for family, rows in sorted(families.items()):
        path = outdir / f"{config.scenario}_{family}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["scenario", "d", "seed", "index", "metric", "measured",
                 "predicted", "config_hash"]
            )
            for r in rows:
                writer.writerow([
                    r.scenario, repr(float(r.d)), r.seed, r.index, r.metric,
                    repr(float(r.measured)),
                    "" if r.predicted is None else repr(float(r.predicted)),
                    record.config_hash,
                ])
    summary = {
        "scenario": config.scenario,
        "config_hash": record.config_hash,
        "config": config.to_dict(),
        "wall_clock_sec": record.wall_clock,
        "summary": record.summary(),
    }
    with open(outdir / f"{config.scenario}_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    if figures:
        from .figures import render_record

        render_record(record, config, outdir)
