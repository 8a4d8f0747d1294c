"""Command-line surface.

Subcommands: generate, complete, spectrum, nb-spectrum, predict,
oracle-tree, experiment.  Everything is file-in/file-out; exit code 0 on
success, 2 on configuration or input errors, 3 on numerical-consistency
errors.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import completion, model, nonbacktracking as nb, oracles
from .errors import (
    ContractViolationError,
    MatrixMarketParseError,
    NumericalConsistencyError,
)
from .experiments import ExperimentConfig, run_experiment
from .sparse import read_matrix_market, write_matrix_market

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def ingest(path, fmt="matrix_market"):
    """Parse an observed-entries file; values stay raw (scaling is downstream)."""
    if fmt != "matrix_market":
        raise ContractViolationError(f"unsupported format {fmt!r}")
    return read_matrix_market(path)


def _np_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _json_dump(payload, path):
    if path is None or path == "-":
        json.dump(payload, sys.stdout, indent=2, default=_np_default)
        sys.stdout.write("\n")
    else:
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, default=_np_default)


def _pair_payload(pair):
    return {
        "value": [pair.value.real, pair.value.imag],
        "modulus": abs(pair.value),
        "lr_overlap": pair.lr_overlap,
        "residual": pair.residual,
        "converged": pair.converged,
        "is_real": pair.is_real,
        "cluster": pair.cluster,
    }


def _cmd_generate(args):
    if bool(args.eigenvalues) == bool(args.sigma):
        raise ContractViolationError("pass exactly one of --sigma / --eigenvalues")
    if args.eigenvalues:
        eigs = [float(x) for x in args.eigenvalues.split(",")]
        gt = model.generate_ground_truth(args.n, args.n, eigenvalues=eigs,
                                         sampler=args.sampler, seed=args.seed)
    else:
        sigma = [float(x) for x in args.sigma.split(",")]
        gt = model.generate_ground_truth(args.m, args.n, singular_values=sigma,
                                         sampler=args.sampler, seed=args.seed)
    if args.out_truth:
        model.save_truth_bundle(gt, args.out_truth)
    if args.out_obs:
        if args.d is None:
            raise ContractViolationError("--d is required to write observations")
        if args.symmetric_mask:
            if not gt.symmetric:
                raise ContractViolationError(
                    "--symmetric-mask needs a symmetric ground truth"
                )
            mask = model.sample_symmetric_mask(gt.n, args.d, args.seed)
        else:
            mask = model.sample_mask(gt.m, gt.n, args.d, args.seed)
        obs = model.observe(gt, mask, 1.0)
        write_matrix_market(obs.matrix, args.out_obs)
    print(f"generated {gt.m}x{gt.n} rank-{gt.rank} truth "
          f"(sampler={gt.sampler}, seed={gt.seed})")
    return EXIT_OK


def _truth_overlaps(gt, left_factors, right_factors):
    gl = np.abs(gt.left_vectors.T @ left_factors)
    gr = np.abs(gt.right_vectors.T @ right_factors)
    return {"left": gl.tolist(), "right": gr.tolist()}


def _cmd_complete(args):
    observed = ingest(args.input)
    cm = completion.complete(observed, args.d, r_hat=args.rank,
                             method=args.method, seed=args.seed)
    payload = {
        "method": cm.method,
        "rank": cm.rank,
        "weights": cm.weights.tolist(),
        "warnings": cm.warnings,
        "estimates": [
            {
                "nu": e.nu, "eta": e.eta, "sigma_hat": e.sigma_hat,
                "x_lr_dot": e.x_lr_dot, "y_lr_dot": e.y_lr_dot,
                "c1_sim": e.c1_sim, "c2_sim": e.c2_sim,
                "c1_avg": e.c1_avg, "c2_avg": e.c2_avg,
                "w_sim": e.w_sim, "w_avg": e.w_avg,
            }
            for e in cm.estimates
        ],
    }
    if args.truth:
        gt = model.load_truth_bundle(args.truth)
        payload["frobenius_error_sq"] = cm.frobenius_error_sq(gt)
        payload["overlaps_vs_truth"] = _truth_overlaps(
            gt, cm.left_factors, cm.right_factors
        )
    _json_dump(payload, args.out)
    return EXIT_OK


def _cmd_spectrum(args):
    observed = ingest(args.input)
    a = observed.scaled(observed.ncols / args.d)
    report = completion.square_spectrum(a, k=args.k, seed=args.seed)
    payload = {
        "k": args.k,
        "d": args.d,
        "pairs": [_pair_payload(p) for p in report.pairs],
        "bulk_radius_estimate": report.bulk_radius_estimate,
        "iterations": report.iterations,
    }
    if args.truth:
        gt = model.load_truth_bundle(args.truth)
        phi = gt.right_vectors
        payload["overlaps_vs_truth"] = [
            [float(abs(np.vdot(p.right, phi[:, j]))) for j in range(gt.rank)]
            for p in report.pairs
        ]
    _json_dump(payload, args.out)
    return EXIT_OK


def _cmd_nb_spectrum(args):
    observed = ingest(args.input)
    op = nb.nb_operator_from_observed(observed, args.dbar)
    gt = model.load_truth_bundle(args.truth) if args.truth else None
    report, predictions = nb.nb_spectrum(op, k=args.k, gt=gt, d=args.dbar,
                                         seed=args.seed)
    payload = {
        "k": args.k,
        "dbar": args.dbar,
        "n_edges": op.dim_in,
        "has_loops": op.edges.has_loops,
        "pairs": [_pair_payload(p) for p in report.pairs],
        "bulk_radius_estimate": report.bulk_radius_estimate,
        "predictions": predictions,
    }
    if gt is not None:
        lowered = []
        for p in report.pairs:
            low = nb.lower(p.right, op.edges, args.dbar)
            lowered.append([
                float(abs(np.vdot(low.hat_unit, gt.right_vectors[:, j])))
                for j in range(gt.rank)
            ])
        payload["lowered_overlaps_vs_truth"] = lowered
    _json_dump(payload, args.out)
    return EXIT_OK


def _cmd_predict(args):
    gt = model.load_truth_bundle(args.truth)
    profile = model.detection_profile(gt, args.d, args.variant)
    tables = model.correlation_tables(gt, profile, args.d)
    payload = {
        "profile": profile.to_dict(),
        "tables": tables.to_dict(),
    }
    if gt.rank == 1:
        zeta = gt.left_vectors[:, 0]
        xi = gt.right_vectors[:, 0]
        if gt.symmetric:
            f4 = float(gt.n * np.sum(xi**4))
            payload["rank_one"] = model.rank_one_predictions(
                args.d, fourth_moment=f4, symmetric=True,
                sigma1=float(gt.singular_values[0]),
            )
        else:
            payload["rank_one"] = model.rank_one_predictions(
                args.d, symmetric=False,
                zeta_l4sq=float(np.sqrt(np.sum(zeta**4))),
                xi_l4sq=float(np.sqrt(np.sum(xi**4))),
                n=gt.n, sigma1=float(gt.singular_values[0]),
            )
    else:
        payload["rank_one_omitted"] = True
    _json_dump(payload, args.out)
    return EXIT_OK


def _cmd_oracle_tree(args):
    gt = model.load_truth_bundle(args.truth)
    moments = oracles.mc_tree_moments(
        gt, args.d, args.x, args.i, args.j, args.t, args.samples, args.seed
    )
    payload = moments.to_dict()
    payload["within_3se"] = moments.within()
    _json_dump(payload, args.out)
    return EXIT_OK


def _cmd_experiment(args):
    config = ExperimentConfig.from_toml(args.config)
    record = run_experiment(config, output_dir=args.out, threads=args.threads,
                            figures=not args.no_figures)
    print(f"{config.scenario}: {len(record.rows)} metric rows in "
          f"{record.wall_clock:.1f}s (hash {record.config_hash})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="asymeig",
        description="Sparse matrix completion by asymmetric eigen-decomposition",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a ground truth and observations")
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma", help="comma-separated singular values")
    p.add_argument("--eigenvalues", help="comma-separated signed eigenvalues")
    p.add_argument("--sampler", default="gaussian")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=float)
    p.add_argument("--symmetric-mask", action="store_true")
    p.add_argument("--out-truth")
    p.add_argument("--out-obs")
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("complete", help="run the completion pipeline")
    p.add_argument("--input", required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--rank", type=int)
    p.add_argument("--method", choices=["sim", "avg", "svd"], default="avg")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth")
    p.add_argument("--out")
    p.set_defaults(fn=lambda a: _cmd_complete(_fix_method(a)))

    p = sub.add_parser("spectrum", help="top eigenpairs of the square observed matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_spectrum)

    p = sub.add_parser("nb-spectrum", help="weighted non-backtracking spectrum")
    p.add_argument("--input", required=True)
    p.add_argument("--dbar", type=float, required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_nb_spectrum)

    p = sub.add_parser("predict", help="theory quantities from a truth bundle")
    p.add_argument("--truth", required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--variant", choices=["square", "nb", "rectangular"],
                   default="square")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("oracle-tree", help="Monte-Carlo tree-moment checks")
    p.add_argument("--truth", required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--x", type=int, default=0)
    p.add_argument("--i", type=int, default=0)
    p.add_argument("--j", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_oracle_tree)

    p = sub.add_parser("experiment", help="run a configured scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=_cmd_experiment)
    return parser


def _fix_method(args):
    if args.method == "svd":
        args.method = "svd_baseline"
    return args


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ContractViolationError, MatrixMarketParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalConsistencyError as exc:
        print(f"numerical consistency error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
