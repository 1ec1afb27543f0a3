"""Command-line surface.

Subcommands: ``gen`` (dataset files), ``dist`` (pairwise distance between two
complex files), ``fgw`` (fused objective with optional trade-off diagnostics),
``gram`` (distance/Gram/feature CSVs for a collection), ``fit`` (train the
transport GP on a dataset, write a checkpoint), and ``experiment`` (the full
train/test comparison, optionally for both kernels).

Exit codes: 0 on success, 2 for validation errors, 3 for numerical failures.
The environment variable ``CELLOT_CACHE_DIR`` selects a persistent distance
cache directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import experiment as exp
from .complexes import complex_hash, load_complex, validate
from .exceptions import NumericalError, ValidationError
from .fgw import build_instance, fgw_limit_check, fgw_solve
from .gp import fit as gp_fit
from .kernels import (DistanceCache, KernelSpec, gram, pairwise_distance,
                      sigma_psd_search, truncate_and_features,
                      write_matrix_csv)
from .transport import (gaussian_signal, optimal_map, pad_to, w2_closed_form,
                        wp_empirical)

CACHE_ENV = "CELLOT_CACHE_DIR"


def _cache_from_env() -> DistanceCache | None:
    directory = os.environ.get(CACHE_ENV)
    return DistanceCache(directory) if directory else None


def _add_kernel_flags(parser, with_kind=True):
    if with_kind:
        parser.add_argument("--kind", choices=["w", "fgw"], default="w",
                            help="transport distance backing the kernel")
    parser.add_argument("--p", type=float, default=2.0, help="cost exponent")
    parser.add_argument("--alpha", type=float, default=0.5,
                        help="feature/structure trade-off (fgw only)")
    parser.add_argument("--degree", type=int, default=0,
                        help="cell degree of the signals")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellot",
        description="Transport distances, kernels, and GP maps for cell complexes")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a dataset of complex pairs")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.add_argument("--n", type=int, default=200, help="number of pairs")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--split", type=float, default=0.7)
    p_gen.add_argument("--vertices", type=int, default=8)
    p_gen.add_argument("--edge-prob", type=float, default=0.45)
    p_gen.add_argument("--fill-prob", type=float, default=0.3)

    p_dist = sub.add_parser("dist", help="distance between two complex files")
    p_dist.add_argument("file_a")
    p_dist.add_argument("file_b")
    _add_kernel_flags(p_dist)
    p_dist.add_argument("--pad", action="store_true",
                        help="zero-pad the smaller Laplacian on size mismatch")
    p_dist.add_argument("--seed", type=int, default=0,
                        help="seed for the empirical solver (kind w, p != 2)")
    p_dist.add_argument("--plan", help="write the coupling (fgw) or transport "
                                       "map (w) as CSV")

    p_fgw = sub.add_parser("fgw", help="fused objective between two complex files")
    p_fgw.add_argument("file_a")
    p_fgw.add_argument("file_b")
    _add_kernel_flags(p_fgw, with_kind=False)
    p_fgw.add_argument("--plan", help="write the coupling as CSV")
    p_fgw.add_argument("--limits", help="comma-separated alpha ladder in (0,1); "
                                        "prints endpoint diagnostics")

    p_gram = sub.add_parser("gram", help="distance matrix, Gram matrix, and features")
    p_gram.add_argument("files", nargs="*", help="complex files")
    p_gram.add_argument("--data", help="dataset directory (uses the sources)")
    _add_kernel_flags(p_gram)
    p_gram.add_argument("--sigma", type=float, help="fixed bandwidth")
    p_gram.add_argument("--auto-sigma", action="store_true",
                        help="median heuristic plus PSD ladder search")
    p_gram.add_argument("--pad", action="store_true")
    p_gram.add_argument("--out", required=True, help="output directory")

    p_fit = sub.add_parser("fit", help="train the transport GP on a dataset")
    p_fit.add_argument("--data", required=True, help="dataset directory from gen")
    _add_kernel_flags(p_fit)
    p_fit.add_argument("--epochs", type=int, default=15)
    p_fit.add_argument("--batch", type=int, default=1)
    p_fit.add_argument("--lr", type=float, default=1e-2)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--out", required=True, help="output directory")

    p_exp = sub.add_parser("experiment",
                           help="generate, train, and compare on a test split")
    _add_kernel_flags(p_exp)
    p_exp.add_argument("--both", action="store_true",
                       help="run both kernels and report the ordering")
    p_exp.add_argument("--n", type=int, default=200)
    p_exp.add_argument("--split", type=float, default=0.7)
    p_exp.add_argument("--epochs", type=int, default=15)
    p_exp.add_argument("--batch", type=int, default=1)
    p_exp.add_argument("--lr", type=float, default=1e-2)
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--vertices", type=int, default=8)
    p_exp.add_argument("--edge-prob", type=float, default=0.45)
    p_exp.add_argument("--fill-prob", type=float, default=0.3)
    p_exp.add_argument("--out", required=True)

    return parser


def _load_validated(path):
    complex = load_complex(path)
    problems = validate(complex)
    if problems:
        raise ValidationError(f"{path} is invalid: " + "; ".join(problems))
    return complex


def cmd_gen(args) -> int:
    manifest = exp.write_dataset(args.out, seed=args.seed, n_pairs=args.n,
                                 split=args.split, n_vertices=args.vertices,
                                 edge_prob=args.edge_prob,
                                 fill_prob=args.fill_prob)
    print(f"wrote {manifest['n_pairs']} pairs to {args.out} "
          f"({len(manifest['train_ids'])} train / {len(manifest['test_ids'])} test)")
    return 0


def cmd_dist(args) -> int:
    a = _load_validated(args.file_a)
    b = _load_validated(args.file_b)
    if args.kind == "fgw":
        inst = build_instance(a, b, degree=args.degree, alpha=args.alpha,
                              p=args.p)
        plan, value = fgw_solve(inst)
        matrix = plan.coupling
    else:
        sig_a = gaussian_signal(a, args.degree)
        sig_b = gaussian_signal(b, args.degree)
        if sig_a.size != sig_b.size:
            if not args.pad:
                raise ValidationError(
                    f"Hodge Laplacian dimensions differ ({sig_a.size} vs "
                    f"{sig_b.size}); they must be equal to compare signal "
                    "distributions. Re-run with --pad to embed the smaller "
                    "complex as isolated cells.")
            size = max(sig_a.size, sig_b.size)
            sig_a = pad_to(sig_a, size)
            sig_b = pad_to(sig_b, size)
        if args.p == 2:
            value = w2_closed_form(sig_a, sig_b)
        else:
            value = wp_empirical(sig_a, sig_b, p=args.p, seed=args.seed)
        matrix = optimal_map(sig_a, sig_b)
    print(f"{value:.6f}")
    if args.plan:
        write_matrix_csv(args.plan, matrix, [str(i) for i in range(matrix.shape[0])])
    return 0


def cmd_fgw(args) -> int:
    a = _load_validated(args.file_a)
    b = _load_validated(args.file_b)
    inst = build_instance(a, b, degree=args.degree, alpha=args.alpha, p=args.p)
    plan, value = fgw_solve(inst)
    print(f"{value:.6f}")
    if args.plan:
        write_matrix_csv(args.plan, plan.coupling,
                         [str(i) for i in range(plan.coupling.shape[0])])
    if args.limits:
        ladder = [float(v) for v in args.limits.split(",") if v.strip()]
        report = fgw_limit_check(inst, ladder)
        for alpha, objective in zip(report.alphas, report.objectives):
            print(f"alpha={alpha:g} objective={objective:.6f}")
        print(f"gap_alpha0={report.gap_alpha0:.3e} "
              f"gap_alpha1={report.gap_alpha1:.3e}")
    return 0


def cmd_gram(args) -> int:
    if args.data:
        pairs, _ = exp.load_dataset(args.data)
        items = [p.source for p in pairs]
    elif args.files:
        items = [_load_validated(f) for f in args.files]
    else:
        raise ValidationError("gram needs complex files or --data")
    spec = KernelSpec(kind=args.kind, p=args.p, alpha=args.alpha,
                      sigma=1.0, degree=args.degree)
    cache = _cache_from_env()
    distances = pairwise_distance(items, spec, cache=cache, pad=args.pad)
    if args.auto_sigma or args.sigma is None:
        sigma = sigma_psd_search(distances)
    else:
        sigma = args.sigma
    kernel = gram(distances, sigma)
    model = truncate_and_features(kernel)
    ids = [complex_hash(c)[:12] for c in items]
    os.makedirs(args.out, exist_ok=True)
    write_matrix_csv(os.path.join(args.out, "distances.csv"), distances, ids)
    write_matrix_csv(os.path.join(args.out, "gram.csv"), kernel, ids)
    write_matrix_csv(os.path.join(args.out, "features.csv"), model.features, ids)
    print(f"sigma={sigma:.6g} rank={model.rank} items={len(items)}")
    return 0


def _checkpoint_dict(theta, model, config) -> dict:
    return {
        "theta": [float(v) for v in theta],
        "kernel": {
            "kind": config["kind"], "p": config["p"], "alpha": config["alpha"],
            "degree": config["degree"], "sigma": float(model.features.sigma_),
            "bandwidth_scale": float(model.bandwidth_scale),
        },
        "rank": int(model.rank),
        "n_out": int(model.n_out),
        "feature_basis": [[float(v) for v in row]
                          for row in model.final_gram_model.basis],
        "feature_eigenvalues": [float(v) for v in
                                model.final_gram_model.eigenvalues[:model.rank]],
        "training": config,
        "history": model.history,
    }


def load_checkpoint(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read checkpoint {path}: {exc}") from exc
    for key in ("theta", "kernel", "rank", "history"):
        if key not in data:
            raise ValidationError(f"checkpoint {path} is missing {key!r}")
    return data


def cmd_fit(args) -> int:
    pairs, manifest = exp.load_dataset(args.data)
    train = [pairs[i] for i in manifest["train_ids"]]
    test = [pairs[i] for i in manifest["test_ids"]]
    spec = KernelSpec(kind=args.kind, p=args.p, alpha=args.alpha,
                      degree=args.degree)
    cache_dir = os.environ.get(CACHE_ENV)
    theta, model, _ = gp_fit(train, spec=spec, epochs=args.epochs,
                             batch_size=args.batch, learning_rate=args.lr,
                             seed=args.seed, eval_pairs=test or None,
                             cache_dir=cache_dir)
    os.makedirs(args.out, exist_ok=True)
    config = {"kind": args.kind, "p": args.p, "alpha": args.alpha,
              "degree": args.degree, "epochs": args.epochs,
              "batch": args.batch, "lr": args.lr, "seed": args.seed,
              "data": args.data}
    exp.atomic_write_text(
        os.path.join(args.out, "checkpoint.json"),
        json.dumps(_checkpoint_dict(theta, model, config), indent=2) + "\n")
    exp.write_loss_csv(os.path.join(args.out, f"loss_{args.kind}.csv"),
                       model.history)
    final = model.history[-1]
    print(f"final train_loss={final['train_loss']:.6f} "
          f"test_loss={final.get('test_loss', float('nan')):.6f} "
          f"noise={final['noise_variance']:.6g}")
    return 0


def cmd_experiment(args) -> int:
    config = exp.ExperimentConfig(
        n_pairs=args.n, split=args.split, epochs=args.epochs,
        batch_size=args.batch, learning_rate=args.lr, kind=args.kind,
        p=args.p, alpha=args.alpha, degree=args.degree, seed=args.seed,
        n_vertices=args.vertices, edge_prob=args.edge_prob,
        fill_prob=args.fill_prob, out_dir=args.out)
    kinds = ["w", "fgw"] if args.both else [args.kind]
    summary = exp.run_experiment(config, kinds=kinds)
    for kind, stats in summary["kernels"].items():
        print(f"{kind}: test_loss={stats['final_test_loss']:.6f} "
              f"train_loss={stats['final_train_loss']:.6f}")
    if "ordering" in summary:
        print(f"lower test loss: {summary['ordering']['lower_test_loss']}")
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "dist": cmd_dist,
    "fgw": cmd_fgw,
    "gram": cmd_gram,
    "fit": cmd_fit,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
