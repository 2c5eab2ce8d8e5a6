"""Command-line entry point.

Exit codes: 0 success, 1 invalid flags or inputs, 2 failure while running.
Every file output goes through a temp file and a rename.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .data import SYNTHETIC_KINDS, DumpFormatError, SyntheticSpec, generate, load_dump, write_dump
from .model import VARIANTS, CheckpointError, ShapeError, VariantError, atomic_write_bytes, load_checkpoint
from .optim import OptimConfig
from .trainer import TrainConfig, TrainingDivergedError, pareto_sweep, sweep_csv, train

log = logging.getLogger("bilinear_ae")


class UsageError(Exception):
    """Bad flags or config values; maps to exit code 1."""


# -- config files --------------------------------------------------------------

# config key -> (argparse dest, type)
CONFIG_KEYS = {
    "lr": ("lr", float), "steps": ("steps", int), "alpha": ("alpha", float),
    "alpha_warmup": ("alpha_warmup", int), "ns_iters": ("ns_iters", int), "seed": ("seed", int),
    "d_in": ("d_in", int), "d_lat": ("d_lat", int), "d_mix": ("d_mix", int), "variant": ("variant", str),
    "k": ("k", int), "batch_size": ("batch_size", int), "data": ("data", str),
    "checkpoint": ("checkpoint", str), "metrics": ("metrics", str), "log_every": ("log_every", int),
    "block_size": ("block_size", int), "warmup_frac": ("warmup_frac", float),
    "synthetic": ("synthetic", str),
}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{no}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{source}:{no}: unknown config key {key!r}")
        dest, typ = CONFIG_KEYS[key]
        value = value.strip("\"'")
        try:
            out[dest] = typ(value)
        except ValueError:
            raise UsageError(f"{source}:{no}: bad value {value!r} for {key}") from None
    return out


def _merge_config(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Fill unset flags from the config file, then from defaults."""
    merged = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"--config: no such file {path}")
        merged = parse_config(path.read_text(), str(path))
    for dest, default in defaults.items():
        if getattr(args, dest, None) is None:
            setattr(args, dest, merged.get(dest, default))
    return args


TRAIN_DEFAULTS = {
    "d_in": None, "d_lat": 256, "d_mix": None, "variant": "vanilla", "alpha": 0.1, "lr": 0.01,
    "steps": 1024, "alpha_warmup": 256, "ns_iters": 5, "seed": 0, "k": 50, "batch_size": 512,
    "data": None, "checkpoint": None, "metrics": None, "log_every": 16, "block_size": 512,
    "warmup_frac": 0.5, "synthetic": None,
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--data", help="BACT activation dump")
    p.add_argument("--synthetic", choices=SYNTHETIC_KINDS, help="train on a synthetic stream instead of --data")
    p.add_argument("--variant", choices=VARIANTS + ("topk",))
    p.add_argument("--d-in", dest="d_in", type=int, help="expected input width (read from the dump if unset)")
    p.add_argument("--d-lat", dest="d_lat", type=int)
    p.add_argument("--d-mix", dest="d_mix", type=int)
    p.add_argument("--k", type=int, help="active latents for the topk baseline")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--warmup-frac", dest="warmup_frac", type=float)
    p.add_argument("--alpha-warmup", dest="alpha_warmup", type=int)
    p.add_argument("--ns-iters", dest="ns_iters", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--block-size", dest="block_size", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--seed", type=int)


def _train_config(args) -> TrainConfig:
    _merge_config(args, TRAIN_DEFAULTS)
    if args.data is None and args.synthetic is None:
        raise UsageError("missing --data (path to a BACT dump); or pass --synthetic KIND")
    synthetic = None
    if args.data is not None:
        path = Path(args.data)
        if not path.is_file():
            raise UsageError(f"--data: no such file {path}")
        if args.d_in is None:
            from .data import read_dump_header
            args.d_in = read_dump_header(path).d_in
    else:
        args.d_in = args.d_in or 16
        synthetic = SyntheticSpec(args.synthetic, d_in=args.d_in, seed=args.seed)
    if args.variant in ("mixed", "combined") and args.d_mix is None:
        raise UsageError(f"--d-mix is required for variant {args.variant}")
    optim = OptimConfig(lr=args.lr, steps=args.steps, warmup_frac=args.warmup_frac,
                        alpha_warmup_steps=args.alpha_warmup, ns_iters=args.ns_iters)
    return TrainConfig(d_in=args.d_in, d_lat=args.d_lat, d_mix=args.d_mix, variant=args.variant,
                       alpha=args.alpha, optim=optim, data_path=args.data, synthetic=synthetic,
                       batch_size=args.batch_size, log_every=args.log_every, checkpoint=None,
                       seed=args.seed, k=args.k, block_size=args.block_size)


# -- commands ------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    subspace = tuple(int(s) for s in args.subspace.split(",")) if args.subspace else None
    if subspace is None:
        subspace = {"circle_manifold": (0, 1), "sphere_manifold": (0, 1, 2)}.get(args.kind, (0, 1))
    spec = SyntheticSpec(args.kind, d_in=args.d_in, n_features=args.n_features, subspace=subspace,
                         sparsity=args.sparsity or 1 / args.n_features, noise=args.noise, seed=args.seed)
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    batch = generate(spec, args.n)
    write_dump(args.out, batch.rows)
    truth = batch.truth
    if args.truth:
        payload = {"kind": spec.kind, "d_in": spec.d_in, "seed": spec.seed,
                   "directions": None if truth.directions is None else truth.directions.tolist(),
                   "subspace": None if truth.subspace is None else truth.subspace.tolist()}
        atomic_write_bytes(args.truth, json.dumps(payload).encode())
    print(f"wrote {len(batch)} rows of width {spec.d_in} to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _train_config(args)
    if args.checkpoint is None:
        raise UsageError("missing --checkpoint (output path)")
    model, report = train(config.with_(checkpoint=args.checkpoint))
    if args.metrics:
        atomic_write_bytes(args.metrics, report.metrics_csv().encode())
    if report.final is not None:
        print(f"held-out error={report.final.error:.6g} density={report.final.density:.6g}")
    return 0


def cmd_sweep(args) -> int:
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    except ValueError:
        raise UsageError(f"--alphas: expected comma-separated numbers, got {args.alphas!r}") from None
    if not alphas or any(a < 0 for a in alphas):
        raise UsageError("--alphas needs at least one non-negative value")
    config = _train_config(args)
    table = pareto_sweep(config, alphas)
    text = sweep_csv(table)
    if args.out:
        atomic_write_bytes(args.out, text.encode())
    else:
        sys.stdout.write(text)
    return 0


def _load(path, flag):
    if not Path(path).is_file():
        raise UsageError(f"{flag}: no such file {path}")
    return load_checkpoint(path)


def _batches(path, model, batch_size=4096):
    if not Path(path).is_file():
        raise UsageError(f"--data: no such file {path}")
    return list(load_dump(path, batch_size, expected_d_in=model.d_in))


def _json(obj) -> bytes:
    def conv(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o).__name__)
    return json.dumps(obj, default=conv, indent=1).encode()


def _rows_csv(header, rows) -> bytes:
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) if not isinstance(v, (int, np.integer)) else str(v) for v in r) for r in rows]
    return ("\n".join(lines) + "\n").encode()


def cmd_analyze(args) -> int:
    model = _load(args.model, "--model")
    if model.variant == "topk":
        raise UsageError("--model: analyses need a bilinear checkpoint, got a topk model")
    batches = _batches(args.data, model)
    out = Path(args.out)
    if args.what == "density":
        h = analysis.density_histogram(model, batches, bins=args.bins)
        atomic_write_bytes(out / "density.csv", _rows_csv(("latent", "density"), enumerate(h["densities"])))
        atomic_write_bytes(out / "density_hist.json", _json(h))
    elif args.what == "activation-hist":
        if args.latent is None:
            raise UsageError("--latent is required for --what activation-hist")
        h = analysis.activation_histogram(model, batches, args.latent, bins=args.bins)
        atomic_write_bytes(out / f"activation_hist_{args.latent}.json", _json(h))
    elif args.what == "prefix":
        curve = analysis.prefix_curve(model, batches)
        rows = [(k + 1, e) for k, e in enumerate(curve)]
        if args.greedy:
            perm, greedy = analysis.greedy_reorder(model, batches)
            rows = [(k + 1, e, int(p), g) for k, (e, p, g) in enumerate(zip(curve, perm, greedy))]
            header = ("k", "error", "greedy_latent", "greedy_error")
        else:
            header = ("k", "error")
        atomic_write_bytes(out / "prefix.csv", _rows_csv(header, rows))
    else:
        scores = analysis.cluster_scores(model)
        cands = analysis.candidate_clusters(model, n_candidates=args.candidates, top_k=args.top_k)
        payload = {"scores": scores, "candidates": [
            {"members": c.members, "weights": c.weights, "eigenvalues": c.eigenvalues[:3],
             "basis": c.basis} for c in cands]}
        atomic_write_bytes(out / "clusters.json", _json(payload))
    print(f"wrote {args.what} analysis to {out}")
    return 0


def cmd_export_manifold(args) -> int:
    model = _load(args.model, "--model")
    if model.variant == "topk":
        raise UsageError("--model: manifold export needs a bilinear checkpoint")
    if not 0 < args.top_fraction <= 1:
        raise UsageError("--top-fraction must lie in (0, 1]")
    batches = _batches(args.data, model)
    if args.seed_row is not None:
        comp = analysis.build_composite(model, args.seed_row, args.top_k)
    else:
        cands = analysis.candidate_clusters(model, n_candidates=args.rank + 1, top_k=args.top_k)
        if args.rank >= len(cands):
            raise UsageError(f"--rank {args.rank}: only {len(cands)} candidate clusters")
        comp = cands[args.rank]
    analysis.export_manifold(comp, batches, args.top_fraction).write(args.out, args.stem)
    print(f"wrote {args.stem}.json and {args.stem}.csv to {args.out}")
    return 0


def cmd_similarity(args) -> int:
    from .similarity import frobenius_similarity, permutation_similarity

    a, b = _load(args.a, "--a"), _load(args.b, "--b")
    if "topk" in (a.variant, b.variant):
        raise UsageError("similarity needs bilinear checkpoints")
    if a.d_in != b.d_in:
        raise UsageError(f"--a and --b have different input widths ({a.d_in} vs {b.d_in})")
    if args.metric == "frobenius":
        print(repr(frobenius_similarity(a, b)))
        return 0
    if a.d_lat != b.d_lat:
        raise UsageError(f"permutation similarity needs equal d_lat ({a.d_lat} vs {b.d_lat})")
    value, perm = permutation_similarity(a, b)
    print(repr(value))
    if args.perm_out:
        atomic_write_bytes(args.perm_out, _rows_csv(("latent_a", "latent_b"), enumerate(perm.tolist())))
    return 0


def cmd_verify(args) -> int:
    from .oracles import ORACLE_MAX_D_IN, timed_suite

    if not 1 <= args.d_in <= ORACLE_MAX_D_IN:
        raise UsageError(f"--d-in must lie in [1, {ORACLE_MAX_D_IN}]")
    results, elapsed = timed_suite(seed=args.seed, trials=args.trials, d_in=args.d_in)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  ({r.detail})")
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed in {elapsed:.2f}s")
    return 0 if all(r.passed for r in results) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilinear-ae", description="Bilinear autoencoders trained in product space.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write a synthetic BACT dump")
    p.add_argument("--kind", required=True, choices=SYNTHETIC_KINDS)
    p.add_argument("--d-in", dest="d_in", type=int, default=16)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-features", dest="n_features", type=int, default=24)
    p.add_argument("--sparsity", type=float)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--subspace", help="comma-separated coordinates of the planted manifold")
    p.add_argument("--truth", help="also write the planted structure as JSON")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model and write a BAE1 checkpoint")
    _add_train_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--metrics", help="CSV of step,error,density,total,lr,alpha")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="one training run per alpha; writes alpha,error,density")
    _add_train_flags(p)
    p.add_argument("--alphas", required=True, help="comma-separated, e.g. 0,0.1,1")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="weight and activation analyses as CSV/JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--what", required=True, choices=("density", "manifold", "prefix", "activation-hist"))
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--latent", type=int)
    p.add_argument("--greedy", action="store_true", help="prefix: add the greedy reordering")
    p.add_argument("--candidates", type=int, default=50)
    p.add_argument("--top-k", dest="top_k", type=int, default=10)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("similarity", help="compare two checkpoints")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--metric", choices=("frobenius", "permutation"), default="frobenius")
    p.add_argument("--perm-out", dest="perm_out", help="permutation CSV (permutation metric only)")
    p.set_defaults(func=cmd_similarity)

    p = sub.add_parser("export-manifold", help="project top inputs onto a composite's eigenbasis")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rank", type=int, default=0, help="candidate cluster to export, by score")
    p.add_argument("--seed-row", dest="seed_row", type=int, help="build the composite from this row instead")
    p.add_argument("--top-k", dest="top_k", type=int, default=10)
    p.add_argument("--top-fraction", dest="top_fraction", type=float, default=0.25)
    p.add_argument("--stem", default="manifold")
    p.set_defaults(func=cmd_export_manifold)

    p = sub.add_parser("verify", help="check kernel-trick results against materialised oracles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--d-in", dest="d_in", type=int, default=6)
    p.set_defaults(func=cmd_verify)
    return parser


VALIDATION_ERRORS = (UsageError, ShapeError, VariantError, CheckpointError, DumpFormatError,
                     FileNotFoundError, ValueError)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
