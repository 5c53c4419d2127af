"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Outputs default to ``$SEMLATENT_OUT_DIR`` (or ``./runs``) when no path is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import __version__
from .corpus import read_smiles, toy_corpus, write_smiles
from .descriptors import default_threshold
from .evaluation import ged_eud_report, interpolation_study, interpolation_summary, property_correlation_report, slerp
from .model import ModelConfig, TrainConfig, build_model, encode_smiles, generate, load_checkpoint, save_checkpoint, train
from .molgraph import GraphTooLarge, ged_exact
from .mutation import MutationError, generate_dataset, generate_supermutants
from .smiles import SmilesError, canonicalize, detokenize, parse
from . import pipeline as pl

OUT_ENV = "SEMLATENT_OUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _out(path: str | None, name: str) -> Path:
    p = Path(path) if path else default_out_dir() / name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _out_dir(path: str | None) -> Path:
    p = Path(path) if path else default_out_dir()
    p.mkdir(parents=True, exist_ok=True)
    return p


def _require(path: str) -> str:
    if not Path(path).is_file():
        raise FileNotFoundError(f"cannot read {path}")
    return path


def _load_model(path: str):
    pl.check_manifest_vocab(_require(path))
    return load_checkpoint(path)[0]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_canon(args) -> int:
    for s in args.smiles:
        print(canonicalize(s))
    return EXIT_OK


def cmd_ged(args) -> int:
    try:
        d = ged_exact(parse(args.a), parse(args.b), args.max)
    except GraphTooLarge as exc:
        raise ValueError(str(exc)) from exc
    print("EXCEEDS" if d is None else d)
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    out = _out(args.out, "corpus.smi")
    smiles = toy_corpus(args.n, args.seed, args.min_atoms, args.max_atoms)
    with open(out, "w") as fh:
        write_smiles(smiles, fh)
    pl.write_manifest(out, "gen-corpus", args.seed, vars_of(args))
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    anchors = pl.load_anchors(_require(args.input))
    out = _out(args.out, "dataset.jsonl")
    records = generate_dataset(anchors, args.k, args.seed, pl.distribution_for(anchors), args.workers)
    pl.save_records(records, out)
    pl.write_manifest(out, "gen-dataset", args.seed, vars_of(args, "workers"), [args.input])
    return EXIT_OK


def cmd_gen_supermutants(args) -> int:
    anchors = pl.load_anchors(_require(args.input))
    out = _out(args.out, "supermutants.jsonl")
    records = generate_supermutants(anchors, args.n, args.seed, pl.distribution_for(anchors), args.workers)
    pl.save_records(records, out)
    pl.write_manifest(out, "gen-supermutants", args.seed, vars_of(args, "workers"), [args.input])
    return EXIT_OK


def cmd_filter(args) -> int:
    records = pl.load_records(_require(args.input))
    threshold = args.threshold if args.threshold is not None else default_threshold(args.chi2_q)
    out = _out(args.out, "filtered.jsonl")
    filtered = pl.filter_records(records, threshold)
    pl.save_records(filtered, out)
    kept = sum(r.verdict == "KEPT" for r in filtered if r.j > 0)
    total = sum(1 for r in filtered if r.j > 0)
    print(f"kept {kept}/{total} mutants at threshold {threshold:.4f}")
    pl.write_manifest(out, "filter", None, {**vars_of(args), "threshold": threshold}, [args.input])
    return EXIT_OK


def _model_config(args) -> ModelConfig:
    base = asdict(ModelConfig.from_text(Path(args.config).read_text())) if args.config else {}
    overrides = {
        "lam": args.lam,
        "latent": args.latent,
        "layers": args.layers,
        "hidden": args.hidden,
        "heads": args.heads,
        "temperature": args.tau,
        "seed": args.seed,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig(**base)


def cmd_train(args) -> int:
    pl.set_deterministic()
    records = pl.load_records(_require(args.data))
    cfg = _model_config(args)
    groups = pl.training_groups(records)
    model = build_model(cfg)
    history = train(model, groups, cfg, TrainConfig(steps=args.steps, lr=args.lr, log_every=args.log_every))
    out = _out(args.out, "model.pt")
    save_checkpoint(out, model, {"seed": cfg.seed, "data": str(args.data)})
    pl.write_manifest(out, "train", cfg.seed, {**asdict(cfg), "steps": args.steps, "lr": args.lr}, [args.data])
    last = history[-1] if history else {}
    print(json.dumps({k: round(v, 6) for k, v in last.items()}, sort_keys=True))
    return EXIT_OK


def cmd_encode(args) -> int:
    model = _load_model(args.ckpt)
    with open(_require(args.input)) as fh:
        smiles = read_smiles(fh)
    codes = encode_smiles(model, smiles)
    out = _out(args.out, "codes.csv")
    with open(out, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["smiles"] + [f"z{i}" for i in range(codes.shape[1])])
        for s, z in zip(smiles, codes):
            w.writerow([s] + [f"{v:.8f}" for v in z])
    pl.write_manifest(out, "encode", None, vars_of(args), [args.ckpt, args.input])
    return EXIT_OK


def _read_codes(path: str) -> np.ndarray:
    with open(_require(path)) as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "smiles":
        raise ValueError(f"{path} is not a codes CSV")
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def cmd_generate(args) -> int:
    model = _load_model(args.ckpt)
    if args.codes:
        codes = _read_codes(args.codes)
    else:
        codes = encode_smiles(model, args.smiles)
    gen = torch.Generator().manual_seed(args.seed)
    z = np.repeat(codes, args.n, axis=0)
    for seq in generate(model, z, args.mode, args.temperature, gen):
        print(detokenize(seq))
    return EXIT_OK


def cmd_interpolate(args) -> int:
    model = _load_model(args.ckpt)
    z = encode_smiles(model, [args.left, args.right])
    gen = torch.Generator().manual_seed(args.seed)
    for t in np.linspace(0.0, 1.0, args.steps):
        mid = slerp(z[0], z[1], float(t))
        seq = generate(model, mid, args.mode, args.temperature, gen)[0]
        print(f"{t:.3f}\t{detokenize(seq)}")
    return EXIT_OK


def cmd_eval_ged(args) -> int:
    model = _load_model(args.ckpt)
    chains = pl.chain_map(pl.load_records(_require(args.chains)))
    report = ged_eud_report(chains, pl.encoder_of(model), args.tag, model.cfg.latent)
    out = _out_dir(args.out_dir)
    with open(out / f"ged_{args.tag}.csv", "w") as fh:
        report.write_csv(fh)
    with open(out / f"ged_{args.tag}.json", "w") as fh:
        report.write_json(fh)
    pl.write_manifest(out / f"ged_{args.tag}.json", "eval-ged", args.seed, vars_of(args), [args.ckpt, args.chains])
    print(json.dumps(report.summary(), sort_keys=True))
    return EXIT_OK


def cmd_eval_interp(args) -> int:
    model = _load_model(args.ckpt)
    pairs = []
    with open(_require(args.pairs)) as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 2:
                pairs.append((parts[0], parts[1]))
            elif parts:
                raise ValueError(f"expected two SMILES per line in {args.pairs}")
    results = interpolation_study(
        pairs, pl.encoder_of(model), pl.sampler_of(model, args.temperature), args.samples,
        np.random.default_rng(args.seed),
    )
    summary = interpolation_summary(results, args.tag)
    out = _out_dir(args.out_dir) / f"interp_{args.tag}.json"
    out.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    pl.write_manifest(out, "eval-interp", args.seed, vars_of(args), [args.ckpt, args.pairs])
    print(json.dumps({k: summary[k] for k in ("model_tag", "n_pairs", "n_scored", "mean_tanimoto")}, sort_keys=True))
    return EXIT_OK


def cmd_eval_prop(args) -> int:
    model = _load_model(args.ckpt)
    with open(_require(args.input)) as fh:
        smiles = read_smiles(fh)
    report = property_correlation_report(
        smiles, pl.encoder_of(model), args.draws, args.draw_size, np.random.default_rng(args.seed)
    )
    out = _out_dir(args.out_dir)
    with open(out / f"prop_{args.tag}.csv", "w") as fh:
        report.write_csv(fh)
    with open(out / f"prop_{args.tag}_coords.csv", "w") as fh:
        report.write_coords(fh)
    pl.write_manifest(out / f"prop_{args.tag}.csv", "eval-prop", args.seed, vars_of(args), [args.ckpt, args.input])
    for name, m, se in zip(report.names, report.mean, report.stderr):
        print(f"{name}\t{m:.4f}\t{se:.4f}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    summary = pl.reproduce(_out_dir(args.out_dir), args.seed, args.scale, args.workers)
    for m in summary["models"]:
        print(f"{m['model_tag']:>10}  rho={m['mean_rho']:.6f}  tau={m['mean_tau']:.6f}")
    return EXIT_OK


def vars_of(args, *drop: str) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",) + drop}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semlatent", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("canon", help="print canonical SMILES")
    s.add_argument("smiles", nargs="+")
    s.set_defaults(func=cmd_canon)

    s = sub.add_parser("ged", help="exact node-edit distance between two molecules")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--max", type=int, default=3)
    s.set_defaults(func=cmd_ged)

    s = sub.add_parser("gen-corpus", help="write a deterministic toy corpus")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--min-atoms", type=int, default=6)
    s.add_argument("--max-atoms", type=int, default=14)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gen_corpus)

    for name, func, count, default, text in (
        ("gen-dataset", cmd_gen_dataset, "--k", 10, "anchors plus k one-edit positives each, as JSONL"),
        ("gen-supermutants", cmd_gen_supermutants, "--n", 5, "one edit chain of length n per anchor, as JSONL"),
    ):
        s = sub.add_parser(name, help=text)
        s.add_argument("--anchors", "--in", dest="input", required=True, help="anchor SMILES, one per line")
        s.add_argument(count, type=int, default=default)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--out")
        s.set_defaults(func=func)

    s = sub.add_parser("filter", help="mark faulty positives by Mahalanobis distance")
    s.add_argument("--in", dest="input", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--threshold", type=float)
    g.add_argument("--chi2-q", type=float, default=0.99)
    s.add_argument("--out")
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("train", help="train an autoencoder on a filtered dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="key = value model config file")
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--latent", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--hidden", type=int)
    s.add_argument("--heads", type=int)
    s.add_argument("--tau", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int, default=TrainConfig.steps)
    s.add_argument("--lr", type=float, default=TrainConfig.lr)
    s.add_argument("--log-every", type=int, default=100)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("encode", help="write latent codes as CSV")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("generate", help="decode latent codes to SMILES")
    s.add_argument("--ckpt", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--codes", help="codes CSV from encode")
    src.add_argument("--smiles", nargs="+", help="encode these first")
    s.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("interpolate", help="decode points along the slerp path between two molecules")
    s.add_argument("--ckpt", required=True)
    s.add_argument("left")
    s.add_argument("right")
    s.add_argument("--steps", type=int, default=5)
    s.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_interpolate)

    for name, func, text in (
        ("eval-ged", cmd_eval_ged, "rank correlation of edit depth and latent distance"),
        ("eval-interp", cmd_eval_interp, "modal midpoint interpolants and their Tanimoto distances"),
        ("eval-prop", cmd_eval_prop, "rank correlation of latent distance and property differences"),
    ):
        s = sub.add_parser(name, help=text)
        s.add_argument("--ckpt", required=True)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out-dir")
        s.add_argument("--tag", default="model")
        if name == "eval-ged":
            s.add_argument("--chains", required=True, help="supermutant JSONL")
        elif name == "eval-interp":
            s.add_argument("--pairs", required=True, help="two SMILES per line")
            s.add_argument("--samples", type=int, default=100)
            s.add_argument("--temperature", type=float, default=1.0)
        else:
            s.add_argument("--in", dest="input", required=True)
            s.add_argument("--draws", type=int, default=10)
            s.add_argument("--draw-size", type=int, default=2000)
        s.set_defaults(func=func)

    s = sub.add_parser("reproduce", help="desk-scale end-to-end study")
    s.add_argument("--scale", choices=sorted(pl.SCALES), default="desk")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_reproduce)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SmilesError, MutationError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
