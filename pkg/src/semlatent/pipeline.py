"""Reproducible run plumbing: manifests, dataset stages and the desk-scale end-to-end study."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import __version__
from .corpus import filter_anchors, read_smiles, toy_corpus, write_smiles
from .descriptors import default_threshold, filter_faulty_positives, fit_covariance, properties_of
from .evaluation import (
    CorrelationReport,
    ged_eud_report,
    interpolation_study,
    interpolation_summary,
    property_correlation_report,
)
from .model import (
    Autoencoder,
    ModelConfig,
    TrainConfig,
    build_model,
    encode_smiles,
    generate,
    save_checkpoint,
    train,
)
from .mutation import (
    MutantRecord,
    atom_type_distribution,
    generate_dataset,
    generate_supermutants,
    group_by_anchor,
    read_jsonl,
    write_jsonl,
)
from .smiles import VOCAB, detokenize, parse

logger = logging.getLogger(__name__)

MODEL_TAGS = {0.0: "naive", 0.5: "joint", 1.0: "contra"}


def set_deterministic() -> None:
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(params: dict) -> str:
    return hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_manifest(
    output: str | Path,
    command: str,
    seed: int | None,
    params: dict,
    inputs: Sequence[str | Path] = (),
) -> Path:
    """Sidecar ``<output>.manifest.json`` recording how ``output`` was made (no timestamps)."""
    output = Path(output)
    manifest = {
        "command": command,
        "seed": seed,
        "config_hash": config_hash(params),
        "params": params,
        "version": __version__,
        "vocab_sha256": VOCAB.sha256,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "output_sha256": sha256_file(output) if output.is_file() else None,
    }
    path = output.with_name(output.name + ".manifest.json")
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n")
    return path


def check_manifest_vocab(path: str | Path) -> None:
    """Refuse inputs whose manifest names a different vocabulary."""
    mpath = Path(str(path) + ".manifest.json")
    if mpath.is_file():
        vocab = json.loads(mpath.read_text()).get("vocab_sha256")
        if vocab is not None and vocab != VOCAB.sha256:
            raise ValueError(f"{path} was produced with a different vocabulary ({vocab[:12]}...)")


# ---------------------------------------------------------------------------
# dataset stages
# ---------------------------------------------------------------------------


def load_records(path: str | Path) -> list[MutantRecord]:
    check_manifest_vocab(path)
    with open(path, encoding="utf-8") as fh:
        return list(read_jsonl(fh))


def save_records(records: Sequence[MutantRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_jsonl(records, fh)


def load_anchors(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return filter_anchors(read_smiles(fh))


def distribution_for(anchors: Sequence[str]):
    return atom_type_distribution(parse(s) for s in anchors)


def filter_records(records: Sequence[MutantRecord], threshold: float | None = None) -> list[MutantRecord]:
    """Refit the anchor property covariance and relabel every mutant KEPT or FAULTY."""
    groups = group_by_anchor(records)
    anchor_props = {a: properties_of(rows[0].smiles) for a, rows in groups.items()}
    model = fit_covariance(list(anchor_props.values()))
    out: list[MutantRecord] = []
    for a in sorted(groups):
        rows = groups[a]
        out.append(rows[0])
        out.extend(filter_faulty_positives(anchor_props[a], rows[1:], model, threshold))
    return out


def training_groups(records: Sequence[MutantRecord]) -> list[list[str]]:
    """Anchor SMILES followed by its non-faulty mutants, for anchors with at least one."""
    groups = []
    for a, rows in sorted(group_by_anchor(records).items()):
        smiles = [rows[0].smiles] + [r.smiles for r in rows[1:] if r.verdict != "FAULTY"]
        if len(smiles) >= 2:
            groups.append(smiles)
    return groups


def chain_map(records: Sequence[MutantRecord]) -> dict[int, list[str]]:
    return {a: [r.smiles for r in rows] for a, rows in group_by_anchor(records).items()}


# ---------------------------------------------------------------------------
# model helpers
# ---------------------------------------------------------------------------


def encoder_of(model: Autoencoder):
    return lambda smiles: encode_smiles(model, list(smiles))


def sampler_of(model: Autoencoder, temperature: float = 1.0):
    def sample(z: np.ndarray, n: int, rng: np.random.Generator) -> list[str]:
        gen = torch.Generator().manual_seed(int(rng.integers(2**63 - 1)))
        batch = np.repeat(np.asarray(z)[None], n, axis=0)
        return [detokenize(s) for s in generate(model, batch, "sample", temperature, gen)]

    return sample


# ---------------------------------------------------------------------------
# desk-scale study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeskScale:
    n_train: int = 2000
    n_heldout: int = 200
    min_atoms: int = 14
    max_atoms: int = 26
    k: int = 10
    n: int = 5
    steps: int = 1000
    lr: float = 3e-4
    latent: int = 16
    interp_pairs: int = 20
    interp_samples: int = 100
    prop_draws: int = 10
    prop_draw_size: int = 200
    lambdas: tuple[float, ...] = (0.0, 0.5, 1.0)


SCALES = {"desk": DeskScale(), "smoke": DeskScale(n_train=60, n_heldout=20, steps=20, interp_pairs=3,
                                                  interp_samples=10, prop_draws=2, prop_draw_size=20)}


def _round(x):
    return None if x is None else round(float(x), 6)


def reproduce(out_dir: str | Path, seed: int = 7, scale: str = "desk", workers: int = 1) -> dict:
    """Corpus, datasets, three trained models and side-by-side reports in ``out_dir``."""
    set_deterministic()
    sc = SCALES[scale]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = {"scale": scale, **asdict(sc)}

    corpus = toy_corpus(sc.n_train + sc.n_heldout, seed=seed, min_atoms=sc.min_atoms, max_atoms=sc.max_atoms)
    train_smiles, heldout = corpus[: sc.n_train], corpus[sc.n_train :]
    with open(out / "corpus.smi", "w") as fh:
        write_smiles(corpus, fh)
    dist = distribution_for(train_smiles)

    logger.info("generating positive sets for %d anchors", len(train_smiles))
    dataset = filter_records(generate_dataset(train_smiles, sc.k, seed, dist, workers))
    save_records(dataset, out / "dataset.jsonl")
    chains_rec = generate_supermutants(heldout, sc.n, seed, dist, workers)
    save_records(chains_rec, out / "supermutants.jsonl")
    groups = training_groups(dataset)
    chains = chain_map(chains_rec)
    kept = sum(r.verdict == "KEPT" for r in dataset if r.j > 0)
    total = sum(1 for r in dataset if r.j > 0)

    rng = np.random.default_rng([seed, 1])
    pairs = [tuple(heldout[i] for i in rng.choice(len(heldout), 2, replace=False)) for _ in range(sc.interp_pairs)]

    summary: dict = {
        "seed": seed,
        "scale": scale,
        "config_hash": config_hash(params),
        "version": __version__,
        "vocab_sha256": VOCAB.sha256,
        "dataset": {"anchors": len(train_smiles), "mutants": total, "kept": kept,
                    "threshold": _round(default_threshold())},
        "models": [],
    }

    def evaluate(model: Autoencoder, tag: str, lam: float | None) -> dict:
        report: CorrelationReport = ged_eud_report(chains, encoder_of(model), tag, sc.latent)
        with open(out / f"ged_{tag}.csv", "w") as fh:
            report.write_csv(fh)
        entry = {**report.summary(), "lambda": lam}
        if lam is not None:
            interp = interpolation_study(
                pairs, encoder_of(model), sampler_of(model), sc.interp_samples, np.random.default_rng([seed, 2])
            )
            entry["interpolation"] = interpolation_summary(interp, tag)
            prop = property_correlation_report(
                heldout, encoder_of(model), sc.prop_draws, sc.prop_draw_size, np.random.default_rng([seed, 3])
            )
            with open(out / f"prop_{tag}.csv", "w") as fh:
                prop.write_csv(fh)
            entry["property_rho"] = {n: _round(m) for n, m in zip(prop.names, prop.mean)}
        return entry

    untrained = build_model(ModelConfig(latent=sc.latent, seed=seed))
    summary["models"].append(evaluate(untrained, "untrained", None))
    for lam in sc.lambdas:
        tag = MODEL_TAGS.get(lam, f"lambda{lam}")
        cfg = ModelConfig(latent=sc.latent, lam=lam, seed=seed)
        model = build_model(cfg)
        logger.info("training %s (lambda=%s) for %d steps", tag, lam, sc.steps)
        history = train(model, groups, cfg, TrainConfig(steps=sc.steps, lr=sc.lr))
        save_checkpoint(out / f"model_{tag}.pt", model, {"seed": seed, "tag": tag})
        entry = evaluate(model, tag, lam)
        entry["final_loss"] = {k: _round(v) for k, v in history[-1].items()}
        summary["models"].append(entry)

    with open(out / "report.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    write_manifest(out / "report.json", "reproduce", seed, params)
    return summary
