"""Bundled reference molecules and a deterministic generator of small drug-like toy corpora."""

from __future__ import annotations

from importlib import resources
from typing import IO, Iterable, Sequence

import numpy as np

from .molgraph import Element, MolGraph, apply_edit, legal_edits
from .smiles import MAX_SMILES_CHARS, SmilesError, parse, write

# small ring systems and functional groups the walks start from
SCAFFOLDS: tuple[str, ...] = (
    "c1ccccc1",
    "c1ccncc1",
    "c1ccoc1",
    "c1ccsc1",
    "c1cc[nH]c1",
    "c1cnc[nH]1",
    "c1cncnc1",
    "c1ccc2ccccc2c1",
    "c1ccc2[nH]ccc2c1",
    "C1CCCCC1",
    "C1CCNCC1",
    "C1CCOCC1",
    "C1CNCCN1",
    "C1CCCC1",
    "C1CCOC1",
    "C1CC1",
    "O=C1CCCN1",
    "O=C1CCCCC1",
    "CC(=O)O",
    "CC(=O)N",
    "CCOC(=O)C",
    "CC#N",
    "C=CC",
    "CCN(C)C",
    "CS(=O)(=O)N",
    "NC(=O)N",
    "CCCO",
)

# element weights for decorating scaffolds; roughly the heavy-atom mix of small drugs
DRUGLIKE_WEIGHTS: dict[Element, float] = {
    Element.C: 0.62,
    Element.N: 0.13,
    Element.O: 0.14,
    Element.S: 0.03,
    Element.P: 0.004,
    Element.B: 0.002,
    Element.F: 0.04,
    Element.Cl: 0.025,
    Element.Br: 0.008,
    Element.I: 0.003,
}

_KIND_WEIGHTS = {"ADD": 0.65, "REPLACE": 0.3, "REMOVE": 0.05}


def load_reference_corpus() -> list[str]:
    """The bundled set of real drug-like molecules, canonicalized."""
    text = resources.files("semlatent.data").joinpath("corpus.smi").read_text(encoding="utf-8")
    return [write(parse(line.strip())) for line in text.splitlines() if line.strip()]


def read_smiles(fh: IO[str]) -> list[str]:
    return [line.strip() for line in fh if line.strip()]


def write_smiles(smiles: Iterable[str], fh: IO[str]) -> None:
    for s in smiles:
        fh.write(s)
        fh.write("\n")


def _weighted_edit(graph: MolGraph, rng: np.random.Generator):
    ops = list(legal_edits(graph))
    if not ops:
        return None
    w = np.array(
        [_KIND_WEIGHTS[op.kind] * (DRUGLIKE_WEIGHTS[op.element] if op.element else 1.0) for op in ops]
    )
    return ops[rng.choice(len(ops), p=w / w.sum())]


def _walk(start: MolGraph, rng: np.random.Generator, target: int, max_atoms: int) -> MolGraph:
    g = start
    for _ in range(4 * max_atoms):
        if len(g.atoms) >= target:
            break
        op = _weighted_edit(g, rng)
        if op is None:
            break
        nxt = apply_edit(g, op)
        if len(nxt.atoms) <= max_atoms:
            g = nxt
    # a couple of extra substitutions so scaffolds of full size also vary
    for _ in range(int(rng.integers(0, 3))):
        op = _weighted_edit(g, rng)
        if op is not None and op.kind == "REPLACE":
            g = apply_edit(g, op)
    return g


def toy_corpus(
    n: int,
    seed: int = 0,
    min_atoms: int = 6,
    max_atoms: int = 14,
    scaffolds: Sequence[str] = SCAFFOLDS,
) -> list[str]:
    """``n`` distinct canonical SMILES grown from ``scaffolds`` by random edits.

    Output depends only on the arguments.  Sizes are drawn uniformly from
    ``[min_atoms, max_atoms]``; the default upper bound keeps every molecule
    inside the exact GED oracle's range.
    """
    if min_atoms > max_atoms:
        raise ValueError("min_atoms exceeds max_atoms")
    rng = np.random.default_rng(seed)
    starts = [parse(s) for s in scaffolds]
    seen: set[str] = set()
    out: list[str] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 50 * n + 1000:
            raise RuntimeError(f"could only generate {len(out)} distinct molecules")
        start = starts[rng.integers(len(starts))]
        g = _walk(start, rng, int(rng.integers(min_atoms, max_atoms + 1)), max_atoms)
        if not min_atoms <= len(g.atoms) <= max_atoms:
            continue
        s = write(g)
        if s in seen or len(s) > MAX_SMILES_CHARS:
            continue
        seen.add(s)
        out.append(s)
    return out


def filter_anchors(smiles: Iterable[str], max_chars: int = MAX_SMILES_CHARS) -> list[str]:
    """Canonical, deduplicated anchors that parse strictly and fit the length cap."""
    out, seen = [], set()
    for s in smiles:
        try:
            c = write(parse(s))
        except SmilesError:
            continue
        if len(c) <= max_chars and c not in seen:
            seen.add(c)
            out.append(c)
    return out
