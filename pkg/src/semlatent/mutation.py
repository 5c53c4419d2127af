"""Single-edit mutants, positive sets and supermutant chains."""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .molgraph import (
    CONCRETE_ELEMENTS,
    Edit,
    Element,
    MolGraph,
    apply_edit,
    is_legal,
    legal_edits,
    validate,
)
from .smiles import parse, write

MutationOp = Edit
KINDS = ("ADD", "REPLACE", "REMOVE")
VERDICTS = ("KEPT", "FAULTY", "UNVERIFIED")
RETRY_BUDGET = 50
CHAIN_RESTARTS = 5


class MutationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AtomDistribution:
    """Probabilities over the ten concrete elements, in ``CONCRETE_ELEMENTS`` order."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (len(CONCRETE_ELEMENTS),) or (p < 0).any() or not np.isclose(p.sum(), 1.0):
            raise ValueError("atom distribution must be 10 non-negative probabilities summing to 1")

    @classmethod
    def from_mapping(cls, weights: dict[Element | str, float]) -> "AtomDistribution":
        raw = np.array([float(weights.get(e, weights.get(e.value, 0.0))) for e in CONCRETE_ELEMENTS])
        return cls(tuple(raw / raw.sum()))

    def __getitem__(self, element: Element | str) -> float:
        return self.probs[CONCRETE_ELEMENTS.index(Element(element))]

    def as_dict(self) -> dict[str, float]:
        return {e.value: p for e, p in zip(CONCRETE_ELEMENTS, self.probs)}


UNIFORM = AtomDistribution(tuple([1.0 / len(CONCRETE_ELEMENTS)] * len(CONCRETE_ELEMENTS)))


def atom_type_distribution(corpus: Iterable[MolGraph]) -> AtomDistribution:
    counts: Counter = Counter()
    for g in corpus:
        counts.update(a.element for a in g.atoms if a.element is not Element.OTHER)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("cannot estimate an atom distribution from an empty corpus")
    return AtomDistribution(tuple(counts[e] / total for e in CONCRETE_ELEMENTS))


@dataclass(frozen=True)
class MutantRecord:
    anchor_id: int
    j: int
    ops: tuple[MutationOp, ...]
    smiles: str
    ged_nominal: int
    verdict: str = "UNVERIFIED"

    def to_json(self) -> str:
        ops = [
            {"kind": op.kind, "site": op.site, "element": op.element.value if op.element else None}
            for op in self.ops
        ]
        return json.dumps(
            {
                "anchor_id": self.anchor_id,
                "j": self.j,
                "ops": ops,
                "smiles": self.smiles,
                "ged_nominal": self.ged_nominal,
                "verdict": self.verdict,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "MutantRecord":
        d = json.loads(line)
        ops = tuple(
            Edit(o["kind"], int(o["site"]), Element(o["element"]) if o["element"] else None)
            for o in d["ops"]
        )
        return cls(d["anchor_id"], d["j"], ops, d["smiles"], d["ged_nominal"], d["verdict"])


# ---------------------------------------------------------------------------
# single edits
# ---------------------------------------------------------------------------


def enumerate_sites(graph: MolGraph, kind: str) -> list[MutationOp]:
    if kind not in KINDS:
        raise ValueError(f"unknown mutation kind {kind!r}")
    return list(legal_edits(graph, kind))


def apply(graph: MolGraph, op: MutationOp) -> MolGraph:
    if not is_legal(graph, op):
        raise MutationError(f"illegal mutation {op}")
    out = apply_edit(graph, op)
    problems = validate(out)
    if problems:
        raise MutationError(f"mutation {op} produced an invalid graph: {problems}")
    if len(out.atoms) == len(graph.atoms) and out.label_counts() == graph.label_counts():
        raise MutationError(f"mutation {op} left the graph unchanged")
    return out


def _grouped_ops(
    graph: MolGraph, dist: AtomDistribution, forbidden: frozenset[int] = frozenset()
) -> dict[str, dict[int, list[MutationOp]]]:
    """Legal ops with positive probability, grouped by kind then site."""
    groups: dict[str, dict[int, list[MutationOp]]] = {k: {} for k in KINDS}
    for op in legal_edits(graph):
        if op.kind != "ADD" and op.site in forbidden:
            continue
        if op.element is not None and dist[op.element] <= 0.0:
            continue
        groups[op.kind].setdefault(op.site, []).append(op)
    return {k: v for k, v in groups.items() if v}


def _draw(groups: dict[str, dict[int, list[MutationOp]]], rng: np.random.Generator, dist) -> MutationOp:
    kinds = [k for k in KINDS if k in groups]
    kind = kinds[rng.integers(len(kinds))]
    sites = sorted(groups[kind])
    site = sites[rng.integers(len(sites))]
    ops = groups[kind][site]
    if kind == "REMOVE":
        return ops[0]
    p = np.array([dist[op.element] for op in ops])
    return ops[rng.choice(len(ops), p=p / p.sum())]


def sample_mutant(
    graph: MolGraph, rng: np.random.Generator, dist: AtomDistribution = UNIFORM
) -> tuple[MolGraph, MutationOp]:
    """One random legal mutation: kind uniform over legal kinds, site uniform, element ~ ``dist``."""
    groups = _grouped_ops(graph, dist)
    if not groups:
        raise MutationError("graph admits no legal mutation")
    op = _draw(groups, rng, dist)
    return apply(graph, op), op


# ---------------------------------------------------------------------------
# positive sets and chains
# ---------------------------------------------------------------------------


def generate_positive_set(
    anchor: MolGraph,
    k: int = 10,
    rng: np.random.Generator | None = None,
    dist: AtomDistribution = UNIFORM,
    anchor_id: int = 0,
) -> list[MutantRecord]:
    """Up to ``k`` canonically distinct 1-edit mutants of ``anchor``.

    Each slot is sampled with ``RETRY_BUDGET`` attempts; if those all collide,
    an unused neighbor is drawn from the enumerated 1-neighborhood, so a short
    set means the neighborhood is exhausted.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    groups = _grouped_ops(anchor, dist)
    if not groups:
        raise MutationError("anchor admits no legal mutation")
    seen = {write(anchor)}
    out: list[MutantRecord] = []
    neighborhood: list[tuple[str, MutationOp]] | None = None
    while len(out) < k:
        found: tuple[str, MutationOp] | None = None
        for _ in range(RETRY_BUDGET):
            op = _draw(groups, rng, dist)
            s = write(apply(anchor, op))
            if s not in seen:
                found = (s, op)
                break
        if found is None:
            if neighborhood is None:
                neighborhood = []
                by_smiles: dict[str, MutationOp] = {}
                for ops in (o for site_ops in groups.values() for o in site_ops.values()):
                    for op in ops:
                        by_smiles.setdefault(write(apply(anchor, op)), op)
                neighborhood = sorted(by_smiles.items())
            remaining = [item for item in neighborhood if item[0] not in seen]
            if not remaining:
                break
            found = remaining[rng.integers(len(remaining))]
        seen.add(found[0])
        out.append(MutantRecord(anchor_id, len(out) + 1, (found[1],), found[0], 1))
    return out


def _label_gap(counts: Counter, reference: Counter) -> int:
    return max(sum((counts - reference).values()), sum((reference - counts).values()))


def generate_supermutant_chain(
    anchor: MolGraph,
    n: int = 5,
    rng: np.random.Generator | None = None,
    dist: AtomDistribution = UNIFORM,
    anchor_id: int = 0,
) -> list[MutantRecord]:
    """Successive single edits g(1)..g(n); record m carries the first m ops.

    Every step must widen the atom-label difference from the anchor by one.
    This forbids undoing the previous step (removing the atom just added,
    replacing back to the prior element) and any later step that cancels an
    earlier one.  Members are also pairwise non-isomorphic.  A dead-ended
    chain is restarted up to ``CHAIN_RESTARTS`` times; the longest attempt is
    returned, possibly truncated.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    best: list[MutantRecord] = []
    for _ in range(CHAIN_RESTARTS):
        chain = _one_chain(anchor, n, rng, dist, anchor_id)
        if len(chain) > len(best):
            best = chain
        if len(best) == n:
            break
    return best


def _one_chain(anchor, n, rng, dist, anchor_id) -> list[MutantRecord]:
    reference = anchor.label_counts()
    current = anchor
    seen = {write(anchor)}
    ops: list[MutationOp] = []
    out: list[MutantRecord] = []
    for m in range(1, n + 1):
        groups = _grouped_ops(current, dist)
        step = None
        for _ in range(RETRY_BUDGET if groups else 0):
            op = _draw(groups, rng, dist)
            nxt = apply(current, op)
            if _label_gap(nxt.label_counts(), reference) != m:
                continue
            s = write(nxt)
            if s not in seen:
                step = (nxt, op, s)
                break
        if step is None:
            break
        current, op, s = step
        seen.add(s)
        ops.append(op)
        out.append(MutantRecord(anchor_id, m, tuple(ops), s, m))
    return out


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def anchor_rng(seed: int, anchor_id: int) -> np.random.Generator:
    """Independent stream per anchor, so output does not depend on scheduling."""
    return np.random.default_rng([seed, anchor_id])


def _positive_job(args) -> list[MutantRecord]:
    anchor_id, smiles, k, seed, dist = args
    g = parse(smiles)
    anchor = MutantRecord(anchor_id, 0, (), write(g), 0, "KEPT")
    return [anchor] + generate_positive_set(g, k, anchor_rng(seed, anchor_id), dist, anchor_id)


def _chain_job(args) -> list[MutantRecord]:
    anchor_id, smiles, n, seed, dist = args
    g = parse(smiles)
    anchor = MutantRecord(anchor_id, 0, (), write(g), 0, "KEPT")
    return [anchor] + generate_supermutant_chain(g, n, anchor_rng(seed, anchor_id), dist, anchor_id)


def _run(job, tasks: list, workers: int) -> list[MutantRecord]:
    if workers <= 1:
        results: Iterable[list[MutantRecord]] = map(job, tasks)
    else:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(job, tasks, chunksize=16))
    return [r for chunk in results for r in chunk]


def generate_dataset(
    anchors: Sequence[str],
    k: int = 10,
    seed: int = 0,
    dist: AtomDistribution = UNIFORM,
    workers: int = 1,
) -> list[MutantRecord]:
    """Anchor rows (j=0) followed by their positive sets, in anchor order."""
    tasks = [(i, s, k, seed, dist) for i, s in enumerate(anchors)]
    return _run(_positive_job, tasks, workers)


def generate_supermutants(
    anchors: Sequence[str],
    n: int = 5,
    seed: int = 0,
    dist: AtomDistribution = UNIFORM,
    workers: int = 1,
) -> list[MutantRecord]:
    tasks = [(i, s, n, seed, dist) for i, s in enumerate(anchors)]
    return _run(_chain_job, tasks, workers)


def write_jsonl(records: Iterable[MutantRecord], fh: IO[str]) -> None:
    for r in records:
        fh.write(r.to_json())
        fh.write("\n")


def read_jsonl(fh: IO[str]) -> Iterator[MutantRecord]:
    for line in fh:
        if line.strip():
            yield MutantRecord.from_json(line)


def group_by_anchor(records: Iterable[MutantRecord]) -> dict[int, list[MutantRecord]]:
    """Records keyed by anchor id; the anchor row (j=0) comes first in each list."""
    groups: dict[int, list[MutantRecord]] = {}
    for r in records:
        groups.setdefault(r.anchor_id, []).append(r)
    for rows in groups.values():
        rows.sort(key=lambda r: r.j)
    return groups


def with_verdict(record: MutantRecord, verdict: str) -> MutantRecord:
    if verdict not in VERDICTS:
        raise ValueError(f"unknown verdict {verdict!r}")
    return replace(record, verdict=verdict)
