"""Physicochemical property vectors, Mahalanobis filtering and circular fingerprints."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields, replace
from functools import cached_property
from typing import IO, Iterable, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from .molgraph import HALOGENS, BondOrder, Element, MolGraph, implicit_hydrogens, validate
from .mutation import MutantRecord
from .smiles import parse

ATOMIC_WEIGHT = {
    Element.C: 12.011,
    Element.N: 14.007,
    Element.O: 15.999,
    Element.S: 32.065,
    Element.P: 30.974,
    Element.B: 10.811,
    Element.F: 18.998,
    Element.Cl: 35.453,
    Element.Br: 79.904,
    Element.I: 126.904,
    Element.OTHER: 0.0,  # unknown element, no mass assigned
}
HYDROGEN_WEIGHT = 1.008

DEFAULT_CHI2_QUANTILE = 0.99


def default_threshold(q: float = DEFAULT_CHI2_QUANTILE, dof: int = 10) -> float:
    """Square root of the chi-square quantile: Mahalanobis radius holding ``q`` of a Gaussian."""
    return float(np.sqrt(chi2.ppf(q, dof)))


@dataclass(frozen=True)
class PropertyVector:
    molecular_weight: float
    heavy_atom_count: float
    ring_count: float
    aromatic_ring_count: float
    hbd_count: float
    hba_count: float
    rotatable_bond_count: float
    fraction_csp3: float
    halogen_count: float
    heteroatom_fraction: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


PROPERTY_NAMES: tuple[str, ...] = tuple(f.name for f in fields(PropertyVector))


def _total_h(graph: MolGraph, i: int) -> int:
    return implicit_hydrogens(graph, i) + graph.atoms[i].explicit_h


def compute_properties(graph: MolGraph) -> PropertyVector:
    problems = validate(graph)
    if problems:
        raise ValueError(f"cannot describe an invalid graph: {problems[0].message}")
    atoms = graph.atoms
    n = len(atoms)
    hs = [_total_h(graph, i) for i in range(n)]
    # fsum keeps the value independent of atom order
    mw = math.fsum([ATOMIC_WEIGHT[a.element] for a in atoms] + [HYDROGEN_WEIGHT * sum(hs)])

    arom_bonds = [b for b in graph.bonds if b.order is BondOrder.AROMATIC]
    arom_atoms = {i for b in arom_bonds for i in b.endpoints}
    aromatic_rings = 0
    if arom_bonds:
        # cyclomatic number of the aromatic subgraph
        parent = {i: i for i in arom_atoms}

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for b in arom_bonds:
            parent[find(b.a)] = find(b.b)
        components = len({find(i) for i in arom_atoms})
        aromatic_rings = len(arom_bonds) - len(arom_atoms) + components

    no = [i for i, a in enumerate(atoms) if a.element in (Element.N, Element.O)]
    hbd = sum(1 for i in no if hs[i] >= 1)

    # rotatable: acyclic single bonds between two non-terminal atoms
    ring_bonds = _ring_bonds(graph)
    rot = sum(
        1
        for b in graph.bonds
        if b.order is BondOrder.SINGLE
        and b.endpoints not in ring_bonds
        and graph.degree(b.a) > 1
        and graph.degree(b.b) > 1
    )

    carbons = [i for i, a in enumerate(atoms) if a.element is Element.C]
    sp3 = sum(
        1
        for i in carbons
        if not atoms[i].aromatic and all(o is BondOrder.SINGLE for _, o in graph.adjacency[i])
    )
    fcsp3 = sp3 / len(carbons) if carbons else 0.0
    halogens = sum(1 for a in atoms if a.element in HALOGENS)
    hetero = sum(1 for a in atoms if a.element is not Element.C)

    return PropertyVector(
        molecular_weight=mw,
        heavy_atom_count=float(n),
        ring_count=float(graph.cyclomatic_number),
        aromatic_ring_count=float(aromatic_rings),
        hbd_count=float(hbd),
        hba_count=float(len(no)),
        rotatable_bond_count=float(rot),
        fraction_csp3=fcsp3,
        halogen_count=float(halogens),
        heteroatom_fraction=hetero / n,
    )


def _ring_bonds(graph: MolGraph) -> set[tuple[int, int]]:
    """Bonds lying on a cycle: removing them leaves the graph connected."""
    out = set()
    if graph.cyclomatic_number == 0:
        return out
    for bond in graph.bonds:
        seen = {bond.a}
        stack = [bond.a]
        while stack:
            u = stack.pop()
            for v, _ in graph.adjacency[u]:
                if {u, v} == {bond.a, bond.b} or v in seen:
                    continue
                seen.add(v)
                stack.append(v)
        if bond.b in seen:
            out.add(bond.endpoints)
    return out


def properties_of(smiles: str) -> PropertyVector:
    return compute_properties(parse(smiles))


def write_property_csv(rows: Iterable[tuple[str, PropertyVector]], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("smiles",) + PROPERTY_NAMES)
    for smiles, vec in rows:
        w.writerow((smiles,) + tuple(f"{v:.6g}" for v in astuple(vec)))


# ---------------------------------------------------------------------------
# Mahalanobis filtering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceModel:
    mean: np.ndarray
    cov: np.ndarray
    eps: float

    @cached_property
    def _factor(self):
        m = np.asarray(self.cov, dtype=np.float64) + self.eps * np.eye(len(self.mean))
        return linalg.cho_factor(m, lower=True)

    def distance(self, x, y) -> float:
        d = _vec(x) - _vec(y)
        if not d.any():
            return 0.0
        return float(np.sqrt(max(d @ linalg.cho_solve(self._factor, d), 0.0)))


def _vec(x) -> np.ndarray:
    return x.as_array() if isinstance(x, PropertyVector) else np.asarray(x, dtype=np.float64)


MIN_EPS = 1e-12


def fit_covariance(vectors: Sequence[PropertyVector | np.ndarray]) -> CovarianceModel:
    """Sample mean and covariance with a ridge of 1e-6 times the mean variance."""
    if len(vectors) < 11:
        raise ValueError(f"need at least 11 samples to fit a 10-d covariance, got {len(vectors)}")
    X = np.stack([_vec(v) for v in vectors])
    mu = X.mean(axis=0)
    sigma = np.cov(X, rowvar=False, ddof=1)
    eps = max(1e-6 * float(np.trace(sigma)) / X.shape[1], MIN_EPS)
    return CovarianceModel(mu, sigma, eps)


def mahalanobis(x, y, model: CovarianceModel) -> float:
    return model.distance(x, y)


def filter_faulty_positives(
    anchor: MolGraph | PropertyVector,
    mutants: Sequence[MutantRecord],
    model: CovarianceModel,
    threshold: float | None = None,
) -> list[MutantRecord]:
    """Mark each mutant KEPT or FAULTY by its property distance to the anchor; order is kept."""
    threshold = default_threshold() if threshold is None else threshold
    ref = anchor if isinstance(anchor, PropertyVector) else compute_properties(anchor)
    out = []
    for rec in mutants:
        d = model.distance(ref, properties_of(rec.smiles))
        out.append(replace(rec, verdict="FAULTY" if d > threshold else "KEPT"))
    return out


# ---------------------------------------------------------------------------
# fingerprints
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
FINGERPRINT_SEED = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    """splitmix64 finalizer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _hash_seq(values: Iterable[int]) -> int:
    h = FINGERPRINT_SEED
    for v in values:
        h = _mix64(h ^ (v & _MASK64))
    return h


@dataclass(frozen=True)
class Fingerprint:
    bits: int
    nbits: int = 2048

    def popcount(self) -> int:
        return self.bits.bit_count()

    def on_bits(self) -> list[int]:
        return [i for i in range(self.nbits) if self.bits >> i & 1]

    def to_array(self) -> np.ndarray:
        arr = np.zeros(self.nbits, dtype=bool)
        arr[self.on_bits()] = True
        return arr


def morgan_fingerprint(graph: MolGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    n = len(graph.atoms)
    ids = [
        _hash_seq(
            (
                a.element.index,
                graph.degree(i),
                int(a.aromatic),
                _total_h(graph, i),
            )
        )
        for i, a in enumerate(graph.atoms)
    ]
    bits = 0
    for ident in ids:
        bits |= 1 << (ident % nbits)
    for r in range(1, radius + 1):
        nxt = []
        for i in range(n):
            env = sorted((int(o), ids[j]) for j, o in graph.adjacency[i])
            nxt.append(_hash_seq([r, ids[i]] + [x for pair in env for x in pair]))
        ids = nxt
        for ident in ids:
            bits |= 1 << (ident % nbits)
    return Fingerprint(bits, nbits)


def tanimoto_distance(a: Fingerprint, b: Fingerprint) -> float:
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 0.0
    return 1.0 - (a.bits & b.bits).bit_count() / union


def tanimoto_smiles(s1: str, s2: str) -> float:
    return tanimoto_distance(morgan_fingerprint(parse(s1)), morgan_fingerprint(parse(s2)))
