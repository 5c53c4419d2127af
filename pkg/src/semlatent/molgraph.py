"""Labeled molecular graphs, valence rules, isomorphism and an exact node-edit distance.

Atoms are identified by their position in ``MolGraph.atoms``; hydrogens are
implicit and derived from the valence table.  The only edits considered are
the three node edits used for mutation:

* ``ADD``: attach a new non-aromatic atom by a single bond to an atom that
  still carries an implicit hydrogen,
* ``REPLACE``: change the element of a bonded atom (aromatic atoms only
  switch between C and N),
* ``REMOVE``: delete a non-aromatic terminal atom attached by a single bond.

Each edit has an inverse in the same set, so the distance induced by these
edits is symmetric.  Bond insertions and deletions between existing atoms are
not edits: ring systems and multiple bonds are invariant under the algebra.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from functools import cached_property
from typing import Iterable, Iterator, Sequence

__all__ = [
    "Element",
    "BondOrder",
    "AtomNode",
    "Bond",
    "MolGraph",
    "Violation",
    "Edit",
    "CONCRETE_ELEMENTS",
    "VALENCES",
    "MAX_GED_ATOMS",
    "GraphTooLarge",
    "validate",
    "implicit_hydrogens",
    "valence_used",
    "is_isomorphic",
    "invariant_key",
    "legal_edits",
    "apply_edit",
    "ged_exact",
]


class Element(str, Enum):
    C = "C"
    O = "O"
    N = "N"
    S = "S"
    Br = "Br"
    Cl = "Cl"
    I = "I"  # noqa: E741
    F = "F"
    P = "P"
    B = "B"
    OTHER = "*"

    @property
    def index(self) -> int:
        return _ELEMENT_INDEX[self]


_ELEMENT_INDEX = {e: i for i, e in enumerate(Element)}

CONCRETE_ELEMENTS: tuple[Element, ...] = tuple(e for e in Element if e is not Element.OTHER)
AROMATIC_CAPABLE = frozenset({Element.C, Element.N, Element.O, Element.S})
HALOGENS = frozenset({Element.F, Element.Cl, Element.Br, Element.I})

# Allowed total valences, ascending.  OTHER is absent: its checks are skipped.
VALENCES: dict[Element, tuple[int, ...]] = {
    Element.C: (4,),
    Element.N: (3,),
    Element.O: (2,),
    Element.S: (2, 4, 6),
    Element.P: (3, 5),
    Element.B: (3,),
    Element.F: (1,),
    Element.Cl: (1,),
    Element.Br: (1,),
    Element.I: (1,),
}

MAX_GED_ATOMS = 14


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> int:
        return 1 if self is BondOrder.AROMATIC else int(self)


@dataclass(frozen=True)
class AtomNode:
    element: Element
    aromatic: bool = False
    # Hydrogens written in brackets on aromatic nitrogen ("[nH]"); they mark a
    # lone-pair donor and occupy one valence unit.
    explicit_h: int = 0

    @property
    def label(self) -> tuple[int, bool, int]:
        return (self.element.index, self.aromatic, self.explicit_h)


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE

    def __post_init__(self) -> None:
        if self.a > self.b:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.a, self.b)


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[AtomNode, ...]
    bonds: tuple[Bond, ...] = ()

    @classmethod
    def build(
        cls,
        elements: Sequence[Element | str | AtomNode],
        bonds: Iterable[tuple[int, int] | tuple[int, int, BondOrder | int]] = (),
    ) -> "MolGraph":
        """Convenience constructor from element symbols and ``(a, b[, order])`` triples."""
        atoms = []
        for e in elements:
            if isinstance(e, AtomNode):
                atoms.append(e)
            else:
                atoms.append(AtomNode(Element(e)))
        bond_list = []
        for spec in bonds:
            a, b = spec[0], spec[1]
            order = BondOrder(spec[2]) if len(spec) > 2 else BondOrder.SINGLE
            bond_list.append(Bond(a, b, order))
        return cls(tuple(atoms), tuple(bond_list))

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, BondOrder], ...], ...]:
        adj: list[list[tuple[int, BondOrder]]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            if 0 <= bond.a < len(adj) and 0 <= bond.b < len(adj):
                adj[bond.a].append((bond.b, bond.order))
                if bond.a != bond.b:
                    adj[bond.b].append((bond.a, bond.order))
        return tuple(tuple(sorted(row)) for row in adj)

    @cached_property
    def _bond_lookup(self) -> dict[tuple[int, int], BondOrder]:
        return {(b.a, b.b): b.order for b in self.bonds}

    def bond_order(self, i: int, j: int) -> BondOrder | None:
        return self._bond_lookup.get((min(i, j), max(i, j)))

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def neighbors(self, i: int) -> list[int]:
        return [j for j, _ in self.adjacency[i]]

    def is_connected(self) -> bool:
        if not self.atoms:
            return False
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v, _ in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == len(self.atoms)

    @property
    def cyclomatic_number(self) -> int:
        return len(self.bonds) - len(self.atoms) + 1

    def label_counts(self) -> Counter:
        return Counter(a.label for a in self.atoms)

    def permuted(self, perm: Sequence[int]) -> "MolGraph":
        """Relabel atoms so that old atom ``i`` becomes new atom ``perm[i]``."""
        atoms: list[AtomNode | None] = [None] * len(self.atoms)
        for old, new in enumerate(perm):
            atoms[new] = self.atoms[old]
        bonds = tuple(Bond(perm[b.a], perm[b.b], b.order) for b in self.bonds)
        return MolGraph(tuple(atoms), bonds)  # type: ignore[arg-type]


@dataclass(frozen=True)
class Violation:
    kind: str  # "empty" | "connectivity" | "valence" | "aromatic" | "bond"
    atom: int | None
    message: str


def _pi_reservation(atom: AtomNode) -> int:
    if not atom.aromatic:
        return 0
    if atom.element is Element.C:
        return 1
    if atom.element is Element.N and atom.explicit_h == 0:
        return 1
    return 0


def valence_used(graph: MolGraph, i: int) -> int:
    """Bond-order sum of atom ``i`` including aromatic pi reservation and bracket H."""
    atom = graph.atoms[i]
    used = sum(order.valence for _, order in graph.adjacency[i])
    return used + atom.explicit_h + _pi_reservation(atom)


def _fits(element: Element, used: int) -> int | None:
    """Implicit hydrogen count for ``element`` at ``used`` valence, None if it overflows."""
    if element is Element.OTHER:
        return 0
    for v in VALENCES[element]:
        if v >= used:
            return v - used
    return None


def validate(graph: MolGraph) -> list[Violation]:
    out: list[Violation] = []
    n = len(graph.atoms)
    if n == 0:
        return [Violation("empty", None, "graph has no atoms")]
    seen_pairs: set[tuple[int, int]] = set()
    for bond in graph.bonds:
        if not (0 <= bond.a < n and 0 <= bond.b < n):
            out.append(Violation("bond", None, f"bond {bond.endpoints} references a missing atom"))
            continue
        if bond.a == bond.b:
            out.append(Violation("bond", bond.a, f"self-loop on atom {bond.a}"))
        if bond.endpoints in seen_pairs:
            out.append(Violation("bond", bond.a, f"duplicate bond {bond.endpoints}"))
        seen_pairs.add(bond.endpoints)
        if bond.order is BondOrder.AROMATIC and not (
            graph.atoms[bond.a].aromatic and graph.atoms[bond.b].aromatic
        ):
            out.append(
                Violation("aromatic", bond.a, f"aromatic bond {bond.endpoints} between non-aromatic atoms")
            )
    if not graph.is_connected():
        out.append(Violation("connectivity", None, "graph is disconnected"))
    for i, atom in enumerate(graph.atoms):
        if atom.aromatic:
            if atom.element not in AROMATIC_CAPABLE:
                out.append(Violation("aromatic", i, f"{atom.element.value} cannot be aromatic"))
            n_arom = sum(1 for _, o in graph.adjacency[i] if o is BondOrder.AROMATIC)
            if n_arom < 2:
                out.append(Violation("aromatic", i, f"aromatic atom {i} is not in an aromatic ring"))
        elif atom.explicit_h:
            out.append(Violation("aromatic", i, f"bracket hydrogen on non-aromatic atom {i}"))
        if atom.element is Element.OTHER:
            continue
        used = valence_used(graph, i)
        if _fits(atom.element, used) is None:
            out.append(
                Violation(
                    "valence",
                    i,
                    f"atom {i} ({atom.element.value}) uses valence {used} > {VALENCES[atom.element][-1]}",
                )
            )
    return out


def implicit_hydrogens(graph: MolGraph, atom_id: int) -> int:
    if not 0 <= atom_id < len(graph.atoms):
        raise IndexError(f"unknown atom id {atom_id}")
    h = _fits(graph.atoms[atom_id].element, valence_used(graph, atom_id))
    if h is None:
        raise ValueError(f"atom {atom_id} exceeds its maximum valence")
    return h


# ---------------------------------------------------------------------------
# color refinement and isomorphism
# ---------------------------------------------------------------------------


def _joint_colors(graphs: Sequence[MolGraph]) -> list[list[int]]:
    """Stable color refinement run on the disjoint union, so colors compare across graphs."""
    colors = [[a.label for a in g.atoms] for g in graphs]
    # initial compression
    palette = {c: k for k, c in enumerate(sorted({c for cs in colors for c in cs}))}
    cur = [[palette[c] for c in cs] for cs in colors]
    n_classes = len(palette)
    while True:
        sigs = [
            [
                (cs[i], tuple(sorted((int(o), cs[j]) for j, o in g.adjacency[i])))
                for i in range(len(g.atoms))
            ]
            for g, cs in zip(graphs, cur)
        ]
        palette = {s: k for k, s in enumerate(sorted({s for ss in sigs for s in ss}))}
        nxt = [[palette[s] for s in ss] for ss in sigs]
        if len(palette) == n_classes:
            return nxt
        n_classes = len(palette)
        cur = nxt


def invariant_key(graph: MolGraph) -> tuple:
    """Isomorphism-invariant summary; equal for isomorphic graphs (the converse may fail)."""
    sigs = [a.label for a in graph.atoms]
    cur = sigs
    for _ in range(len(graph.atoms)):
        nxt = [
            hash((cur[i], tuple(sorted((int(o), cur[j]) for j, o in graph.adjacency[i]))))
            for i in range(len(graph.atoms))
        ]
        if len(set(nxt)) == len(set(cur)):
            cur = nxt
            break
        cur = nxt
    return (len(graph.atoms), len(graph.bonds), tuple(sorted(cur)))


def is_isomorphic(g1: MolGraph, g2: MolGraph) -> bool:
    if len(g1.atoms) != len(g2.atoms) or len(g1.bonds) != len(g2.bonds):
        return False
    if g1.label_counts() != g2.label_counts():
        return False
    if Counter(b.order for b in g1.bonds) != Counter(b.order for b in g2.bonds):
        return False
    c1, c2 = _joint_colors([g1, g2])
    if Counter(c1) != Counter(c2):
        return False
    n = len(g1.atoms)
    if n == 0:
        return True

    # match g1 atoms in BFS order so each new atom has a mapped neighbor when possible
    class_size = Counter(c1)
    order: list[int] = []
    seen: set[int] = set()
    for root in sorted(range(n), key=lambda i: (class_size[c1[i]], c1[i])):
        if root in seen:
            continue
        seen.add(root)
        queue = deque([root])
        while queue:
            u = queue.popleft()
            order.append(u)
            for v, _ in g1.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)

    by_color: dict[int, list[int]] = {}
    for j, c in enumerate(c2):
        by_color.setdefault(c, []).append(j)
    mapping: dict[int, int] = {}
    used: set[int] = set()

    def consistent(u: int, w: int) -> bool:
        for v, order_uv in g1.adjacency[u]:
            if v in mapping:
                if g2.bond_order(w, mapping[v]) != order_uv:
                    return False
        # mapped neighbors of w must correspond to mapped neighbors of u
        mapped_nbrs_u = sum(1 for v, _ in g1.adjacency[u] if v in mapping)
        mapped_nbrs_w = sum(1 for x, _ in g2.adjacency[w] if x in used)
        return mapped_nbrs_u == mapped_nbrs_w

    def extend(k: int) -> bool:
        if k == n:
            return True
        u = order[k]
        anchor = next((mapping[v] for v, _ in g1.adjacency[u] if v in mapping), None)
        if anchor is not None:
            candidates = [x for x, _ in g2.adjacency[anchor] if c2[x] == c1[u]]
        else:
            candidates = by_color[c1[u]]
        for w in candidates:
            if w in used or not consistent(u, w):
                continue
            mapping[u] = w
            used.add(w)
            if extend(k + 1):
                return True
            del mapping[u]
            used.discard(w)
        return False

    return extend(0)


# ---------------------------------------------------------------------------
# edit algebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Edit:
    kind: str  # "ADD" | "REPLACE" | "REMOVE"
    site: int
    element: Element | None = None


def _replace_candidates(graph: MolGraph, i: int) -> list[Element]:
    atom = graph.atoms[i]
    if atom.element is Element.OTHER or atom.explicit_h or graph.degree(i) == 0:
        return []
    if atom.aromatic:
        if atom.element not in (Element.C, Element.N):
            return []
        pool: Iterable[Element] = (Element.C, Element.N)
    else:
        pool = CONCRETE_ELEMENTS
    bond_sum = sum(o.valence for _, o in graph.adjacency[i])
    out = []
    for e in pool:
        if e is atom.element:
            continue
        used = bond_sum + _pi_reservation(AtomNode(e, atom.aromatic))
        if _fits(e, used) is not None:
            out.append(e)
    return out


def _removable(graph: MolGraph, i: int) -> bool:
    if len(graph.atoms) < 2:
        return False
    atom = graph.atoms[i]
    if atom.aromatic or atom.element is Element.OTHER or graph.degree(i) != 1:
        return False
    (j, order), = graph.adjacency[i]
    return order is BondOrder.SINGLE and graph.atoms[j].element is not Element.OTHER


def _addable(graph: MolGraph, i: int) -> bool:
    atom = graph.atoms[i]
    return atom.element is not Element.OTHER and implicit_hydrogens(graph, i) >= 1


def legal_edits(graph: MolGraph, kind: str | None = None) -> Iterator[Edit]:
    """Every legal edit of ``graph`` (optionally one kind), in a deterministic order."""
    n = len(graph.atoms)
    if kind in (None, "ADD"):
        for i in range(n):
            if _addable(graph, i):
                for e in CONCRETE_ELEMENTS:
                    yield Edit("ADD", i, e)
    if kind in (None, "REPLACE"):
        for i in range(n):
            for e in _replace_candidates(graph, i):
                yield Edit("REPLACE", i, e)
    if kind in (None, "REMOVE"):
        for i in range(n):
            if _removable(graph, i):
                yield Edit("REMOVE", i)


def is_legal(graph: MolGraph, edit: Edit) -> bool:
    if not 0 <= edit.site < len(graph.atoms):
        return False
    if edit.kind == "ADD":
        return edit.element in CONCRETE_ELEMENTS and _addable(graph, edit.site)
    if edit.kind == "REPLACE":
        return edit.element in _replace_candidates(graph, edit.site)
    if edit.kind == "REMOVE":
        return _removable(graph, edit.site)
    return False


def apply_edit(graph: MolGraph, edit: Edit) -> MolGraph:
    """Apply an edit without legality checks (see ``is_legal``)."""
    if edit.kind == "ADD":
        new_id = len(graph.atoms)
        return MolGraph(
            graph.atoms + (AtomNode(edit.element),),  # type: ignore[arg-type]
            graph.bonds + (Bond(edit.site, new_id, BondOrder.SINGLE),),
        )
    if edit.kind == "REPLACE":
        atoms = list(graph.atoms)
        old = atoms[edit.site]
        atoms[edit.site] = AtomNode(edit.element, old.aromatic, old.explicit_h)  # type: ignore[arg-type]
        return MolGraph(tuple(atoms), graph.bonds)
    if edit.kind == "REMOVE":
        r = edit.site
        atoms = graph.atoms[:r] + graph.atoms[r + 1 :]

        def shift(k: int) -> int:
            return k - 1 if k > r else k

        bonds = tuple(
            Bond(shift(b.a), shift(b.b), b.order) for b in graph.bonds if r not in (b.a, b.b)
        )
        return MolGraph(atoms, bonds)
    raise ValueError(f"unknown edit kind {edit.kind!r}")


# ---------------------------------------------------------------------------
# exact edit distance
# ---------------------------------------------------------------------------


class GraphTooLarge(ValueError):
    pass


def _fixed_invariants(g: MolGraph) -> tuple:
    # Quantities no edit can change: ring count, aromatic atoms, multiple bonds.
    arom = sum(1 for a in g.atoms if a.aromatic)
    multi = Counter(b.order for b in g.bonds if b.order is not BondOrder.SINGLE)
    others = sum(1 for a in g.atoms if a.element is Element.OTHER)
    return (g.cyclomatic_number, arom, tuple(sorted(multi.items())), others)


def _multiset_gap(counts: Counter, target: Counter) -> int:
    extra = sum((counts - target).values())
    missing = sum((target - counts).values())
    return max(extra, missing)


@dataclass
class _Search:
    target: MolGraph
    target_counts: Counter
    target_key: tuple
    visited: dict = field(default_factory=dict)

    def lower_bound(self, g: MolGraph) -> int:
        gap = _multiset_gap(g.label_counts(), self.target_counts)
        if gap == 0 and not self.is_goal(g):
            # one edit always changes the label multiset
            return 2
        return gap

    def is_goal(self, g: MolGraph) -> bool:
        return invariant_key(g) == self.target_key and is_isomorphic(g, self.target)

    def seen_at(self, g: MolGraph, depth: int) -> bool:
        """Record ``g`` at ``depth``; True if an isomorphic state was already reached no deeper."""
        bucket = self.visited.setdefault(invariant_key(g), [])
        for k, (h, d) in enumerate(bucket):
            if is_isomorphic(h, g):
                if d <= depth:
                    return True
                bucket[k] = (h, depth)
                return False
        bucket.append((g, depth))
        return False

    def dfs(self, g: MolGraph, depth: int, bound: int) -> bool:
        h = self.lower_bound(g)
        if h == 0:
            return True
        if depth + h > bound or self.seen_at(g, depth):
            return False
        for edit in legal_edits(g):
            if self.dfs(apply_edit(g, edit), depth + 1, bound):
                return True
        return False


def ged_exact(g1: MolGraph, g2: MolGraph, max_d: int = 3) -> int | None:
    """Minimum number of node edits turning ``g1`` into a graph isomorphic to ``g2``.

    Returns None when the distance exceeds ``max_d`` (or no edit sequence exists).
    Iterative deepening with an admissible bound from the atom-label multisets.
    """
    for g in (g1, g2):
        if len(g.atoms) > MAX_GED_ATOMS:
            raise GraphTooLarge(f"graph has {len(g.atoms)} heavy atoms (limit {MAX_GED_ATOMS})")
    if _fixed_invariants(g1) != _fixed_invariants(g2):
        return None
    search = _Search(g2, g2.label_counts(), invariant_key(g2))
    start = search.lower_bound(g1)
    for bound in range(start, max_d + 1):
        search.visited = {}
        if search.dfs(g1, 0, bound):
            return bound
    return None
