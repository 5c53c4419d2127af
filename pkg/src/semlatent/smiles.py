"""SMILES parsing, canonical writing and tokenization.

The supported grammar is the organic subset plus minimal brackets: atoms
``B C N O P S F Cl Br I``, aromatic ``c n o s``, ``[nH]``-style brackets,
branches, ring closures (``1``..``9`` and ``%nn``) and the bond symbols
``- = # :``.  ``/`` and ``\\`` are read as plain single bonds.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .molgraph import (
    AtomNode,
    Bond,
    BondOrder,
    Element,
    MolGraph,
    implicit_hydrogens,
    validate,
)

logger = logging.getLogger(__name__)

MAX_SMILES_CHARS = 110
MAX_LEN = MAX_SMILES_CHARS + 2
VOCAB_SHA256 = "c7095b9d473d6145d379091f243107176b31736c63d1511be85cf39958741dfd"


class SmilesError(ValueError):
    pass


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    PAD = 0
    START = 1
    END = 2
    UNK = 3

    def __post_init__(self) -> None:
        if len(self.tokens) != 39 or len(set(self.tokens)) != 39:
            raise ValueError("vocabulary must hold exactly 39 distinct tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    @property
    def sha256(self) -> str:
        return hashlib.sha256(("\n".join(self.tokens) + "\n").encode()).hexdigest()

    @classmethod
    def load(cls) -> "Vocabulary":
        text = resources.files("semlatent").joinpath("data/vocab.txt").read_text(encoding="utf-8")
        if hashlib.sha256(text.encode()).hexdigest() != VOCAB_SHA256:
            raise RuntimeError("vocabulary file checksum mismatch")
        return cls(tuple(text.splitlines()))


VOCAB = Vocabulary.load()
_TOKEN_ID = VOCAB.index
_SURFACE = sorted((t for t in VOCAB.tokens[4:]), key=len, reverse=True)


def tokenize(smiles: str) -> list[int]:
    """Greedy longest-match tokenization wrapped in START/END."""
    ids = [Vocabulary.START]
    i = 0
    while i < len(smiles):
        for tok in _SURFACE:
            if smiles.startswith(tok, i):
                ids.append(_TOKEN_ID[tok])
                i += len(tok)
                break
        else:
            ids.append(Vocabulary.UNK)
            i += 1
    ids.append(Vocabulary.END)
    return ids


def detokenize(ids: Iterable[int]) -> str:
    out = []
    for t in ids:
        t = int(t)
        if t == Vocabulary.END:
            break
        if t >= 4:
            out.append(VOCAB.tokens[t])
    return "".join(out)


def pad_batch(sequences: Sequence[Sequence[int]], length: int | None = None) -> np.ndarray:
    """Stack token id lists into a PAD-filled ``(n, length)`` int64 matrix."""
    width = max(len(s) for s in sequences) if length is None else length
    out = np.full((len(sequences), width), Vocabulary.PAD, dtype=np.int64)
    for r, seq in enumerate(sequences):
        if len(seq) > width:
            raise ValueError(f"sequence of {len(seq)} tokens exceeds width {width}")
        out[r, : len(seq)] = seq
    return out


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

_ORGANIC = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
_AROMATIC = {"c", "n", "o", "s"}
_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
}


def _bridges(n: int, adj: list[list[int]]) -> set[tuple[int, int]]:
    """Bridge edges (pairs with a < b) by iterative Tarjan low-link."""
    disc = [-1] * n
    low = [0] * n
    out: set[tuple[int, int]] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            u, parent, it = stack[-1]
            advanced = False
            for v in it:
                if v == parent:
                    continue
                if disc[v] == -1:
                    disc[v] = low[v] = timer
                    timer += 1
                    stack.append((v, u, iter(adj[v])))
                    advanced = True
                    break
                low[u] = min(low[u], disc[v])
            if not advanced:
                stack.pop()
                if parent != -1:
                    low[parent] = min(low[parent], low[u])
                    if low[u] > disc[parent]:
                        out.add((min(u, parent), max(u, parent)))
    return out


def _parse_bracket(body: str, strict: bool, smiles: str) -> tuple[AtomNode, int | None]:
    i = 0
    while i < len(body) and body[i].isdigit():
        i += 1
    if i:
        if strict:
            raise SmilesError(f"isotopes are not supported: [{body}] in {smiles!r}")
        logger.warning("ignoring isotope in [%s]", body)
    rest = body[i:]
    if rest[:1] in _AROMATIC:
        symbol, aromatic = rest[0], True
        rest = rest[1:]
    else:
        j = 1
        if len(rest) > 1 and rest[1].islower():
            j = 2
        symbol, aromatic = rest[:j], False
        rest = rest[j:]
    if not symbol:
        raise SmilesError(f"empty bracket atom in {smiles!r}")
    if "@" in rest:
        if strict:
            raise SmilesError(f"stereo descriptors are not supported: [{body}]")
        rest = rest.replace("@", "")
    hcount: int | None = None
    if rest.startswith("H"):
        digits = ""
        k = 1
        while k < len(rest) and rest[k].isdigit():
            digits += rest[k]
            k += 1
        hcount = int(digits) if digits else 1
        rest = rest[k:]
    charged = bool(rest)
    element_name = symbol.upper() if aromatic else symbol
    try:
        element = Element(element_name)
    except ValueError:
        element = Element.OTHER
    if element is Element.OTHER or charged:
        if strict:
            raise SmilesError(f"unsupported bracket atom [{body}] in {smiles!r}")
        logger.warning("mapping bracket atom [%s] to the placeholder element", body)
        return AtomNode(Element.OTHER), None
    if aromatic:
        explicit = (hcount or 0) if element is Element.N else 0
        return AtomNode(element, True, explicit), None
    return AtomNode(element), hcount


def parse(smiles: str, strict: bool = True) -> MolGraph:
    """Parse a SMILES string into a validated ``MolGraph``.

    ``strict`` rejects unknown elements, charges, isotopes and stereo marks;
    lenient mode maps unknown atoms to ``Element.OTHER`` with a warning.
    """
    atoms: list[AtomNode] = []
    declared_h: dict[int, int] = {}
    bonds: dict[tuple[int, int], BondOrder | None] = {}
    branch_stack: list[int] = []
    rings: dict[int, tuple[int, BondOrder | None]] = {}
    prev: int | None = None
    pending: BondOrder | None = None
    i = 0
    n = len(smiles)

    def connect(a: int, b: int, order: BondOrder | None) -> None:
        key = (min(a, b), max(a, b))
        if a == b or key in bonds:
            raise SmilesError(f"duplicate or self bond between atoms {a} and {b} in {smiles!r}")
        bonds[key] = order

    def add_atom(node: AtomNode) -> None:
        nonlocal prev, pending
        atoms.append(node)
        idx = len(atoms) - 1
        if prev is not None:
            connect(prev, idx, pending)
        elif pending is not None:
            raise SmilesError(f"bond symbol without a preceding atom in {smiles!r}")
        prev, pending = idx, None

    while i < n:
        ch = smiles[i]
        if ch in "ClBr" and smiles[i : i + 2] in ("Cl", "Br"):
            add_atom(AtomNode(Element(smiles[i : i + 2])))
            i += 2
        elif ch in _ORGANIC:
            add_atom(AtomNode(Element(ch)))
            i += 1
        elif ch in _AROMATIC:
            add_atom(AtomNode(Element(ch.upper()), True))
            i += 1
        elif ch == "*":
            if strict:
                raise SmilesError(f"placeholder atom '*' rejected in strict mode: {smiles!r}")
            add_atom(AtomNode(Element.OTHER))
            i += 1
        elif ch == "[":
            close = smiles.find("]", i)
            if close == -1:
                raise SmilesError(f"unclosed bracket in {smiles!r}")
            node, hcount = _parse_bracket(smiles[i + 1 : close], strict, smiles)
            add_atom(node)
            if hcount is not None:
                declared_h[len(atoms) - 1] = hcount
            i = close + 1
        elif ch in _BOND_SYMBOLS:
            if pending is not None:
                raise SmilesError(f"consecutive bond symbols in {smiles!r}")
            pending = _BOND_SYMBOLS[ch]
            i += 1
        elif ch == "(":
            if prev is None:
                raise SmilesError(f"branch opened before any atom in {smiles!r}")
            branch_stack.append(prev)
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesError(f"unmatched ')' in {smiles!r}")
            if pending is not None:
                raise SmilesError(f"dangling bond before ')' in {smiles!r}")
            prev = branch_stack.pop()
            i += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                digits = smiles[i + 1 : i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesError(f"malformed %nn ring closure in {smiles!r}")
                label = int(digits)
                i += 3
            else:
                label = int(ch)
                i += 1
            if prev is None:
                raise SmilesError(f"ring closure before any atom in {smiles!r}")
            if label in rings:
                other, order = rings.pop(label)
                if order is not None and pending is not None and order != pending:
                    raise SmilesError(f"conflicting ring-closure bonds for {label} in {smiles!r}")
                connect(other, prev, pending if pending is not None else order)
            else:
                rings[label] = (prev, pending)
            pending = None
        elif ch == ".":
            raise SmilesError(f"multi-fragment SMILES are not supported: {smiles!r}")
        else:
            raise SmilesError(f"unexpected character {ch!r} in {smiles!r}")

    if branch_stack:
        raise SmilesError(f"unmatched '(' in {smiles!r}")
    if rings:
        raise SmilesError(f"unmatched ring closure {sorted(rings)} in {smiles!r}")
    if pending is not None:
        raise SmilesError(f"dangling bond symbol in {smiles!r}")
    if not atoms:
        raise SmilesError("empty SMILES")

    # default orders: aromatic between aromatic atoms, single otherwise;
    # aromatic bonds outside rings are demoted to single
    adj: list[list[int]] = [[] for _ in atoms]
    for a, b in bonds:
        adj[a].append(b)
        adj[b].append(a)
    bridge = _bridges(len(atoms), adj)
    final: list[Bond] = []
    for (a, b), order in sorted(bonds.items()):
        both_aromatic = atoms[a].aromatic and atoms[b].aromatic
        if order is None:
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        if order is BondOrder.AROMATIC and (a, b) in bridge:
            order = BondOrder.SINGLE
        final.append(Bond(a, b, order))

    graph = MolGraph(tuple(atoms), tuple(final))
    problems = validate(graph)
    if problems:
        raise SmilesError(f"invalid molecule {smiles!r}: " + "; ".join(p.message for p in problems))
    if strict:
        for idx, h in declared_h.items():
            if implicit_hydrogens(graph, idx) != h:
                raise SmilesError(f"unsupported hydrogen count on atom {idx} in {smiles!r}")
    return graph


# ---------------------------------------------------------------------------
# canonical writer
# ---------------------------------------------------------------------------


def _atom_symbol(atom: AtomNode) -> str:
    if atom.element is Element.OTHER:
        return "*"
    if atom.aromatic:
        sym = atom.element.value.lower()
        return f"[{sym}H]" if atom.explicit_h == 1 else (f"[{sym}H{atom.explicit_h}]" if atom.explicit_h else sym)
    return atom.element.value


def _bond_symbol(graph: MolGraph, a: int, b: int, order: BondOrder) -> str:
    if order is BondOrder.DOUBLE:
        return "="
    if order is BondOrder.TRIPLE:
        return "#"
    if order is BondOrder.SINGLE and graph.atoms[a].aromatic and graph.atoms[b].aromatic:
        return "-"
    return ""


def _refine(labels: list[int], adj) -> list[int]:
    n_classes = len(set(labels))
    while True:
        sigs = [
            (labels[i], tuple(sorted((int(o), labels[j]) for j, o in adj[i])))
            for i in range(len(labels))
        ]
        palette = {s: k for k, s in enumerate(sorted(set(sigs)))}
        labels = [palette[s] for s in sigs]
        if len(palette) == n_classes:
            return labels
        n_classes = len(palette)


def _ring_label(d: int) -> str:
    return str(d) if d < 10 else f"%{d:02d}"


def _emit(graph: MolGraph, rank: list[int]) -> str:
    adj = graph.adjacency
    n = len(graph.atoms)
    start = min(range(n), key=rank.__getitem__)
    ordered = [sorted(adj[u], key=lambda e: rank[e[0]]) for u in range(n)]

    visited = [False] * n
    pre = [0] * n
    children: list[list[int]] = [[] for _ in range(n)]
    ring_edges: set[tuple[int, int]] = set()
    counter = 0
    stack: list[tuple[int, int, int]] = [(start, -1, 0)]
    visited[start] = True
    pre[start] = counter
    counter += 1
    while stack:
        u, parent, k = stack.pop()
        if k < len(ordered[u]):
            stack.append((u, parent, k + 1))
            v, _ = ordered[u][k]
            if v == parent:
                continue
            if visited[v]:
                ring_edges.add((min(u, v), max(u, v)))
                continue
            visited[v] = True
            pre[v] = counter
            counter += 1
            children[u].append(v)
            stack.append((v, u, 0))

    # ring bonds grouped per atom: (opening?, partner)
    opens: list[list[int]] = [[] for _ in range(n)]
    closes: list[list[int]] = [[] for _ in range(n)]
    for a, b in ring_edges:
        first, second = (a, b) if pre[a] < pre[b] else (b, a)
        opens[first].append(second)
        closes[second].append(first)

    digit_of: dict[tuple[int, int], int] = {}
    free: list[int] = list(range(1, 100))
    out: list[str] = []

    def write(u: int) -> None:
        out.append(_atom_symbol(graph.atoms[u]))
        released = []
        for v in sorted(closes[u], key=pre.__getitem__):
            d = digit_of.pop((v, u))
            out.append(_ring_label(d))
            released.append(d)
        for v in sorted(opens[u], key=pre.__getitem__):
            d = free.pop(0)
            digit_of[(u, v)] = d
            out.append(_bond_symbol(graph, u, v, graph.bond_order(u, v)))
            out.append(_ring_label(d))
        for d in released:
            free.append(d)
        free.sort()
        kids = children[u]
        for idx, v in enumerate(kids):
            bond = _bond_symbol(graph, u, v, graph.bond_order(u, v))
            if idx < len(kids) - 1:
                out.append("(")
                out.append(bond)
                write(v)
                out.append(")")
            else:
                out.append(bond)
                write(v)

    write(start)
    return "".join(out)


def _initial_labels(graph: MolGraph) -> list[int]:
    inv = []
    for i, atom in enumerate(graph.atoms):
        orders = tuple(sorted(int(o) for _, o in graph.adjacency[i]))
        inv.append((atom.element.index, atom.aromatic, atom.explicit_h, len(orders), orders))
    palette = {s: k for k, s in enumerate(sorted(set(inv)))}
    return [palette[s] for s in inv]


def write(graph: MolGraph) -> str:
    """Canonical SMILES: refinement ranking, ties broken by the smallest emitted string."""
    problems = validate(graph)
    if problems:
        raise SmilesError("cannot write invalid graph: " + "; ".join(p.message for p in problems))
    adj = graph.adjacency
    best: list[str | None] = [None]

    def search(labels: list[int]) -> None:
        labels = _refine(labels, adj)
        counts: dict[int, int] = {}
        for lab in labels:
            counts[lab] = counts.get(lab, 0) + 1
        tied = [lab for lab, c in counts.items() if c > 1]
        if not tied:
            s = _emit(graph, labels)
            if best[0] is None or s < best[0]:
                best[0] = s
            return
        cell = min(tied)
        for m in [i for i, lab in enumerate(labels) if lab == cell]:
            split = [2 * lab + (1 if lab == cell and i != m else 0) for i, lab in enumerate(labels)]
            search(split)

    search(_initial_labels(graph))
    assert best[0] is not None
    return best[0]


def canonicalize(smiles: str, strict: bool = True) -> str:
    return write(parse(smiles, strict=strict))


def is_valid_smiles(smiles: str) -> bool:
    try:
        parse(smiles)
    except SmilesError:
        return False
    return True


__all__ = [
    "MAX_LEN",
    "MAX_SMILES_CHARS",
    "SmilesError",
    "VOCAB",
    "Vocabulary",
    "canonicalize",
    "detokenize",
    "is_valid_smiles",
    "pad_batch",
    "parse",
    "tokenize",
    "write",
]
