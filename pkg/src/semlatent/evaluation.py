"""Latent-space evaluation: GED/EuD rank correlation, slerp interpolation and property awareness."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Callable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .descriptors import PROPERTY_NAMES, morgan_fingerprint, properties_of, tanimoto_distance
from .smiles import SmilesError, parse, write

Encoder = Callable[[Sequence[str]], np.ndarray]
Sampler = Callable[[np.ndarray, int, np.random.Generator], list[str]]

ANTIPODAL_TOL = 1e-6
SMALL_ANGLE = 1e-6


class UndefinedCorrelation(ValueError):
    """A rank correlation with a constant input."""


# ---------------------------------------------------------------------------
# distances and rank statistics
# ---------------------------------------------------------------------------


def euclidean(z1, z2) -> float:
    return float(np.linalg.norm(np.asarray(z1, dtype=np.float64) - np.asarray(z2, dtype=np.float64)))


def average_ranks(xs) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(xs, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _check_pair(xs, ys) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("rank correlation needs two equal-length vectors of length >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelation("zero variance input")
    return x, y


def spearman(xs, ys) -> float:
    """Pearson correlation of average ranks."""
    x, y = _check_pair(xs, ys)
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    rho = float(rx @ ry / math.sqrt(float(rx @ rx) * float(ry @ ry)))
    return max(-1.0, min(1.0, rho))


def kendall(xs, ys) -> float:
    """Tau-b: (concordant - discordant) over the tie-corrected pair counts."""
    x, y = _check_pair(xs, ys)
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(len(x), 1)
    s = float((dx * dy)[iu].sum())
    n_x = float(np.count_nonzero(dx[iu]))
    n_y = float(np.count_nonzero(dy[iu]))
    tau = s / math.sqrt(n_x * n_y)
    return max(-1.0, min(1.0, tau))


# ---------------------------------------------------------------------------
# GED / EuD correlation
# ---------------------------------------------------------------------------


@dataclass
class CorrelationReport:
    model_tag: str
    latent_dim: int
    anchor_ids: list[int]
    rhos: list[float]
    taus: list[float]
    excluded: int = 0

    @property
    def mean_rho(self) -> float:
        return float(np.mean(self.rhos)) if self.rhos else float("nan")

    @property
    def std_rho(self) -> float:
        return float(np.std(self.rhos)) if self.rhos else float("nan")

    @property
    def mean_tau(self) -> float:
        return float(np.mean(self.taus)) if self.taus else float("nan")

    @property
    def std_tau(self) -> float:
        return float(np.std(self.taus)) if self.taus else float("nan")

    def summary(self) -> dict:
        return {
            "model_tag": self.model_tag,
            "latent_dim": self.latent_dim,
            "mean_rho": round(self.mean_rho, 6),
            "std_rho": round(self.std_rho, 6),
            "mean_tau": round(self.mean_tau, 6),
            "std_tau": round(self.std_tau, 6),
            "n_anchors": len(self.rhos),
            "excluded": self.excluded,
        }

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("anchor_id", "spearman", "kendall"))
        for a, r, t in zip(self.anchor_ids, self.rhos, self.taus):
            w.writerow((a, f"{r:.6f}", f"{t:.6f}"))

    def write_json(self, fh: IO[str]) -> None:
        json.dump(self.summary(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def ged_eud_report(
    chains: Mapping[int, Sequence[str]],
    encoder: Encoder,
    model_tag: str = "model",
    latent_dim: int | None = None,
) -> CorrelationReport:
    """Correlate nominal edit depth with latent distance from the anchor, per anchor.

    ``chains[a]`` lists the anchor SMILES followed by its chain members at
    depths 1, 2, ...  Anchors whose distances are all equal are excluded and
    counted; chains with fewer than two members cannot be ranked and are
    counted the same way.
    """
    ids = sorted(chains)
    flat: list[str] = []
    spans = []
    for a in ids:
        spans.append((len(flat), len(chains[a])))
        flat.extend(chains[a])
    codes = np.asarray(encoder(flat), dtype=np.float64)
    if codes.shape[0] != len(flat):
        raise ValueError(f"encoder returned {codes.shape[0]} codes for {len(flat)} molecules")
    report = CorrelationReport(model_tag, latent_dim or codes.shape[1], [], [], [])
    for a, (start, length) in zip(ids, spans):
        if length < 3:
            report.excluded += 1
            continue
        z = codes[start : start + length]
        dist = np.linalg.norm(z[1:] - z[0], axis=1)
        depth = np.arange(1, length)
        try:
            rho, tau = spearman(depth, dist), kendall(depth, dist)
        except UndefinedCorrelation:
            report.excluded += 1
            continue
        report.anchor_ids.append(a)
        report.rhos.append(rho)
        report.taus.append(tau)
    return report


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def slerp(z1, z2, t: float) -> np.ndarray:
    a = np.asarray(z1, dtype=np.float64)
    b = np.asarray(z2, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    omega = math.acos(max(-1.0, min(1.0, float(a @ b))))
    if omega > math.pi - ANTIPODAL_TOL:
        raise ValueError("slerp is undefined for antipodal endpoints")
    if omega < SMALL_ANGLE:
        out = (1 - t) * a + t * b
    else:
        out = (math.sin((1 - t) * omega) * a + math.sin(t * omega) * b) / math.sin(omega)
    return out / np.linalg.norm(out)


@dataclass
class InterpolationResult:
    endpoints: tuple[str, str]
    midpoint: np.ndarray
    counts: dict[str, int] = field(default_factory=dict)
    n_samples: int = 0
    modal: str | None = None
    tanimoto: tuple[float, float] | None = None

    @property
    def valid(self) -> int:
        return sum(self.counts.values())

    @property
    def mean_tanimoto(self) -> float | None:
        return None if self.tanimoto is None else (self.tanimoto[0] + self.tanimoto[1]) / 2


def _canonical(smiles: str) -> str | None:
    try:
        return write(parse(smiles))
    except SmilesError:
        return None


def interpolation_study(
    pairs: Sequence[tuple[str, str]],
    encoder: Encoder,
    sampler: Sampler,
    n_samples: int = 100,
    rng: np.random.Generator | None = None,
) -> list[InterpolationResult]:
    """Decode the slerp midpoint of each pair ``n_samples`` times and score its modal output.

    ``sampler(z, n, rng)`` returns ``n`` decoded strings.  The modal valid
    canonical SMILES is the interpolant; ties go to the candidate with the
    lower mean Tanimoto distance to the endpoints, then to the smaller string.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    results = []
    for left, right in pairs:
        z = np.asarray(encoder([left, right]), dtype=np.float64)
        mid = slerp(z[0], z[1], 0.5)
        counts = Counter(c for c in map(_canonical, sampler(mid, n_samples, rng)) if c is not None)
        res = InterpolationResult((left, right), mid, dict(sorted(counts.items())), n_samples)
        if counts:
            fps = (morgan_fingerprint(parse(left)), morgan_fingerprint(parse(right)))

            def score(s: str) -> tuple[float, float]:
                fp = morgan_fingerprint(parse(s))
                return tanimoto_distance(fps[0], fp), tanimoto_distance(fps[1], fp)

            top = max(counts.values())
            tied = sorted(s for s, c in counts.items() if c == top)
            res.modal = min(tied, key=lambda s: (sum(score(s)), s))
            res.tanimoto = score(res.modal)
        results.append(res)
    return results


def interpolation_summary(results: Sequence[InterpolationResult], model_tag: str = "model") -> dict:
    scored = [r for r in results if r.tanimoto is not None]
    return {
        "model_tag": model_tag,
        "n_pairs": len(results),
        "n_scored": len(scored),
        "mean_tanimoto": round(float(np.mean([r.mean_tanimoto for r in scored])), 6) if scored else None,
        "pairs": [
            {
                "left": r.endpoints[0],
                "right": r.endpoints[1],
                "modal": r.modal,
                "modal_count": r.counts.get(r.modal, 0) if r.modal else 0,
                "valid": r.valid,
                "tanimoto_left": None if r.tanimoto is None else round(r.tanimoto[0], 6),
                "tanimoto_right": None if r.tanimoto is None else round(r.tanimoto[1], 6),
            }
            for r in results
        ],
    }


# ---------------------------------------------------------------------------
# property awareness
# ---------------------------------------------------------------------------


@dataclass
class PropertyReport:
    names: tuple[str, ...]
    rho: np.ndarray  # (draws, properties)
    coords: np.ndarray  # (n, 2) projection of the first draw
    coord_smiles: list[str]

    @property
    def mean(self) -> np.ndarray:
        n = np.sum(~np.isnan(self.rho), axis=0)
        total = np.nansum(self.rho, axis=0)
        return np.where(n > 0, total / np.maximum(n, 1), np.nan)

    @property
    def stderr(self) -> np.ndarray:
        n = np.sum(~np.isnan(self.rho), axis=0)
        dev = np.where(np.isnan(self.rho), 0.0, self.rho - self.mean)
        var = (dev**2).sum(axis=0) / np.maximum(n - 1, 1)
        return np.where(n > 1, np.sqrt(var / np.maximum(n, 1)), np.nan)

    def write_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("property", "mean_rho", "stderr", "draws"))
        for name, m, se, n in zip(self.names, self.mean, self.stderr, np.sum(~np.isnan(self.rho), axis=0)):
            w.writerow((name, f"{m:.6f}", f"{se:.6f}", int(n)))

    def write_coords(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("smiles", "pc1", "pc2"))
        for s, (x, y) in zip(self.coord_smiles, self.coords):
            w.writerow((s, f"{x:.6f}", f"{y:.6f}"))


def pca_2d(codes: np.ndarray) -> np.ndarray:
    x = np.asarray(codes, dtype=np.float64)
    x = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    comps = vt[:2]
    # fix signs so the projection is deterministic
    signs = np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])
    out = x @ (comps * signs[:, None]).T
    if out.shape[1] < 2:
        out = np.hstack([out, np.zeros((len(out), 2 - out.shape[1]))])
    return out


def property_correlation_report(
    molecules: Sequence[str],
    encoder: Encoder,
    n_draws: int = 10,
    draw_size: int = 2000,
    rng: np.random.Generator | None = None,
) -> PropertyReport:
    """Spearman correlation between pairwise latent distance and per-property |difference|."""
    if draw_size > len(molecules):
        raise ValueError(f"draw size {draw_size} exceeds the {len(molecules)} available molecules")
    if draw_size < 3:
        raise ValueError("draw size must be at least 3")
    rng = rng if rng is not None else np.random.default_rng(0)
    props = np.stack([properties_of(s).as_array() for s in molecules])
    codes = np.asarray(encoder(list(molecules)), dtype=np.float64)
    iu = np.triu_indices(draw_size, 1)
    rho = np.full((n_draws, len(PROPERTY_NAMES)), np.nan)
    coords = np.zeros((0, 2))
    coord_smiles: list[str] = []
    for d in range(n_draws):
        idx = np.sort(rng.choice(len(molecules), size=draw_size, replace=False))
        z = codes[idx]
        eud = pdist(z)  # condensed order matches triu_indices(k=1)
        for k in range(len(PROPERTY_NAMES)):
            p = props[idx, k]
            delta = np.abs(p[:, None] - p[None, :])[iu]
            try:
                rho[d, k] = spearman(eud, delta)
            except UndefinedCorrelation:
                pass
        if d == 0:
            coords = pca_2d(z)
            coord_smiles = [molecules[i] for i in idx]
    return PropertyReport(PROPERTY_NAMES, rho, coords, coord_smiles)
