"""Acceptance gate: one PASS/FAIL line per criterion, at the stated tolerances.

The lines are collected in a fixture and printed in an "acceptance criteria"
section of the terminal summary, sorted by criterion number.  The two
desk-scale runs behind criteria 6, 7 and 10 are shared through a module
fixture and take roughly half an hour on one CPU.
"""

from __future__ import annotations

import itertools
import json
import math
import time

import numpy as np
import pytest
import torch

from semlatent.corpus import toy_corpus
from semlatent.descriptors import (
    CovarianceModel,
    filter_faulty_positives,
    fit_covariance,
    mahalanobis,
    properties_of,
)
from semlatent.evaluation import kendall, spearman
from semlatent.model import (
    ModelConfig,
    build_model,
    encode_smiles,
    generate,
    gradient_check,
    reconstruction_loss,
    supcon_loss,
)
from semlatent.molgraph import is_isomorphic, ged_exact
from semlatent.mutation import generate_positive_set, generate_supermutant_chain
from semlatent.pipeline import reproduce
from semlatent.smiles import detokenize, pad_batch, parse, tokenize, write

pytestmark = pytest.mark.acceptance


def report(lines: list, n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    lines.append(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1, 2: mutation soundness and chain fidelity
# ---------------------------------------------------------------------------


def test_c01_mutation_soundness(acceptance_lines):
    t = time.perf_counter()
    anchors = toy_corpus(200, seed=101, min_atoms=3, max_atoms=10)
    total = good = 0
    for i, s in enumerate(anchors):
        g = parse(s)
        for rec in generate_positive_set(g, 10, np.random.default_rng([101, i])):
            total += 1
            good += ged_exact(g, parse(rec.smiles), 1) == 1
    elapsed = time.perf_counter() - t
    report(acceptance_lines, 1, good == total and elapsed < 300,
           f"{good}/{total} mutants at GED 1 over {len(anchors)} anchors, {elapsed:.1f}s (< 300s)")


def test_c02_chain_fidelity(acceptance_lines):
    t = time.perf_counter()
    n = 3
    anchors = toy_corpus(100, seed=202, min_atoms=3, max_atoms=10)
    members = exact = bounded = 0
    for i, s in enumerate(anchors):
        g = parse(s)
        for rec in generate_supermutant_chain(g, n, np.random.default_rng([202, i])):
            d = ged_exact(g, parse(rec.smiles), n)
            members += 1
            exact += d == rec.ged_nominal
            bounded += d is not None and d <= n
    elapsed = time.perf_counter() - t
    frac = exact / members
    report(acceptance_lines, 2, frac >= 0.90 and bounded == members and elapsed < 600,
           f"exact {exact}/{members} ({frac:.3f} >= 0.90), <= n {bounded}/{members}, {elapsed:.1f}s (< 600s)")


# ---------------------------------------------------------------------------
# 3: parser round trip
# ---------------------------------------------------------------------------


def test_c03_round_trip(acceptance_lines):
    mols = toy_corpus(10_000, seed=303, min_atoms=2, max_atoms=20)
    rt = sum(is_isomorphic(parse(s), parse(write(parse(s)))) for s in mols)
    rng = np.random.default_rng(303)
    perm_ok = 0
    for s in mols[:1000]:
        g = parse(s)
        perm_ok += write(g.permuted(rng.permutation(len(g.atoms)).tolist())) == write(g)
    report(acceptance_lines, 3, rt == len(mols) and perm_ok == 1000,
           f"round trip {rt}/{len(mols)}, permutation invariance {perm_ok}/1000")


# ---------------------------------------------------------------------------
# 4: losses and gradients
# ---------------------------------------------------------------------------


def test_c04_loss_correctness(acceptance_lines):
    t = time.perf_counter()
    z = torch.tensor([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]], dtype=torch.float64)
    sc = supcon_loss(z, [0, 0, 1], [True, False, False], 1.0).item()
    targets = torch.tensor([[5, 6, 7, 2], [8, 2, 0, 0]])
    rl = reconstruction_loss(torch.zeros(2, 4, 39, dtype=torch.float64), targets).item()
    grads = {lam: gradient_check(lam) for lam in (0.0, 0.5, 1.0)}
    elapsed = time.perf_counter() - t
    ok = (abs(sc - 0.126928) <= 1e-6 and abs(rl - math.log(39)) <= 1e-9
          and max(grads.values()) <= 1e-5 and elapsed < 120)
    g = ", ".join(f"lam={k}: {v:.2e}" for k, v in grads.items())
    report(acceptance_lines, 4, ok, f"supcon {sc:.6f}, uniform CE - log 39 = {rl - math.log(39):.1e}, grad rel err {g}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 5: overfit capability
# ---------------------------------------------------------------------------


def test_c05_overfit(acceptance_lines):
    t = time.perf_counter()
    smiles = toy_corpus(64, seed=505)
    cfg = ModelConfig(layers=2, hidden=64, latent=16, lam=0.0, seed=0)
    model = build_model(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    tokens = torch.as_tensor(pad_batch([tokenize(s) for s in smiles]))
    acc, step = 0.0, 0
    for step in range(1, 5001):
        model.train()
        opt.zero_grad()
        z = model.encode(tokens)
        loss = reconstruction_loss(model.decode_logits(z, tokens[:, :-1]), tokens[:, 1:])
        loss.backward()
        opt.step()
        if step % 250 == 0:
            out = generate(model, encode_smiles(model, smiles))
            acc = float(np.mean([detokenize(o) == s for o, s in zip(out, smiles)]))
            if acc >= 0.95:
                break
    elapsed = time.perf_counter() - t
    report(acceptance_lines, 5, acc >= 0.95 and elapsed < 900,
           f"exact greedy reconstruction {acc:.3f} at step {step}, {elapsed:.0f}s (< 900s)")


# ---------------------------------------------------------------------------
# 8, 9: rank statistics and Mahalanobis
# ---------------------------------------------------------------------------


def brute_ranks(x):
    return np.array([sum(v < xi for v in x) + (sum(v == xi for v in x) + 1) / 2 for xi in x])


def brute_spearman(x, y):
    rx, ry = brute_ranks(x), brute_ranks(y)
    mx, my = rx.mean(), ry.mean()
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    return num / math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))


def brute_kendall(x, y):
    c = d = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        sx, sy = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
        if sx and sy:
            c += sx == sy
            d += sx != sy
        elif sx:
            ty += 1
        elif sy:
            tx += 1
    return (c - d) / math.sqrt((c + d + tx) * (c + d + ty))


def test_c08_rank_oracles(acceptance_lines):
    rng = np.random.default_rng(808)
    worst, cases = 0.0, 0
    while cases < 1000:
        n = int(rng.integers(3, 25))
        if cases % 2:
            x, y = rng.integers(0, 4, n).astype(float), rng.integers(0, 4, n).astype(float)
        else:
            x, y = rng.normal(size=n), rng.normal(size=n)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        cases += 1
        worst = max(worst, abs(spearman(x, y) - brute_spearman(x, y)), abs(kendall(x, y) - brute_kendall(x, y)))
    report(acceptance_lines, 8, worst <= 1e-12, f"max |fast - brute| = {worst:.1e} over {cases} vector pairs (<= 1e-12)")


def test_c09_mahalanobis(acceptance_lines):
    rng = np.random.default_rng(909)
    ident = CovarianceModel(np.zeros(10), np.eye(10), 0.0)
    worst = max(abs(mahalanobis(x, y, ident) - np.linalg.norm(x - y))
                for x, y in (rng.normal(size=(2, 10)) for _ in range(1000)))
    anchors = toy_corpus(40, seed=909, min_atoms=6, max_atoms=14)
    model = fit_covariance([properties_of(s) for s in anchors])
    monotone = True
    for i, s in enumerate(anchors[:10]):
        g = parse(s)
        recs = generate_positive_set(g, 10, np.random.default_rng([909, i]))
        prev = None
        for thr in np.linspace(8.0, 0.0, 10):
            kept = {r.smiles for r in filter_faulty_positives(g, recs, model, float(thr)) if r.verdict == "KEPT"}
            monotone &= prev is None or kept <= prev
            prev = kept
    report(acceptance_lines, 9, worst <= 1e-12 and monotone,
           f"max |d_M - d_E| = {worst:.1e} on 1000 pairs, kept set monotone over 10 thresholds: {monotone}")


# ---------------------------------------------------------------------------
# 6, 7, 10: desk-scale runs
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    runs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(f"desk_{name}")
        t = time.perf_counter()
        summary = reproduce(out, seed=7, scale="desk")
        runs.append((out, summary, time.perf_counter() - t))
    return runs


def _by_tag(summary):
    return {m["model_tag"]: m for m in summary["models"]}


def test_c06_desk_effect(desk_runs, acceptance_lines):
    _, summary, elapsed = desk_runs[0]
    m = _by_tag(summary)
    r0, r5, r1, ru = (m[t]["mean_rho"] for t in ("naive", "joint", "contra", "untrained"))
    ok = r5 >= r0 + 0.15 and r1 >= r0 + 0.15 and r5 > ru and elapsed < 45 * 60
    report(acceptance_lines, 6, ok, f"rho naive {r0:.4f}, joint {r5:.4f} (need >= {r0 + 0.15:.4f}), contra {r1:.4f}, "
                  f"untrained {ru:.4f}; run {elapsed / 60:.1f} min (< 45)")


def test_c07_interpolation(desk_runs, acceptance_lines):
    _, summary, _ = desk_runs[0]
    m = _by_tag(summary)
    naive, joint = m["naive"]["interpolation"], m["joint"]["interpolation"]
    both = [(a, b) for a, b in zip(naive["pairs"], joint["pairs"])
            if a["tanimoto_left"] is not None and b["tanimoto_left"] is not None]
    mean = lambda rows: float(np.mean([(r["tanimoto_left"] + r["tanimoto_right"]) / 2 for r in rows]))
    t0 = mean([a for a, _ in both]) if both else float("nan")
    t5 = mean([b for _, b in both]) if both else float("nan")
    per_pair = len(naive["pairs"]) == len(joint["pairs"]) == 20
    report(acceptance_lines, 7, bool(both) and t5 < t0 and per_pair,
           f"mean modal Tanimoto joint {t5:.4f} vs naive {t0:.4f} (need joint < naive) "
           f"on {len(both)} commonly scored pairs of 20")


def test_c10_determinism(desk_runs, acceptance_lines):
    (a, sa, _), (b, sb, _) = desk_runs
    files = ("corpus.smi", "dataset.jsonl", "supermutants.jsonl")
    same_bytes = all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    keys = ("mean_rho", "std_rho", "mean_tau", "std_tau")
    same_metrics = [[x[k] for k in keys] for x in sa["models"]] == [[x[k] for k in keys] for x in sb["models"]]
    same_report = json.dumps(sa, sort_keys=True) == json.dumps(sb, sort_keys=True)
    report(acceptance_lines, 10, same_bytes and same_metrics,
           f"datasets byte-identical: {same_bytes}, metrics equal to 6 decimals: {same_metrics}, "
           f"full report equal: {same_report}")
