"""Descriptors of a small drug-like corpus and the Mahalanobis filter that rejects positives with outlying property shifts."""

from __future__ import annotations

import numpy as np

from semlatent.corpus import load_reference_corpus
from semlatent.descriptors import (
    PROPERTY_NAMES,
    default_threshold,
    filter_faulty_positives,
    fit_covariance,
    properties_of,
)
from semlatent.mutation import generate_positive_set
from semlatent.smiles import parse

corpus = load_reference_corpus()
model = fit_covariance([properties_of(s) for s in corpus])
print(f"{len(corpus)} reference molecules; default threshold {default_threshold():.4f}")
for name, mu, var in zip(PROPERTY_NAMES, model.mean, np.diag(model.cov)):
    print(f"  {name:<22} mean {mu:8.3f}  sd {np.sqrt(var):7.3f}")

anchor = parse(corpus[0])
records = generate_positive_set(anchor, 10, np.random.default_rng(1))
print(f"\nsweep for anchor {corpus[0]}")
for thr in (8.0, 4.8176, 2.0, 1.0, 0.5):
    out = filter_faulty_positives(anchor, records, model, thr)
    print(f"  threshold {thr:<7} kept {sum(r.verdict == 'KEPT' for r in out)}/{len(out)}")
