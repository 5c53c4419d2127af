"""Build a positive set and a supermutant chain for one molecule, then check both with the exact GED oracle."""

from __future__ import annotations

import numpy as np

from semlatent.descriptors import tanimoto_smiles
from semlatent.molgraph import ged_exact
from semlatent.mutation import generate_positive_set, generate_supermutant_chain
from semlatent.smiles import parse, write

anchor = parse("CC(N)Cc1ccccc1")  # 10 heavy atoms, small enough for the exact oracle
print("anchor:", write(anchor))

rng = np.random.default_rng(0)
print("\n1-edit positives")
for rec in generate_positive_set(anchor, k=10, rng=rng):
    op = rec.ops[0]
    d = ged_exact(anchor, parse(rec.smiles), 2)
    print(f"  {rec.smiles:<24} {op.kind:<8} site={op.site:<2} ged={d}  tanimoto={tanimoto_smiles(write(anchor), rec.smiles):.3f}")

print("\nsupermutant chain (n=3)")
for rec in generate_supermutant_chain(anchor, n=3, rng=rng):
    d = ged_exact(anchor, parse(rec.smiles), 3)
    print(f"  depth {rec.ged_nominal}: {rec.smiles:<24} exact ged={d}")
