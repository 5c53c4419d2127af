"""Train naive and joint models for a few hundred steps and compare their GED/EuD rank correlation.

This is a quick look; the full desk-scale study is ``semlatent reproduce --scale desk``.
"""

from __future__ import annotations

import torch

from semlatent.corpus import toy_corpus
from semlatent.evaluation import ged_eud_report
from semlatent.model import ModelConfig, TrainConfig, build_model, encode_smiles, train
from semlatent.mutation import generate_dataset, generate_supermutants
from semlatent.pipeline import chain_map, filter_records, training_groups

torch.set_num_threads(1)
corpus = toy_corpus(330, seed=3, min_atoms=10, max_atoms=20)
train_smiles, heldout = corpus[:300], corpus[300:]
groups = training_groups(filter_records(generate_dataset(train_smiles, 10, seed=3)))
chains = chain_map(generate_supermutants(heldout, 5, seed=3))
print(f"{len(groups)} training groups, {len(chains)} held-out chains")

untrained = build_model(ModelConfig(seed=3))
print("untrained", ged_eud_report(chains, lambda s: encode_smiles(untrained, s), "untrained").summary())
for tag, lam in (("naive", 0.0), ("joint", 0.5)):
    cfg = ModelConfig(lam=lam, seed=3)
    model = build_model(cfg)
    history = train(model, groups, cfg, TrainConfig(steps=300, lr=1e-3))
    rep = ged_eud_report(chains, lambda s: encode_smiles(model, s), tag)
    print(tag, rep.summary(), "final", {k: round(v, 3) for k, v in history[-1].items()})
