"""Every selector on one corpus, scored by the selected-vs-rest SRCC split.

A lower correlation inside the selected set means the selector concentrated
genuine failures of the quality model there; the remainder should stay
highly correlated.
"""

import numpy as np

from worthiness.failnet import FailureNetConfig, init_network, train
from worthiness.ingest import FeatureRecord, FeatureStore, MosTable, ScoreTable
from worthiness.selection import (
    SelectionConfig,
    coreset_select,
    ensemble_from_dropout,
    evaluate_selection,
    greedy_worthiness_select,
    random_select,
    rd_select,
    uncertainty_select,
    variance_select,
)

rng = np.random.default_rng(1)
stage_widths = (8, 16, 24, 32)
n, budget = 800, 60

store = FeatureStore(list(stage_widths), 24)
mos_entries, f_scores, sigma = {}, {}, {}
v = rng.normal(size=stage_widths[1])
v /= np.linalg.norm(v)
for k in range(n):
    image_id = f"img{k:04d}"
    stages = [rng.normal(size=w) for w in stage_widths]
    difficulty = 30.0 / (1.0 + np.exp(-5.0 * (float(stages[1] @ v) - 1.8)))
    m = float(rng.normal(50, 10))
    mos_entries[image_id] = m
    f_scores[image_id] = m + difficulty * float(rng.choice([-1, 1]))
    sigma[image_id] = difficulty + float(rng.uniform(0.1, 0.5))
    store.add(FeatureRecord(image_id, stages, rng.normal(size=24)))
mos = MosTable(mos_entries)
ids = store.ids()

config = FailureNetConfig(stage_widths=stage_widths, projection_width=32, seed=1,
                          epochs=8, pairs_per_epoch=6000, learning_rate=1e-3)
net, _ = train(init_network(config), store, f_scores, mos, config)

selections = {
    "worthiness": greedy_worthiness_select(ids, net, store,
                                           SelectionConfig(budget, 0.0, seed=1)),
    "random": random_select(ids, SelectionConfig(budget, seed=1)),
    "coreset": coreset_select(ids, store, SelectionConfig(budget, seed=1)),
    "rd": rd_select(ids, store, SelectionConfig(budget, seed=1)),
    "uncertainty": uncertainty_select(
        ScoreTable({(i, "q"): f_scores[i] for i in ids},
                   {(i, "q"): sigma[i] for i in ids}),
        "q", SelectionConfig(budget, seed=1)),
    "mc-dropout": variance_select(
        ensemble_from_dropout(store, rng.normal(size=24), members=15,
                              dropout_rate=0.5, seed=1),
        SelectionConfig(budget, seed=1)),
}

print(f"{'selector':<12} {'SRCC selected':>14} {'SRCC rest':>10}")
for name, result in selections.items():
    report = evaluate_selection(result, f_scores, mos)
    print(f"{name:<12} {report.srcc_selected:>14.4f} {report.srcc_rest:>10.4f}")
print("\nlower 'selected' with high 'rest' = better failure identification")
