"""Train the failure predictor and watch it find a model's weak spots.

The corpus plants a difficulty pattern: a quality model's absolute error is
a noiseless function of one feature stage. After rank-training on fidelity
loss, the predictor's difficulty scores should order images like the true
errors do.
"""

import numpy as np

from worthiness.failnet import (
    FailureNetConfig,
    difficulty_scores,
    init_network,
    pair_probability,
    train,
)
from worthiness.ingest import FeatureRecord, FeatureStore, MosTable
from worthiness.metrics import srcc

rng = np.random.default_rng(7)
stage_widths = (8, 12, 16, 24)

store = FeatureStore(list(stage_widths), 16)
mos_entries, f_scores = {}, {}
direction = rng.normal(size=stage_widths[0])
for k in range(400):
    image_id = f"img{k:04d}"
    stages = [rng.normal(size=w) for w in stage_widths]
    error = abs(float(stages[0] @ direction))
    mos_entries[image_id] = float(rng.normal())
    f_scores[image_id] = mos_entries[image_id] + error * float(rng.choice([-1, 1]))
    store.add(FeatureRecord(image_id, stages, rng.normal(size=16)))
mos = MosTable(mos_entries)

config = FailureNetConfig(stage_widths=stage_widths, projection_width=16, seed=7,
                          epochs=10, pairs_per_epoch=4000, learning_rate=3e-3)
net, report = train(init_network(config), store, f_scores, mos, config)

print("epoch losses:", [round(loss, 4) for loss in report.epoch_losses])
print(f"held-out pair ranking accuracy: {report.holdout_accuracy:.3f}")

ids = store.ids()
g = difficulty_scores(net, store, ids)
true_error = [abs(f_scores[i] - mos[i]) for i in ids]
print(f"SRCC(predicted difficulty, true |error|): "
      f"{srcc([g[i] for i in ids], true_error):.3f}")

a, b = ids[0], ids[1]
print(f"\nP({a} harder than {b}) = "
      f"{pair_probability(net, store.record(a), store.record(b)):.3f} "
      f"(true errors {abs(f_scores[a]-mos[a]):.2f} vs {abs(f_scores[b]-mos[b]):.2f})")
