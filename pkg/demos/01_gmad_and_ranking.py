"""Falsify a pool of quality models with gMAD pairs and rank them.

Builds a synthetic 9-model score table over 2000 images, runs the full
round robin (Q=5 levels, K=2 pairs -> 720 pairs on 1440 distinct images),
simulates noisy 2AFC judgments against a hidden ground truth, and
aggregates the outcome into Perron weights.
"""

import numpy as np

from worthiness.gmad import GmadConfig, run_round_robin
from worthiness.ingest import ScoreTable
from worthiness.ranking import ComparisonMatrix, dump_ranking, rank_comparisons

rng = np.random.default_rng(0)

# hidden truth plus per-model noise: lower-index models are more faithful
images = [f"img{i:05d}" for i in range(2000)]
truth = {i: rng.uniform(0, 100) for i in images}
models = [f"model{m}" for m in range(9)]
noise_level = {m: 2.0 + 6.0 * k for k, m in enumerate(models)}
scores = ScoreTable({
    (i, m): float(truth[i] + rng.normal(0, noise_level[m]))
    for i in images for m in models
})

pairs = run_round_robin(scores, GmadConfig(quality_levels=5, pairs_per_level=2))
print(f"round robin: {len(pairs)} pairs, "
      f"{len({x for p in pairs for x in (p.x, p.y)})} distinct images")

# simulate 25 raters: each picks the truly-better image with 90% reliability
counts = np.zeros((9, 9), dtype=np.int64)
index = {m: k for k, m in enumerate(models)}
for pair in pairs:
    truly_better_is_x = truth[pair.x] >= truth[pair.y]
    for _ in range(25):
        x_wins = truly_better_is_x if rng.random() < 0.9 else not truly_better_is_x
        if x_wins:
            counts[index[pair.attacker_model], index[pair.defender_model]] += 1
        else:
            counts[index[pair.defender_model], index[pair.attacker_model]] += 1

result = rank_comparisons(ComparisonMatrix(models, counts))
print("\naggregated ranking (25 simulated raters, 18000 judgments):")
print(dump_ranking(result))
print("low-noise models should float to the top; noisiest sink to the bottom")
