"""Shared synthetic corpus builders.

Two corpora drive the heavier suites:

* benchmark_corpus - 2000 images whose prediction error is a noiseless
  sigmoid of one stage-feature projection. The hardest images share one
  semantic logit cluster, so diversity weighting has something to trade.
* loop_corpus - MOS exactly linear in the concatenated stage features with a
  rare high-weight "hard" coordinate. Ridge shrinkage keeps that coordinate
  underfit until enough hard images get labeled, which is what a good
  selector accelerates.
"""

import numpy as np

from worthiness.ingest import (
    CorpusManifest,
    FeatureRecord,
    FeatureStore,
    ManifestImage,
    MosTable,
)

BENCHMARK_STAGE_WIDTHS = (16, 32, 64, 128)
BENCHMARK_LOGIT_WIDTH = 32
LOOP_STAGE_WIDTHS = (4, 6, 8, 10)
LOOP_LOGIT_WIDTH = 8


def benchmark_corpus(seed=0, n=2000, stage_widths=BENCHMARK_STAGE_WIDTHS,
                     logit_width=BENCHMARK_LOGIT_WIDTH):
    """Returns (features, f_scores, mos, uncertainty, head_direction)."""
    rng = np.random.default_rng(seed)
    store = FeatureStore(list(stage_widths), logit_width)
    mos_entries: dict[str, float] = {}
    f_scores: dict[str, float] = {}
    sigma: dict[str, float] = {}
    v = rng.normal(size=stage_widths[1])
    v /= np.linalg.norm(v)
    hard_dir = rng.normal(size=logit_width)
    hard_dir *= 6.0 / np.linalg.norm(hard_dir)
    for k in range(n):
        image_id = f"img{k:05d}"
        stages = [rng.normal(size=d) for d in stage_widths]
        t = float(stages[1] @ v)
        difficulty = 40.0 / (1.0 + np.exp(-5.0 * (t - 2.0)))
        m = float(rng.normal(50.0, 10.0))
        mos_entries[image_id] = m
        f_scores[image_id] = m + difficulty * float(rng.choice([-1.0, 1.0]))
        sigma[image_id] = difficulty + float(rng.uniform(0.1, 0.6))
        weight = min(difficulty / 40.0, 1.0)
        store.add(FeatureRecord(image_id, stages,
                                rng.normal(size=logit_width) + weight * hard_dir))
    return store, f_scores, MosTable(mos_entries), sigma, hard_dir


def loop_corpus(seed=0, n_labeled=40, n_unlabeled=400, n_holdout=150,
                stage_widths=LOOP_STAGE_WIDTHS, logit_width=LOOP_LOGIT_WIDTH,
                hard_fraction=0.12, hard_weight=12.0, noise=0.5):
    """Returns (manifest, features, oracle mos)."""
    rng = np.random.default_rng(seed)
    total = n_labeled + n_unlabeled + n_holdout
    p = sum(stage_widths)
    w = rng.normal(size=p)
    w[p - stage_widths[-1]] = hard_weight  # first coordinate of the last stage
    store = FeatureStore(list(stage_widths), logit_width)
    images = []
    mos_entries: dict[str, float] = {}
    for k in range(total):
        image_id = f"img{k:05d}"
        stages = [rng.normal(size=d) for d in stage_widths]
        hard = rng.random() < hard_fraction
        stages[-1][0] = 3.0 if hard else 0.0
        logit = rng.normal(size=logit_width) + (4.0 if hard else 0.0)
        mos_entries[image_id] = float(np.concatenate(stages) @ w + noise * rng.normal())
        store.add(FeatureRecord(image_id, stages, logit))
        if k < n_labeled:
            part = "labeled"
        elif k < n_labeled + n_unlabeled:
            part = "unlabeled"
        else:
            part = "holdout"
        images.append(ManifestImage(image_id, part))
    manifest = CorpusManifest("loop-synthetic", list(stage_widths), logit_width, images)
    return manifest, store, MosTable(mos_entries)


def committee_ensemble(f_scores, difficulty_hint, members=15, seed=0):
    """Simulated query-by-committee table: spread grows with difficulty."""
    from worthiness.ingest import EnsembleTable

    rng = np.random.default_rng(seed)
    pad = len(str(members - 1))
    entries = {}
    for image_id in sorted(f_scores):
        spread = 0.2 + 0.25 * difficulty_hint[image_id]
        for m in range(members):
            entries[(image_id, f"m{m:0{pad}d}")] = float(
                f_scores[image_id] + spread * rng.normal()
            )
    return EnsembleTable(entries)
