"""Stand-in head fitting, oracle gating, and the select/label/refit loop."""

import json

import numpy as np
import pytest
from conftest import LOOP_STAGE_WIDTHS, loop_corpus

from worthiness.errors import BudgetExceedsPool, EmptyTrainingSet, UnknownImage
from worthiness.failnet import FailureNetConfig
from worthiness.ingest import FeatureRecord, FeatureStore, MosTable
from worthiness.loop import (
    LoopConfig,
    OracleMos,
    fit_standin_head,
    run_loop,
)
from worthiness.selection import evaluate_selection


def light_failnet_config(**kw):
    defaults = dict(stage_widths=LOOP_STAGE_WIDTHS, projection_width=8, epochs=2,
                    pairs_per_epoch=400, learning_rate=3e-3, holdout_pairs=100)
    defaults.update(kw)
    return FailureNetConfig(**defaults)


def linear_store(n=40, width=3, seed=0):
    rng = np.random.default_rng(seed)
    store = FeatureStore([width], 2)
    truth = rng.normal(size=width)
    mos = {}
    for k in range(n):
        image_id = f"i{k:03d}"
        x = rng.normal(size=width)
        store.add(FeatureRecord(image_id, [x], rng.normal(size=2)))
        mos[image_id] = float(x @ truth + 2.0)
    return store, MosTable(mos)


class TestStandinHead:
    def test_recovers_noiseless_linear_mos(self):
        store, mos = linear_store()
        ids = store.ids()
        head = fit_standin_head(ids[:25], store, mos, ridge=1e-8)
        predictions = head.predict(store, ids[25:])
        for image_id, value in predictions.items():
            assert value == pytest.approx(mos[image_id], abs=1e-6)

    def test_huge_ridge_predicts_label_mean(self):
        store, mos = linear_store()
        ids = store.ids()[:20]
        head = fit_standin_head(ids, store, mos, ridge=1e9)
        mean = np.mean([mos[i] for i in ids])
        assert np.max(np.abs(head.weights)) < 1e-3
        for value in head.predict(store, ids).values():
            assert value == pytest.approx(mean, abs=1e-3)

    def test_deterministic(self):
        store, mos = linear_store()
        a = fit_standin_head(store.ids(), store, mos, ridge=0.5)
        b = fit_standin_head(store.ids(), store, mos, ridge=0.5)
        assert np.array_equal(a.weights, b.weights)
        assert a.intercept == b.intercept

    def test_too_few_labels(self):
        store, mos = linear_store()
        with pytest.raises(EmptyTrainingSet):
            fit_standin_head(store.ids()[:1], store, mos)


class TestOracleMos:
    def test_gated_until_reveal(self):
        oracle = OracleMos(MosTable({"a": 1.0, "b": 2.0}), initially_visible=["a"])
        assert oracle.get("a") == 1.0
        with pytest.raises(UnknownImage):
            oracle.get("b")
        oracle.reveal(["b"])
        assert oracle.get("b") == 2.0
        assert oracle.pre_reveal_reads() == ["b"]  # the failed read is on record

    def test_evaluation_peek_not_counted_as_read(self):
        oracle = OracleMos(MosTable({"a": 1.0, "b": 2.0}), initially_visible=["a"])
        peek = oracle.peek_for_evaluation(["b"])
        assert peek["b"] == 2.0
        assert oracle.pre_reveal_reads() == []
        assert ("evaluation", "b") in oracle.log


class TestRunLoop:
    def test_single_iteration_matches_manual_pass(self):
        manifest, store, mos = loop_corpus(seed=3, n_unlabeled=150, n_holdout=60)
        config = LoopConfig(iterations=1, budget=20, selector="worthiness",
                            ridge=50.0, seed=3, failnet=light_failnet_config())
        report = run_loop(manifest, store, mos, config)
        assert len(report.iterations) == 1
        it = report.iterations[0]
        assert len(it.selected_ids()) == 20
        # replaying the recorded selection through evaluate_selection
        # must reproduce the recorded correlations exactly
        labeled = manifest.partition_ids("labeled")
        pool = manifest.partition_ids("unlabeled")
        head = fit_standin_head(labeled, store, mos, config.ridge)
        f_pool = head.predict(store, pool)
        replay = evaluate_selection(it.selected_ids(), f_pool, mos)
        assert replay.srcc_selected == it.srcc_selected
        assert replay.srcc_rest == it.srcc_rest

    def test_selected_sets_disjoint(self):
        manifest, store, mos = loop_corpus(seed=4, n_unlabeled=200, n_holdout=60)
        config = LoopConfig(iterations=3, budget=25, selector="worthiness",
                            ridge=50.0, seed=4, failnet=light_failnet_config())
        report = run_loop(manifest, store, mos, config)
        all_selected = [i for it in report.iterations for i in it.selected_ids()]
        assert len(all_selected) == len(set(all_selected)) == 75

    def test_no_pre_reveal_reads(self):
        manifest, store, mos = loop_corpus(seed=5, n_unlabeled=120, n_holdout=50)
        config = LoopConfig(iterations=2, budget=15, selector="random",
                            ridge=50.0, seed=5, failnet=light_failnet_config())
        report = run_loop(manifest, store, mos, config)
        assert report.pre_reveal_reads == []
        reveals = [i for kind, i in report.oracle_log if kind == "reveal"]
        assert len(set(reveals)) == 30

    def test_iteration_count(self):
        manifest, store, mos = loop_corpus(seed=6, n_unlabeled=100, n_holdout=40)
        config = LoopConfig(iterations=2, budget=10, selector="coreset",
                            ridge=50.0, seed=6, failnet=light_failnet_config())
        assert len(run_loop(manifest, store, mos, config).iterations) == 2

    def test_budget_exhaustion_names_iteration(self):
        manifest, store, mos = loop_corpus(seed=7, n_unlabeled=50, n_holdout=40)
        config = LoopConfig(iterations=3, budget=20, selector="random",
                            ridge=50.0, seed=7, failnet=light_failnet_config())
        with pytest.raises(BudgetExceedsPool, match="iteration 3"):
            run_loop(manifest, store, mos, config)

    def test_deterministic_report_json(self):
        manifest, store, mos = loop_corpus(seed=8, n_unlabeled=100, n_holdout=40)
        config = LoopConfig(iterations=2, budget=10, selector="worthiness",
                            ridge=50.0, seed=8, failnet=light_failnet_config())
        a = run_loop(manifest, store, mos, config).to_json()
        b = run_loop(manifest, store, mos, config).to_json()
        assert a == b
        parsed = json.loads(a)
        assert parsed["selector"] == "worthiness"
        assert len(parsed["iterations"]) == 2
