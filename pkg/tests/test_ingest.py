"""Loaders, invariants, round-trips, and corpus cross-validation."""

import numpy as np
import pytest

from worthiness.errors import (
    DimensionError,
    DuplicateEntry,
    InvalidValue,
    SchemaError,
    UnknownImage,
)
from worthiness.ingest import (
    CorpusManifest,
    EnsembleTable,
    FeatureRecord,
    FeatureStore,
    ManifestImage,
    MosTable,
    ScoreTable,
    dump_ensemble,
    dump_features,
    dump_manifest,
    dump_mos,
    dump_scores,
    parse_ensemble,
    parse_features,
    parse_manifest,
    parse_mos,
    parse_scores,
    validate_corpus,
)


def manifest_for(ids, stage_widths=(2, 3), logit_width=4, partition="unlabeled"):
    return CorpusManifest(
        "test", list(stage_widths), logit_width,
        [ManifestImage(i, partition) for i in ids],
    )


class TestScores:
    def test_two_rows(self):
        table = parse_scores("image_id,model_id,score\nimgA,mX,1.5\nimgB,mX,2.5\n")
        assert len(table) == 2
        assert table.entries[("imgA", "mX")] == 1.5

    def test_duplicate_pair_names_both_lines(self):
        text = "image_id,model_id,score\nimgA,mX,1\nimgB,mX,2\nimgA,mX,3\n"
        with pytest.raises(DuplicateEntry, match="line 4.*line 2"):
            parse_scores(text)

    def test_nan_score_names_row(self):
        with pytest.raises(InvalidValue, match="line 2"):
            parse_scores("image_id,model_id,score\nimgA,mX,NaN\n")

    def test_missing_column(self):
        with pytest.raises(SchemaError, match="model_id"):
            parse_scores("image_id,score\nimgA,1\n")

    def test_uncertainty_column(self):
        table = parse_scores("image_id,model_id,score,uncertainty\na,m,1,0.5\nb,m,2,\n")
        assert table.uncertainty == {("a", "m"): 0.5}

    def test_nonpositive_uncertainty(self):
        with pytest.raises(InvalidValue):
            parse_scores("image_id,model_id,score,uncertainty\na,m,1,0\n")

    def test_order_insensitive(self):
        a = parse_scores("image_id,model_id,score\na,m,1\nb,m,2\n")
        b = parse_scores("image_id,model_id,score\nb,m,2\na,m,1\n")
        assert a == b

    def test_round_trip(self):
        table = ScoreTable(
            {("a", "m1"): 0.1 + 0.2, ("b", "m1"): -3.75, ("a", "m2"): 1e-17},
            {("a", "m1"): 0.125},
        )
        assert parse_scores(dump_scores(table)) == table

    def test_schema_rename(self):
        table = parse_scores("img,model,value\na,m,1\n",
                             schema={"image_id": "img", "model_id": "model", "score": "value"})
        assert table.entries == {("a", "m"): 1.0}


class TestMos:
    def test_three_rows(self):
        table = parse_mos("image_id,mos\na,1\nb,2\nc,3\n")
        assert len(table) == 3

    def test_duplicate(self):
        with pytest.raises(DuplicateEntry):
            parse_mos("image_id,mos\na,1\na,2\n")

    def test_header_only_is_empty(self):
        assert len(parse_mos("image_id,mos\n")) == 0

    def test_round_trip(self):
        table = MosTable({"a": 1.0 / 3.0, "b": 57.0})
        assert parse_mos(dump_mos(table)) == table


class TestFeatures:
    def test_accepts_matching_widths(self):
        manifest = manifest_for(["a"])
        store = parse_features('{"image_id":"a","stages":[[1,2],[3,4,5]],"logit":[1,2,3,4]}\n', manifest)
        assert "a" in store
        assert store.record("a").stage_widths == [2, 3]

    def test_width_mismatch_names_stage(self):
        manifest = manifest_for(["a"])
        with pytest.raises(DimensionError, match="stage 1"):
            parse_features('{"image_id":"a","stages":[[1,2],[3,4]],"logit":[1,2,3,4]}', manifest)

    def test_unknown_id(self):
        manifest = manifest_for(["a"])
        with pytest.raises(UnknownImage):
            parse_features('{"image_id":"zzz","stages":[[1,2],[3,4,5]],"logit":[1,2,3,4]}', manifest)

    def test_non_finite_rejected(self):
        manifest = manifest_for(["a"])
        with pytest.raises(InvalidValue):
            parse_features('{"image_id":"a","stages":[[1,2],[3,4,1e999]],"logit":[1,2,3,4]}', manifest)

    def test_round_trip_and_order_insensitivity(self):
        manifest = manifest_for(["a", "b"])
        lines = [
            '{"image_id":"b","stages":[[0.5,-1],[0,0,2.25]],"logit":[9,8,7,6]}',
            '{"image_id":"a","stages":[[1,2],[3,4,5]],"logit":[1,2,3,4]}',
        ]
        store = parse_features("\n".join(lines), manifest)
        assert parse_features(dump_features(store), manifest) == store
        flipped = parse_features("\n".join(reversed(lines)), manifest)
        assert flipped == store


class TestManifest:
    def test_round_trip(self):
        manifest = CorpusManifest("c", [2, 3], 4, [
            ManifestImage("b", "unlabeled"),
            ManifestImage("a", "labeled", path="imgs/a.png"),
        ])
        again = parse_manifest(dump_manifest(manifest))
        assert again == manifest
        assert again.ids() == ["a", "b"]  # canonical order

    def test_bad_partition(self):
        with pytest.raises(InvalidValue):
            manifest_for(["a"], partition="train")

    def test_duplicate_id(self):
        with pytest.raises(DuplicateEntry):
            CorpusManifest("c", [2], 2, [ManifestImage("a", "labeled")] * 2)

    def test_whitespace_id_rejected(self):
        with pytest.raises(InvalidValue):
            manifest_for(["a b"])

    def test_oversized_id_rejected(self):
        with pytest.raises(InvalidValue):
            manifest_for(["x" * 129])


class TestEnsemble:
    def test_round_trip(self):
        table = EnsembleTable({("a", "m0"): 1.0, ("a", "m1"): 2.0, ("b", "m0"): 0.0, ("b", "m1"): 4.0})
        assert parse_ensemble(dump_ensemble(table)) == table

    def test_member_counts(self):
        table = EnsembleTable({("a", "m0"): 1.0, ("a", "m1"): 2.0, ("b", "m0"): 0.0})
        assert table.member_counts() == {"a": 2, "b": 1}


class TestValidateCorpus:
    def test_consistent_corpus_empty_report(self):
        manifest = manifest_for(["a", "b"])
        scores = ScoreTable({("a", "m"): 1.0, ("b", "m"): 2.0})
        mos = MosTable({"a": 1.0, "b": 2.0})
        store = FeatureStore([2, 3], 4)
        store.add(FeatureRecord("a", [[1, 2], [3, 4, 5]], [1, 2, 3, 4]))
        store.add(FeatureRecord("b", [[1, 2], [3, 4, 5]], [1, 2, 3, 4]))
        report = validate_corpus(manifest, scores, mos, store)
        assert report.is_empty()
        # idempotent and side-effect free
        assert validate_corpus(manifest, scores, mos, store).to_dict() == report.to_dict()

    def test_missing_features_reported(self):
        manifest = manifest_for(["a", "b"])
        store = FeatureStore([2, 3], 4)
        store.add(FeatureRecord("a", [[1, 2], [3, 4, 5]], [1, 2, 3, 4]))
        report = validate_corpus(manifest, features=store)
        assert report.to_dict() == {"features.missing": ["b"]}

    def test_unequal_member_counts_flagged(self):
        manifest = manifest_for(["a", "b"])
        table = EnsembleTable({("a", "m0"): 1.0, ("a", "m1"): 2.0, ("b", "m0"): 0.0})
        report = validate_corpus(manifest, ensembles=table)
        assert "ensembles.unequal_members" in report.to_dict()

    def test_incomplete_scores_flagged(self):
        manifest = manifest_for(["a", "b"])
        scores = ScoreTable({("a", "m1"): 1.0, ("a", "m2"): 1.0, ("b", "m1"): 2.0})
        report = validate_corpus(manifest, scores)
        assert report.to_dict()["scores.incomplete"] == ["b"]


def test_feature_matrices():
    store = FeatureStore([2], 2)
    store.add(FeatureRecord("a", [[1, 2]], [5, 6]))
    store.add(FeatureRecord("b", [[3, 4]], [7, 8]))
    assert np.array_equal(store.stage_matrix(["a", "b"], 0), [[1, 2], [3, 4]])
    assert np.array_equal(store.logit_matrix(["b"]), [[7, 8]])
