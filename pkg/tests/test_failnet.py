"""Failure predictor: init, forward, labels, gradients, and training."""

import hashlib

import numpy as np
import pytest

from worthiness.errors import DimensionError, EmptyTrainingSet, InvalidValue, UnknownImage
from worthiness.failnet import (
    FailureNet,
    FailureNetConfig,
    batch_loss_and_grads,
    difficulty_scores,
    dump_checkpoint,
    dump_loss_history,
    forward,
    forward_batch,
    init_network,
    make_pair_label,
    pair_probability,
    parse_checkpoint,
    train,
)
from worthiness.ingest import FeatureRecord, FeatureStore, MosTable
from worthiness.metrics import std_normal_cdf


def tiny_config(**kw):
    defaults = dict(stage_widths=(3, 4, 5, 6), projection_width=4, seed=17)
    defaults.update(kw)
    return FailureNetConfig(**defaults)


def record_for(image_id, widths, rng):
    return FeatureRecord(image_id, [rng.normal(size=w) for w in widths],
                         rng.normal(size=3))


def linear_difficulty_corpus(n=120, widths=(3, 4, 5, 6), seed=5):
    """Corpus whose absolute error is a noiseless linear function of stage 0."""
    rng = np.random.default_rng(seed)
    store = FeatureStore(list(widths), 3)
    mos_entries, f_scores = {}, {}
    direction = rng.normal(size=widths[0])
    for k in range(n):
        image_id = f"img{k:04d}"
        record = record_for(image_id, widths, rng)
        store.add(record)
        mos_entries[image_id] = float(rng.normal())
        err = abs(float(record.stages[0] @ direction))
        f_scores[image_id] = mos_entries[image_id] + err * float(rng.choice([-1.0, 1.0]))
    return store, f_scores, MosTable(mos_entries)


class TestInit:
    def test_parameter_count_default(self):
        net = init_network(FailureNetConfig(seed=0))
        # (64+128+256+512)*128 + 4*128 + 512 + 1
        assert net.parameter_count() == 123905

    def test_deterministic(self):
        a = init_network(tiny_config())
        b = init_network(tiny_config())
        assert a == b

    def test_he_variance_of_output_layer(self):
        net = init_network(FailureNetConfig(seed=3))
        observed = net.output_weights.var()
        assert observed == pytest.approx(2.0 / 512.0, rel=0.2)

    def test_biases_zero(self):
        net = init_network(tiny_config())
        assert all(not b.any() for b in net.stage_biases)
        assert net.output_bias == 0.0


class TestForward:
    def test_zero_parameters_give_zero(self):
        config = tiny_config()
        net = init_network(config)
        for w in net.stage_weights:
            w[:] = 0.0
        net.output_weights[:] = 0.0
        rng = np.random.default_rng(0)
        record = record_for("a", config.stage_widths, rng)
        assert forward(net, record) == 0.0

    def test_hand_computed_value(self):
        # 1-wide stages, C=1: ReLU([2,-3,1,4]) dot [1,1,1,1] = 7
        net = FailureNet(
            [np.ones((1, 1))] * 4, [np.zeros(1)] * 4, np.ones(4), 0.0
        )
        record = FeatureRecord("a", [[2.0], [-3.0], [1.0], [4.0]], [0.0])
        assert forward(net, record) == 7.0

    def test_output_layer_linearity(self):
        config = tiny_config()
        net = init_network(config)
        rng = np.random.default_rng(1)
        record = record_for("a", config.stage_widths, rng)
        base = forward(net, record)
        net.output_weights *= 2.0
        net.output_bias *= 2.0
        assert forward(net, record) == pytest.approx(2.0 * base, rel=1e-12)

    def test_width_mismatch(self):
        net = init_network(tiny_config())
        record = FeatureRecord("a", [[1.0, 2.0]] * 4, [0.0])
        with pytest.raises(DimensionError):
            forward(net, record)

    def test_batch_matches_single(self):
        config = tiny_config()
        net = init_network(config)
        rng = np.random.default_rng(2)
        records = [record_for(f"i{k}", config.stage_widths, rng) for k in range(6)]
        mats = [np.stack([r.stages[s] for r in records]) for s in range(4)]
        batch = forward_batch(net, mats)
        singles = [forward(net, r) for r in records]
        assert np.allclose(batch, singles, atol=0)


class TestPairProbability:
    def test_equal_scores_half(self):
        net = FailureNet([np.zeros((1, 1))] * 4, [np.zeros(1)] * 4, np.zeros(4), 0.0)
        r = FeatureRecord("a", [[1.0]] * 4, [0.0])
        s = FeatureRecord("b", [[2.0]] * 4, [0.0])
        assert pair_probability(net, r, s) == 0.5

    def test_sqrt2_gap_gives_phi_one(self):
        # g(x)-g(y) = sqrt(2) reduces to Phi(1)
        net = FailureNet([np.ones((1, 1))] * 4, [np.zeros(1)] * 4,
                         np.array([1.0, 0, 0, 0]), 0.0)
        x = FeatureRecord("a", [[np.sqrt(2.0)], [0.0], [0.0], [0.0]], [0.0])
        y = FeatureRecord("b", [[0.0]] * 4, [0.0])
        assert pair_probability(net, x, y) == pytest.approx(std_normal_cdf(1.0), abs=1e-15)

    def test_complement(self):
        config = tiny_config()
        net = init_network(config)
        rng = np.random.default_rng(4)
        x = record_for("a", config.stage_widths, rng)
        y = record_for("b", config.stage_widths, rng)
        assert pair_probability(net, x, y) + pair_probability(net, y, x) == pytest.approx(1.0, abs=1e-12)


class TestPairLabel:
    def test_ge_branch(self):
        mos = MosTable({"x": 0.0, "y": 0.0})
        assert make_pair_label({"x": 2.0, "y": 1.0}, mos, "x", "y").p_f == 1

    def test_else_branch(self):
        mos = MosTable({"x": 0.0, "y": 0.0})
        assert make_pair_label({"x": 1.0, "y": 2.0}, mos, "x", "y").p_f == 0

    def test_equality_is_one(self):
        mos = MosTable({"x": 0.0, "y": 0.0})
        assert make_pair_label({"x": 1.0, "y": -1.0}, mos, "x", "y").p_f == 1

    def test_missing_entry(self):
        mos = MosTable({"x": 0.0})
        with pytest.raises(UnknownImage):
            make_pair_label({"x": 1.0, "y": 1.0}, mos, "x", "y")

    def test_same_image_rejected(self):
        mos = MosTable({"x": 0.0})
        with pytest.raises(InvalidValue):
            make_pair_label({"x": 1.0}, mos, "x", "x")


def finite_difference_grads(net, stage_mats, bx, by, labels, h=1e-6):
    """Central finite differences of the mean batch loss over every parameter."""

    def loss_only():
        return batch_loss_and_grads(net, stage_mats, bx, by, labels)[0]

    grads = []
    for tensor in net.parameters():
        grad = np.zeros_like(tensor)
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            original = tensor[idx]
            tensor[idx] = original + h
            up = loss_only()
            tensor[idx] = original - h
            down = loss_only()
            tensor[idx] = original
            grad[idx] = (up - down) / (2 * h)
            it.iternext()
        grads.append(grad)
    # output bias
    original = net.output_bias
    net.output_bias = original + h
    up = loss_only()
    net.output_bias = original - h
    down = loss_only()
    net.output_bias = original
    grads.append(np.array((up - down) / (2 * h)))
    return grads


def max_relative_error(analytic, numeric):
    # the 1e-6 floor keeps central-difference roundoff (~1e-10 absolute)
    # from registering as relative error on structurally-zero gradients
    worst = 0.0
    for a, f in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        f = np.asarray(f, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


class TestGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(99)
        widths = (3, 4, 5, 6)
        for trial in range(20):
            config = tiny_config(seed=1000 + trial)
            net = init_network(config)
            n = 10
            stage_mats = [rng.normal(size=(n, w)) for w in widths]
            bx = rng.integers(0, n, size=8)
            by = (bx + rng.integers(1, n, size=8)) % n
            labels = rng.integers(0, 2, size=8).astype(float)
            _, gw, gb, go, gob = batch_loss_and_grads(net, stage_mats, bx, by, labels)
            numeric = finite_difference_grads(net, stage_mats, bx, by, labels)
            analytic = gw + gb + [go, np.asarray(gob)]
            assert max_relative_error(analytic, numeric) <= 1e-4


class TestTrain:
    def test_learns_linear_difficulty(self):
        store, f_scores, mos = linear_difficulty_corpus()
        config = tiny_config(epochs=15, pairs_per_epoch=3000, learning_rate=3e-3,
                             projection_width=8, holdout_pairs=1500)
        net = init_network(config)
        trained, report = train(net, store, f_scores, mos, config)
        assert report.holdout_accuracy >= 0.95
        assert all(0.0 <= loss <= 1.0 for loss in report.epoch_losses)
        assert report.epoch_losses[-1] < report.epoch_losses[0]

    def test_deterministic(self):
        store, f_scores, mos = linear_difficulty_corpus(n=40)
        config = tiny_config(epochs=2, pairs_per_epoch=200)
        a, _ = train(init_network(config), store, f_scores, mos, config)
        b, _ = train(init_network(config), store, f_scores, mos, config)
        assert a == b

    def test_scores_read_only(self):
        store, f_scores, mos = linear_difficulty_corpus(n=30)
        config = tiny_config(epochs=1, pairs_per_epoch=100)
        digest = hashlib.sha256(repr(sorted(f_scores.items())).encode()).hexdigest()
        train(init_network(config), store, f_scores, mos, config)
        assert hashlib.sha256(repr(sorted(f_scores.items())).encode()).hexdigest() == digest

    def test_empty_pool(self):
        store, f_scores, mos = linear_difficulty_corpus(n=10)
        config = tiny_config()
        with pytest.raises(EmptyTrainingSet):
            train(init_network(config), store, f_scores, mos, config, pool=[])

    def test_selection_invariant_to_constant_shift(self):
        # ranking decisions depend only on g differences
        store, f_scores, mos = linear_difficulty_corpus(n=25)
        config = tiny_config(epochs=1, pairs_per_epoch=50)
        net, _ = train(init_network(config), store, f_scores, mos, config)
        ids = store.ids()
        g = difficulty_scores(net, store, ids)
        shifted = {i: v + 123.456 for i, v in g.items()}
        order_a = sorted(ids, key=lambda i: (-g[i], i))
        order_b = sorted(ids, key=lambda i: (-shifted[i], i))
        assert order_a == order_b


class TestCheckpoint:
    def test_round_trip(self):
        config = tiny_config()
        net = init_network(config)
        again, config2, epoch = parse_checkpoint(dump_checkpoint(net, config, epoch=7))
        assert again == net
        assert config2 == config
        assert epoch == 7

    def test_loss_history_format(self):
        from worthiness.failnet import TrainReport

        report = TrainReport(epoch_losses=[0.5, 0.25])
        text = dump_loss_history(report)
        assert text.splitlines()[0] == "epoch,mean_loss"
        assert text.splitlines()[1] == "1,0.5"
