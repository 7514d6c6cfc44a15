"""Failure predictor: a five-layer fully connected network over staged features.

Each pooled stage vector passes through its own projection layer with ReLU;
the concatenated projections feed one output layer producing a difficulty
scalar g(x). Training ranks prediction errors of a fixed quality model with
the fidelity loss; the quality model itself is never touched.

All arithmetic is 64-bit and every random draw comes from the config seed,
so identical inputs yield bit-identical parameters.
"""

import json
import math
import time
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    EmptyTrainingSet,
    InvalidValue,
    UnknownImage,
)
from .ingest import FeatureRecord, FeatureStore, MosTable
from .metrics import SQRT2, comparison_probability

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_P_CLIP = 1e-15


@dataclass(frozen=True)
class FailureNetConfig:
    stage_widths: tuple[int, ...] = (64, 128, 256, 512)
    projection_width: int = 128
    seed: int = 0
    learning_rate: float = 1e-4
    decay_factor: float = 10.0
    decay_every_epochs: int = 5
    epochs: int = 15
    batch_size: int = 32
    pairs_per_epoch: int = 20000
    holdout_pairs: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        if any(w <= 0 for w in self.stage_widths) or self.projection_width <= 0:
            raise InvalidValue("widths must be positive")
        if self.learning_rate <= 0 or self.decay_factor <= 0 or self.decay_every_epochs <= 0:
            raise InvalidValue("learning schedule values must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.pairs_per_epoch < 1:
            raise InvalidValue("epochs, batch_size, pairs_per_epoch must be >= 1")


class FailureNet:
    """Parameters of the difficulty scorer g(.)."""

    def __init__(self, stage_weights, stage_biases, output_weights, output_bias):
        self.stage_weights = [np.asarray(w, dtype=np.float64) for w in stage_weights]
        self.stage_biases = [np.asarray(b, dtype=np.float64) for b in stage_biases]
        self.output_weights = np.asarray(output_weights, dtype=np.float64)
        self.output_bias = float(output_bias)
        widths = self.stage_widths
        c = self.projection_width
        for s, (w, b) in enumerate(zip(self.stage_weights, self.stage_biases)):
            if w.shape != (widths[s], c) or b.shape != (c,):
                raise DimensionError(f"stage {s}: weight/bias shapes {w.shape}/{b.shape} inconsistent")
        if self.output_weights.shape != (len(widths) * c,):
            raise DimensionError("output layer width must be n_stages * projection_width")
        tensors = self.stage_weights + self.stage_biases + [self.output_weights]
        if not all(np.isfinite(t).all() for t in tensors) or not math.isfinite(self.output_bias):
            raise InvalidValue("parameters must be finite")

    @property
    def stage_widths(self) -> list[int]:
        return [w.shape[0] for w in self.stage_weights]

    @property
    def projection_width(self) -> int:
        return self.stage_weights[0].shape[1]

    def parameter_count(self) -> int:
        return sum(w.size for w in self.stage_weights) + sum(b.size for b in self.stage_biases) \
            + self.output_weights.size + 1

    def parameters(self) -> list[np.ndarray]:
        """Mutable views in a fixed order (output bias is wrapped as 0-d array)."""
        return self.stage_weights + self.stage_biases + [self.output_weights]

    def copy(self) -> "FailureNet":
        return FailureNet(
            [w.copy() for w in self.stage_weights],
            [b.copy() for b in self.stage_biases],
            self.output_weights.copy(),
            self.output_bias,
        )

    def __eq__(self, other):
        return (
            isinstance(other, FailureNet)
            and all(np.array_equal(a, b) for a, b in zip(self.stage_weights, other.stage_weights))
            and all(np.array_equal(a, b) for a, b in zip(self.stage_biases, other.stage_biases))
            and np.array_equal(self.output_weights, other.output_weights)
            and self.output_bias == other.output_bias
        )


@dataclass(frozen=True)
class PairLabel:
    x: str
    y: str
    p_f: int  # 1 iff x is at least as hard as y

    def __post_init__(self):
        if self.x == self.y:
            raise InvalidValue("a pair needs two distinct images")
        if self.p_f not in (0, 1):
            raise InvalidValue("p_f must be 0 or 1")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    holdout_accuracy: float = float("nan")
    wall_seconds: float = 0.0


def init_network(config: FailureNetConfig) -> FailureNet:
    """He initialization: N(0, sqrt(2/fan_in)) weights, zero biases."""
    rng = np.random.default_rng(config.seed)
    c = config.projection_width
    stage_weights = [
        rng.normal(0.0, math.sqrt(2.0 / d), size=(d, c)) for d in config.stage_widths
    ]
    stage_biases = [np.zeros(c) for _ in config.stage_widths]
    fan_in = len(config.stage_widths) * c
    output_weights = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=fan_in)
    return FailureNet(stage_weights, stage_biases, output_weights, 0.0)


def _check_widths(net: FailureNet, widths: Sequence[int]) -> None:
    if list(widths) != net.stage_widths:
        raise DimensionError(f"stage widths {list(widths)} do not match net {net.stage_widths}")


def forward_batch(net: FailureNet, stage_mats: Sequence[np.ndarray]) -> np.ndarray:
    """Difficulty scores for a batch given per-stage feature matrices (n, d_s)."""
    _check_widths(net, [m.shape[1] for m in stage_mats])
    parts = [
        np.maximum(x @ w + b, 0.0)
        for x, w, b in zip(stage_mats, net.stage_weights, net.stage_biases)
    ]
    return np.concatenate(parts, axis=1) @ net.output_weights + net.output_bias


def forward(net: FailureNet, record: FeatureRecord) -> float:
    """Difficulty scalar g(x) for one image."""
    _check_widths(net, record.stage_widths)
    return float(forward_batch(net, [s[None, :] for s in record.stages])[0])


def difficulty_scores(net: FailureNet, features: FeatureStore, ids: Sequence[str]) -> dict[str, float]:
    """g(x) for each id, evaluated in one batch."""
    ids = list(ids)
    if not ids:
        return {}
    mats = [features.stage_matrix(ids, s) for s in range(len(net.stage_widths))]
    g = forward_batch(net, mats)
    return dict(zip(ids, g.tolist()))


def pair_probability(net: FailureNet, x_rec: FeatureRecord, y_rec: FeatureRecord) -> float:
    """Probability that x is harder to learn than y: Phi((g(x)-g(y))/sqrt(2))."""
    return comparison_probability(forward(net, x_rec), 1.0, forward(net, y_rec), 1.0)


def make_pair_label(
    f_scores: Mapping[str, float], mos: MosTable, x: str, y: str
) -> PairLabel:
    """Ground truth: x is labeled harder iff its absolute error is >= y's."""
    for image_id in (x, y):
        if image_id not in f_scores:
            raise UnknownImage(f"no quality score for image {image_id!r}")
        if image_id not in mos:
            raise UnknownImage(f"no MOS for image {image_id!r}")
    err_x = abs(float(f_scores[x]) - mos[x])
    err_y = abs(float(f_scores[y]) - mos[y])
    return PairLabel(x, y, 1 if err_x >= err_y else 0)


def _phi_vec(z: np.ndarray) -> np.ndarray:
    return 0.5 * np.array([math.erfc(v) for v in (-z / SQRT2)])


def _pair_index_split(idx: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map flat indices over the n*(n-1) ordered-pair universe to (i, j)."""
    i = idx // (n - 1)
    r = idx % (n - 1)
    j = np.where(r < i, r, r + 1)
    return i, j


def batch_loss_and_grads(net, stage_mats, bx, by, labels):
    """Mean fidelity loss over the batch and its gradient per parameter tensor.

    Returns (loss, stage_weight_grads, stage_bias_grads, output_weight_grad,
    output_bias_grad). Gradients follow the parameter layout of the net.
    """
    n_stages = len(net.stage_weights)
    c = net.projection_width
    xs = [m[bx] for m in stage_mats]
    ys = [m[by] for m in stage_mats]

    def _forward(side):
        zs = [x @ w + b for x, w, b in zip(side, net.stage_weights, net.stage_biases)]
        hs = [np.maximum(z, 0.0) for z in zs]
        g = np.concatenate(hs, axis=1) @ net.output_weights + net.output_bias
        return zs, hs, g

    zx, hx, gx = _forward(xs)
    zy, hy, gy = _forward(ys)

    diff = (gx - gy) / SQRT2
    p_hat = np.clip(_phi_vec(diff), _P_CLIP, 1.0 - _P_CLIP)
    labels = np.asarray(labels, dtype=np.float64)
    losses = np.where(labels == 1.0, 1.0 - np.sqrt(p_hat), 1.0 - np.sqrt(1.0 - p_hat))
    loss = float(losses.mean())

    # dl/dp_hat, then through Phi((gx-gy)/sqrt(2)); mean over the batch
    dl_dp = np.where(labels == 1.0, -0.5 / np.sqrt(p_hat), 0.5 / np.sqrt(1.0 - p_hat))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * diff * diff)
    coef = dl_dp * pdf / SQRT2 / len(labels)  # dL/dg(x); dL/dg(y) is its negation

    grad_w = [np.zeros_like(w) for w in net.stage_weights]
    grad_b = [np.zeros_like(b) for b in net.stage_biases]
    grad_out = np.zeros_like(net.output_weights)
    # b_out shifts g(x) and g(y) equally, so the pairwise loss never moves it
    grad_out_b = 0.0
    for s in range(n_stages):
        w_seg = net.output_weights[s * c : (s + 1) * c]
        for side_z, side_h, side_x, sign in ((zx, hx, xs, 1.0), (zy, hy, ys, -1.0)):
            dz = (sign * coef)[:, None] * w_seg[None, :] * (side_z[s] > 0.0)
            grad_w[s] += side_x[s].T @ dz
            grad_b[s] += dz.sum(axis=0)
            grad_out[s * c : (s + 1) * c] += (sign * coef) @ side_h[s]
    return loss, grad_w, grad_b, grad_out, grad_out_b


class _Adam:
    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(
    net: FailureNet,
    features: FeatureStore,
    f_scores: Mapping[str, float],
    mos: MosTable,
    config: FailureNetConfig,
    pool: Sequence[str] | None = None,
) -> tuple[FailureNet, TrainReport]:
    """Rank-train g(.) on prediction errors of a fixed quality model.

    Per epoch, pairs_per_epoch ordered pairs are drawn uniformly without
    replacement from the pool (reshuffled every epoch); the mean fidelity
    loss between the hard-label ranking and Phi((g(x)-g(y))/sqrt(2)) is
    minimized with Adam under a step-decay schedule. The quality scores are
    read-only throughout.
    """
    started = time.perf_counter()
    ids = sorted(f_scores) if pool is None else sorted(pool)
    if len(ids) < 2:
        raise EmptyTrainingSet(f"need at least 2 labeled images, got {len(ids)}")
    for image_id in ids:
        if image_id not in f_scores:
            raise UnknownImage(f"no quality score for image {image_id!r}")
        if image_id not in features:
            raise UnknownImage(f"no features for image {image_id!r}")
        if image_id not in mos:
            raise UnknownImage(f"no MOS for image {image_id!r}")
    _check_widths(net, features.stage_widths)

    n = len(ids)
    abs_err = np.array([abs(float(f_scores[i]) - mos[i]) for i in ids])
    stage_mats = [features.stage_matrix(ids, s) for s in range(len(net.stage_widths))]

    rng = np.random.default_rng(config.seed)
    universe = n * (n - 1)
    n_holdout = min(config.holdout_pairs, max(universe // 10, 1))
    holdout = rng.choice(universe, size=n_holdout, replace=False)
    trainable = np.setdiff1d(np.arange(universe), holdout)
    if trainable.size == 0:
        trainable = holdout  # degenerate tiny pools: reuse rather than starve

    net = net.copy()
    params = net.parameters()
    optimizer = _Adam([p.shape for p in params] + [()])
    report = TrainReport()

    for epoch in range(config.epochs):
        lr = config.learning_rate / config.decay_factor ** (epoch // config.decay_every_epochs)
        chosen = rng.permutation(trainable)[: config.pairs_per_epoch]
        bi, bj = _pair_index_split(chosen, n)
        labels = (abs_err[bi] >= abs_err[bj]).astype(np.float64)
        total, seen = 0.0, 0
        for start in range(0, chosen.size, config.batch_size):
            sl = slice(start, start + config.batch_size)
            loss, gw, gb, go, gob = batch_loss_and_grads(
                net, stage_mats, bi[sl], bj[sl], labels[sl]
            )
            batch_n = bi[sl].size
            total += loss * batch_n
            seen += batch_n
            bias_holder = np.array(net.output_bias)
            optimizer.step(params + [bias_holder], gw + gb + [go, np.asarray(gob)], lr)
            net.output_bias = float(bias_holder)
        report.epoch_losses.append(total / seen)

    hi, hj = _pair_index_split(holdout, n)
    g_all = forward_batch(net, stage_mats)
    predicted = g_all[hi] >= g_all[hj]
    actual = abs_err[hi] >= abs_err[hj]
    report.holdout_accuracy = float((predicted == actual).mean())
    report.wall_seconds = time.perf_counter() - started
    return net, report


# ---------------------------------------------------------------------------
# persistence


def dump_checkpoint(net: FailureNet, config: FailureNetConfig, epoch: int) -> str:
    payload = {
        "config": asdict(config),
        "seed": config.seed,
        "epoch": epoch,
        "parameters": {
            "stage_weights": [w.ravel().tolist() for w in net.stage_weights],
            "stage_biases": [b.tolist() for b in net.stage_biases],
            "output_weights": net.output_weights.tolist(),
            "output_bias": net.output_bias,
        },
    }
    return json.dumps(payload, indent=2) + "\n"


def parse_checkpoint(text: str) -> tuple[FailureNet, FailureNetConfig, int]:
    obj = json.loads(text)
    raw = dict(obj["config"])
    raw["stage_widths"] = tuple(raw["stage_widths"])
    config = FailureNetConfig(**raw)
    c = config.projection_width
    params = obj["parameters"]
    stage_weights = [
        np.asarray(flat, dtype=np.float64).reshape(d, c)
        for flat, d in zip(params["stage_weights"], config.stage_widths)
    ]
    net = FailureNet(stage_weights, params["stage_biases"],
                     params["output_weights"], params["output_bias"])
    return net, config, int(obj["epoch"])


def load_checkpoint(path) -> tuple[FailureNet, FailureNetConfig, int]:
    with open(path, encoding="utf-8") as fh:
        return parse_checkpoint(fh.read())


def dump_loss_history(report: TrainReport) -> str:
    lines = ["epoch,mean_loss"]
    for epoch, loss in enumerate(report.epoch_losses, start=1):
        lines.append(f"{epoch},{repr(float(loss))}")
    return "\n".join(lines) + "\n"
