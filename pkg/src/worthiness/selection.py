"""Sampling-worthiness selection and the baseline selectors.

The worthiness objective scores a candidate by its predicted difficulty plus
a weighted mean squared logit distance to the already-selected set, solved
greedily one image per step. Baselines cover random sampling, ensemble
variance, predictive-uncertainty, k-center (core-set), and a
representativeness-diversity scheme built on seeded k-means.
"""

import csv
import io
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BudgetExceedsPool,
    DimensionError,
    EmptySelectionPool,
    InvalidValue,
    RaggedEnsemble,
    SchemaError,
    UnknownImage,
)
from .failnet import FailureNet, difficulty_scores
from .ingest import EnsembleTable, FeatureStore, MosTable, ScoreTable, _format_float, _reader
from .metrics import squared_error_table, srcc


@dataclass(frozen=True)
class SelectionConfig:
    budget: int
    diversity_weight: float = 1e-6  # the difficulty/diversity trade-off
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise InvalidValue("budget must be >= 1")
        if self.diversity_weight < 0:
            raise InvalidValue("diversity_weight must be nonnegative")


@dataclass(frozen=True)
class SelectionStep:
    image_id: str
    difficulty: float
    diversity_gain: float
    objective: float


@dataclass
class SelectionResult:
    selector: str
    steps: list[SelectionStep] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [s.image_id for s in self.steps]


@dataclass(frozen=True)
class EvaluationReport:
    srcc_selected: float
    srcc_rest: float
    selected_size: int
    pool_size: int


def _checked_pool(pool: Sequence[str], budget: int) -> list[str]:
    ids = sorted(set(pool))
    if len(ids) != len(list(pool)):
        raise InvalidValue("pool contains duplicate ids")
    if not ids:
        raise EmptySelectionPool("selection pool is empty")
    if budget > len(ids):
        raise BudgetExceedsPool(f"budget {budget} exceeds pool of {len(ids)}")
    return ids


def diversity_of_set(ids: Sequence[str], features: FeatureStore) -> float:
    """Mean squared logit distance over all ordered pairs, self-pairs included."""
    ids = list(ids)
    if not ids:
        raise EmptySelectionPool("diversity of an empty set is undefined")
    logits = features.logit_matrix(ids)
    n = len(ids)
    sq = (logits**2).sum(axis=1)
    total = 2.0 * n * sq.sum() - 2.0 * float(logits.sum(axis=0) @ logits.sum(axis=0))
    return float(total) / (n * n)


def greedy_diversity_select(
    pool: Sequence[str],
    difficulty: Mapping[str, float],
    features: FeatureStore | None,
    budget: int,
    diversity_weight: float,
    selector: str,
) -> SelectionResult:
    """One image per step: argmax difficulty + weight/(k-1) * sum of squared
    logit distances to the selected set. Ties break to the smallest id."""
    ids = _checked_pool(pool, budget)
    g = np.array([float(difficulty[i]) for i in ids])
    use_diversity = diversity_weight > 0.0
    if use_diversity:
        if features is None:
            raise InvalidValue("diversity-weighted selection needs a feature store")
        logits = features.logit_matrix(ids)
    taken = np.zeros(len(ids), dtype=bool)
    dist_sum = np.zeros(len(ids))
    result = SelectionResult(selector)
    for k in range(1, budget + 1):
        bonus = diversity_weight * dist_sum / (k - 1) if k > 1 and use_diversity else np.zeros_like(g)
        objective = np.where(taken, -np.inf, g + bonus)
        pick = int(np.argmax(objective))  # first occurrence: smallest id wins ties
        taken[pick] = True
        result.steps.append(SelectionStep(
            image_id=ids[pick],
            difficulty=float(g[pick]),
            diversity_gain=float(bonus[pick]),
            objective=float(objective[pick]),
        ))
        if use_diversity and k < budget:
            dist_sum += ((logits - logits[pick]) ** 2).sum(axis=1)
    return result


def greedy_worthiness_select(
    pool: Sequence[str],
    net: FailureNet,
    features: FeatureStore,
    config: SelectionConfig,
) -> SelectionResult:
    """Difficulty from the failure predictor, diversity from the logits."""
    ids = _checked_pool(pool, config.budget)
    g = difficulty_scores(net, features, ids)
    return greedy_diversity_select(ids, g, features, config.budget,
                                   config.diversity_weight, "worthiness")


def random_select(pool: Sequence[str], config: SelectionConfig) -> SelectionResult:
    """Uniform sample without replacement, deterministic given the seed."""
    ids = _checked_pool(pool, config.budget)
    rng = np.random.default_rng(config.seed)
    chosen = rng.choice(len(ids), size=config.budget, replace=False)
    return SelectionResult("random", [
        SelectionStep(ids[int(j)], 0.0, 0.0, 0.0) for j in chosen
    ])


def ensemble_variances(ensemble: EnsembleTable, pool: Sequence[str] | None = None) -> dict[str, float]:
    """Population variance of each image's member scores; counts must agree."""
    ids = sorted(pool) if pool is not None else ensemble.images()
    counts = ensemble.member_counts()
    sizes = {counts.get(i, 0) for i in ids}
    if len(sizes) != 1:
        raise RaggedEnsemble(f"unequal member counts across images: {sorted(sizes)}")
    count = sizes.pop()
    if count < 2:
        raise RaggedEnsemble(f"need at least 2 members per image, got {count}")
    return {i: float(ensemble.members_of(i).var()) for i in ids}


def variance_select(
    ensemble: EnsembleTable,
    config: SelectionConfig,
    features: FeatureStore | None = None,
    diversity_weight: float = 0.0,
) -> SelectionResult:
    """Committee/dropout disagreement as difficulty."""
    variances = ensemble_variances(ensemble)
    return greedy_diversity_select(list(variances), variances, features,
                                   config.budget, diversity_weight, "variance")


def uncertainty_select(
    scores: ScoreTable,
    model_id: str,
    config: SelectionConfig,
    features: FeatureStore | None = None,
    diversity_weight: float = 0.0,
) -> SelectionResult:
    """The quality model's own uncertainty output as difficulty."""
    pool = sorted(scores.model_scores(model_id))
    sigma = scores.model_uncertainty(model_id)
    missing = [i for i in pool if i not in sigma]
    if missing:
        raise SchemaError(
            f"model {model_id!r} lacks uncertainty for {len(missing)} image(s), e.g. {missing[0]!r}"
        )
    return greedy_diversity_select(pool, sigma, features, config.budget,
                                   diversity_weight, "uncertainty")


def ensemble_from_dropout(
    features: FeatureStore,
    head_weights: Sequence[float],
    members: int,
    dropout_rate: float,
    seed: int,
    intercept: float = 0.0,
    pool: Sequence[str] | None = None,
) -> EnsembleTable:
    """Stochastic committee: Bernoulli(1-p) masks on the logit vector,
    survivors rescaled by 1/(1-p), scored by a fixed linear head."""
    weights = np.asarray(head_weights, dtype=np.float64)
    if weights.shape != (features.logit_width,):
        raise DimensionError(
            f"head width {weights.shape} does not match logit width {features.logit_width}"
        )
    if not 0.0 <= dropout_rate < 1.0:
        raise InvalidValue(f"dropout rate must be in [0, 1), got {dropout_rate}")
    if members < 2:
        raise InvalidValue("need at least 2 members")
    ids = sorted(pool) if pool is not None else features.ids()
    rng = np.random.default_rng(seed)
    keep = 1.0 - dropout_rate
    pad = len(str(members - 1))
    entries: dict[tuple[str, str], float] = {}
    for image_id in ids:
        logit = features.record(image_id).logit
        for m in range(members):
            mask = rng.random(logit.size) < keep
            score = float((logit * mask / keep) @ weights) + intercept
            entries[(image_id, f"m{m:0{pad}d}")] = score
    return EnsembleTable(entries)


def _representation(features: FeatureStore, ids: list[str], representation: str) -> np.ndarray:
    if representation == "logit":
        return features.logit_matrix(ids)
    if representation == "stages":
        return np.stack([features.record(i).concat_stages() for i in ids])
    raise InvalidValue(f"unknown representation {representation!r}")


def coreset_select(
    pool: Sequence[str],
    features: FeatureStore,
    config: SelectionConfig,
    representation: str = "logit",
) -> SelectionResult:
    """k-center greedy: start farthest from the pool centroid, then repeatedly
    take the point with the largest minimum distance to the selected set."""
    ids = _checked_pool(pool, config.budget)
    points = _representation(features, ids, representation)
    centroid = points.mean(axis=0)
    dist = np.linalg.norm(points - centroid, axis=1)
    taken = np.zeros(len(ids), dtype=bool)
    result = SelectionResult("coreset")
    for _ in range(config.budget):
        pick = int(np.argmax(np.where(taken, -np.inf, dist)))
        taken[pick] = True
        result.steps.append(SelectionStep(ids[pick], 0.0, float(dist[pick]), float(dist[pick])))
        dist = np.minimum(dist, np.linalg.norm(points - points[pick], axis=1))
    return result


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    p2 = (points**2).sum(axis=1)[:, None]
    c2 = (centers**2).sum(axis=1)[None, :]
    return np.maximum(p2 + c2 - 2.0 * points @ centers.T, 0.0)


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            max_iter: int = 100, tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ Lloyd iterations; returns (centers, assignments)."""
    n = points.shape[0]
    first = int(rng.integers(n))
    centers = [points[first]]
    d2 = _sq_dists(points, points[first][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total == 0.0:
            remaining = np.flatnonzero(d2 == 0.0)
            pick = int(remaining[len(centers) % remaining.size])
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers.append(points[pick])
        d2 = np.minimum(d2, _sq_dists(points, points[pick][None, :])[:, 0])
    centers = np.stack(centers)
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        assign = _sq_dists(points, centers).argmin(axis=1)
        new_centers = centers.copy()
        for c in range(k):
            members = points[assign == c]
            if members.size:
                new_centers[c] = members.mean(axis=0)
        shift = float(np.linalg.norm(new_centers - centers, axis=1).max())
        centers = new_centers
        if shift < tol:
            break
    assign = _sq_dists(points, centers).argmin(axis=1)
    return centers, assign


def rd_select(
    pool: Sequence[str],
    features: FeatureStore,
    config: SelectionConfig,
    representation: str = "logit",
) -> SelectionResult:
    """Representativeness-diversity: at step i cluster the pool into i groups,
    take the largest cluster free of earlier picks (ties: larger first, then
    smallest member id), and keep its most central image."""
    ids = _checked_pool(pool, config.budget)
    points = _representation(features, ids, representation)
    selected_idx: set[int] = set()
    result = SelectionResult("rd")
    for i in range(1, config.budget + 1):
        rng = np.random.default_rng([config.seed, i])
        centers, assign = _kmeans(points, i, rng)
        candidates = []
        for c in range(i):
            members = np.flatnonzero(assign == c)
            if members.size == 0 or any(int(m) in selected_idx for m in members):
                continue
            candidates.append((-members.size, ids[int(members.min())], c, members))
        if not candidates:
            # duplicates can collapse clusters; fall back to smallest unselected id
            free = [j for j in range(len(ids)) if j not in selected_idx]
            pick = free[0]
            result.steps.append(SelectionStep(ids[pick], 0.0, 0.0, 0.0))
            selected_idx.add(pick)
            continue
        candidates.sort()
        _, _, c, members = candidates[0]
        d2 = _sq_dists(points[members], centers[c][None, :])[:, 0]
        pick = int(members[int(np.argmin(d2))])  # first occurrence: smallest id
        result.steps.append(SelectionStep(ids[pick], 0.0, 0.0, -float(np.sqrt(d2.min()))))
        selected_idx.add(pick)
    return result


def evaluate_selection(
    selected: SelectionResult | Sequence[str],
    f_scores: Mapping[str, float],
    mos: MosTable,
) -> EvaluationReport:
    """Rank correlation of the quality model inside and outside the selection.

    The pool is every scored image; a markedly lower correlation inside the
    selected set means the selector found genuine failures.
    """
    ids = selected.ids() if isinstance(selected, SelectionResult) else list(selected)
    pool = sorted(f_scores)
    unknown = [i for i in ids if i not in f_scores]
    if unknown:
        raise UnknownImage(f"selected image {unknown[0]!r} is not in the scored pool")
    rest = sorted(set(pool) - set(ids))
    def _corr(subset):
        return srcc([float(f_scores[i]) for i in subset], [mos[i] for i in subset])
    return EvaluationReport(
        srcc_selected=_corr(ids),
        srcc_rest=_corr(rest),
        selected_size=len(ids),
        pool_size=len(pool),
    )


def top_difficult(f_scores: Mapping[str, float], mos: MosTable, n: int) -> list[str]:
    """Ids of the n largest squared prediction errors, worst first."""
    errors = squared_error_table(f_scores, mos)
    if n > len(errors):
        raise BudgetExceedsPool(f"asked for {n} of {len(errors)} images")
    ranked = sorted(errors, key=lambda i: (-errors[i], i))
    return ranked[:n]


# ---------------------------------------------------------------------------
# CSV format

SELECTION_HEADER = ["rank", "image_id", "difficulty", "diversity_gain", "objective"]


def dump_selection(result: SelectionResult) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SELECTION_HEADER)
    for rank, step in enumerate(result.steps, start=1):
        writer.writerow([
            rank, step.image_id, _format_float(step.difficulty),
            _format_float(step.diversity_gain), _format_float(step.objective),
        ])
    return out.getvalue()


def parse_selection(text: str, selector: str = "imported", where: str = "<selection>") -> SelectionResult:
    _, records = _reader(text, SELECTION_HEADER, where)
    steps = [
        SelectionStep(rec["image_id"], float(rec["difficulty"]),
                      float(rec["diversity_gain"]), float(rec["objective"]))
        for rec in sorted(records, key=lambda r: int(r["rank"]))
    ]
    return SelectionResult(selector, steps)


def load_selection(path) -> SelectionResult:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_selection(fh.read(), where=str(path))
