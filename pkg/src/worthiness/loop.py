"""Desk-scale closed loop: select, label, and refresh a stand-in quality model.

Each iteration trains the failure predictor against the current stand-in
scores on the labeled pool, selects a budgeted subset of the unlabeled pool,
reveals the subset's oracle MOS (the simulated subjective study), and refits
the stand-in head on everything labeled so far. Oracle MOS of unlabeled
images is unreadable until its reveal step; evaluation-only peeks are logged
separately so the gate can be audited.
"""

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BudgetExceedsPool,
    EmptyTrainingSet,
    InvalidValue,
    UnknownImage,
)
from .failnet import FailureNetConfig, init_network, train
from .ingest import CorpusManifest, FeatureStore, MosTable
from .metrics import srcc
from .selection import (
    SelectionConfig,
    SelectionResult,
    coreset_select,
    evaluate_selection,
    greedy_worthiness_select,
    random_select,
    rd_select,
)

LOOP_SELECTORS = ("worthiness", "random", "coreset", "rd")


@dataclass(frozen=True)
class LoopConfig:
    iterations: int
    budget: int
    selector: str = "worthiness"
    diversity_weight: float = 0.0
    ridge: float = 1e-2
    seed: int = 0
    failnet: FailureNetConfig = field(default_factory=FailureNetConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidValue("iterations must be >= 1")
        if self.budget < 1:
            raise InvalidValue("budget must be >= 1")
        if self.selector not in LOOP_SELECTORS:
            raise InvalidValue(f"selector must be one of {LOOP_SELECTORS}")
        if self.ridge < 0:
            raise InvalidValue("ridge must be nonnegative")


class OracleMos:
    """Reveal-gated view of the oracle MOS table.

    Algorithmic reads go through get()/visible_table() and fail on images
    whose MOS has not been revealed. peek_for_evaluation() bypasses the gate
    for report instrumentation only; every access lands in the log as
    (kind, image_id) so an audit can prove the training path never saw an
    unrevealed value.
    """

    def __init__(self, table: MosTable, initially_visible: Iterable[str] = ()):
        self._table = table
        self._visible: set[str] = set()
        self.log: list[tuple[str, str]] = []
        for image_id in initially_visible:
            if image_id not in table:
                raise UnknownImage(f"oracle MOS missing for {image_id!r}")
            self._visible.add(image_id)

    def reveal(self, ids: Iterable[str]) -> dict[str, float]:
        out = {}
        for image_id in ids:
            if image_id not in self._table:
                raise UnknownImage(f"oracle MOS missing for {image_id!r}")
            self.log.append(("reveal", image_id))
            self._visible.add(image_id)
            out[image_id] = self._table[image_id]
        return out

    def get(self, image_id: str) -> float:
        self.log.append(("read", image_id))
        if image_id not in self._visible:
            raise UnknownImage(f"MOS for {image_id!r} has not been revealed")
        return self._table[image_id]

    def visible_table(self) -> MosTable:
        for image_id in sorted(self._visible):
            self.log.append(("read", image_id))
        return MosTable({i: self._table[i] for i in sorted(self._visible)})

    def peek_for_evaluation(self, ids: Iterable[str]) -> MosTable:
        ids = list(ids)
        for image_id in ids:
            self.log.append(("evaluation", image_id))
        return MosTable({i: self._table[i] for i in ids})

    def pre_reveal_reads(self) -> list[str]:
        """Gated reads that happened before the image was revealed."""
        visible: set[str] = set()
        offenders = []
        for kind, image_id in self.log:
            if kind == "reveal":
                visible.add(image_id)
            elif kind == "read" and image_id not in visible and image_id not in self._initial():
                offenders.append(image_id)
        return offenders

    def _initial(self) -> set[str]:
        revealed = {i for kind, i in self.log if kind == "reveal"}
        return self._visible - revealed


@dataclass(frozen=True)
class StandinHead:
    """Ridge-regularized linear quality model over concatenated stage features."""

    weights: np.ndarray
    intercept: float

    def predict(self, features: FeatureStore, ids: Sequence[str]) -> dict[str, float]:
        if not ids:
            return {}
        x = np.stack([features.record(i).concat_stages() for i in ids])
        values = x @ self.weights + self.intercept
        return dict(zip(ids, values.tolist()))


def fit_standin_head(
    labeled_ids: Sequence[str],
    features: FeatureStore,
    mos: MosTable,
    ridge: float = 1e-2,
) -> StandinHead:
    """Least squares with an unpenalized intercept; deterministic."""
    ids = sorted(labeled_ids)
    if len(ids) < 2:
        raise EmptyTrainingSet(f"need at least 2 labeled images, got {len(ids)}")
    x = np.stack([features.record(i).concat_stages() for i in ids])
    y = np.array([mos[i] for i in ids])
    x_mean = x.mean(axis=0)
    y_mean = float(y.mean())
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc + ridge * np.eye(x.shape[1])
    weights = np.linalg.solve(gram, xc.T @ yc)
    return StandinHead(weights, y_mean - float(x_mean @ weights))


@dataclass
class LoopIteration:
    index: int
    selection: SelectionResult
    srcc_selected: float
    srcc_rest: float
    holdout_srcc: float
    failnet_loss: float

    def selected_ids(self) -> list[str]:
        return self.selection.ids()


@dataclass
class LoopReport:
    selector: str
    seed: int
    iterations: list[LoopIteration] = field(default_factory=list)
    # audit trail of oracle accesses; deliberately not serialized
    oracle_log: list[tuple[str, str]] = field(default_factory=list, repr=False)
    pre_reveal_reads: list[str] = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        payload = {
            "selector": self.selector,
            "seed": self.seed,
            "iterations": [
                {
                    "index": it.index,
                    "selected": it.selected_ids(),
                    "srcc_selected": it.srcc_selected,
                    "srcc_rest": it.srcc_rest,
                    "holdout_srcc": it.holdout_srcc,
                    "failnet_loss": it.failnet_loss,
                }
                for it in self.iterations
            ],
        }
        return json.dumps(payload, indent=2) + "\n"


def _iteration_seed(seed: int, t: int) -> int:
    return seed * 1009 + t


def _select(selector, pool, net, features, config, t) -> SelectionResult:
    sel_config = SelectionConfig(
        budget=config.budget,
        diversity_weight=config.diversity_weight,
        seed=_iteration_seed(config.seed, t),
    )
    if selector == "worthiness":
        return greedy_worthiness_select(pool, net, features, sel_config)
    if selector == "random":
        return random_select(pool, sel_config)
    if selector == "coreset":
        return coreset_select(pool, features, sel_config)
    if selector == "rd":
        return rd_select(pool, features, sel_config)
    raise InvalidValue(f"unknown selector {selector!r}")


def run_loop(
    manifest: CorpusManifest,
    features: FeatureStore,
    oracle_mos: MosTable,
    config: LoopConfig,
) -> LoopReport:
    """Iterated select / label / refit over the manifest partitions."""
    labeled = manifest.partition_ids("labeled")
    unlabeled = manifest.partition_ids("unlabeled")
    holdout = manifest.partition_ids("holdout")
    if not labeled or not unlabeled:
        raise EmptyTrainingSet("the loop needs nonempty labeled and unlabeled partitions")
    for image_id in (*labeled, *unlabeled, *holdout):
        if image_id not in oracle_mos:
            raise UnknownImage(f"oracle MOS missing for {image_id!r}")
        if image_id not in features:
            raise UnknownImage(f"features missing for {image_id!r}")

    oracle = OracleMos(oracle_mos, initially_visible=[*labeled, *holdout])
    labeled_now = sorted(labeled)
    pool = sorted(unlabeled)
    report = LoopReport(config.selector, config.seed)

    head = fit_standin_head(labeled_now, features, oracle.visible_table(), config.ridge)
    for t in range(1, config.iterations + 1):
        if config.budget > len(pool):
            raise BudgetExceedsPool(
                f"iteration {t}: budget {config.budget} exceeds remaining pool of {len(pool)}"
            )
        # failure predictor learns the current head's error landscape on labeled data
        failnet_config = replace(config.failnet, seed=_iteration_seed(config.seed, t))
        f_labeled = head.predict(features, labeled_now)
        net, train_report = train(
            init_network(failnet_config), features, f_labeled,
            oracle.visible_table(), failnet_config, pool=labeled_now,
        )

        selection = _select(config.selector, pool, net, features, config, t)
        selected = selection.ids()

        # instrumentation: how broken was the pre-refit head on/off the selection
        f_pool = head.predict(features, pool)
        evaluation = evaluate_selection(selection, f_pool, oracle.peek_for_evaluation(pool))

        oracle.reveal(selected)
        labeled_now = sorted(set(labeled_now) | set(selected))
        pool = [i for i in pool if i not in set(selected)]

        head = fit_standin_head(labeled_now, features, oracle.visible_table(), config.ridge)
        f_holdout = head.predict(features, holdout)
        holdout_srcc = srcc(
            [f_holdout[i] for i in holdout], [oracle.get(i) for i in holdout]
        ) if len(holdout) >= 2 else float("nan")

        report.iterations.append(LoopIteration(
            index=t,
            selection=selection,
            srcc_selected=evaluation.srcc_selected,
            srcc_rest=evaluation.srcc_rest,
            holdout_srcc=holdout_srcc,
            failnet_loss=train_report.epoch_losses[-1],
        ))
    report.oracle_log = list(oracle.log)
    report.pre_reveal_reads = oracle.pre_reveal_reads()
    assert not report.pre_reveal_reads  # gate audit: training path never peeked
    return report
