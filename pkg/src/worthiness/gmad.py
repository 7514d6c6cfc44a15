"""Group maximum-differentiation pair selection between fixed models.

For each ordered (attacker, defender) model pair the defender's score range
is split into Q quantile bins; within each bin the attacker picks the pair
it believes differs most. Images are consumed globally across the whole
round robin, so no image appears in two pairs.
"""

import csv
import io
import statistics
from collections.abc import Mapping
from dataclasses import dataclass

from .errors import InsufficientLevelSet, InvalidValue, UnknownImage
from .ingest import ScoreTable, _format_float, _reader


@dataclass(frozen=True)
class GmadConfig:
    quality_levels: int = 5
    pairs_per_level: int = 2

    def __post_init__(self):
        if self.quality_levels < 1 or self.pairs_per_level < 1:
            raise InvalidValue("quality_levels and pairs_per_level must be >= 1")


@dataclass(frozen=True)
class GmadPair:
    attacker_model: str
    defender_model: str
    level_index: int
    x: str  # attacker-preferred image
    y: str
    attacker_gap: float
    defender_level_value: float


def build_level_sets(defender_scores: Mapping[str, float], quality_levels: int) -> list[list[str]]:
    """Split images into Q contiguous quantile bins of the defender score.

    Bins are ordered low to high, sizes differ by at most one (earlier bins
    take the extras), and every bin must be able to host a pair.
    """
    if quality_levels < 1:
        raise InvalidValue("quality_levels must be >= 1")
    ranked = sorted(defender_scores, key=lambda i: (defender_scores[i], i))
    n = len(ranked)
    base, extra = divmod(n, quality_levels)
    bins: list[list[str]] = []
    start = 0
    for level in range(quality_levels):
        size = base + (1 if level < extra else 0)
        bins.append(ranked[start : start + size])
        start += size
    for level, bin_ids in enumerate(bins):
        if len(bin_ids) < 2:
            raise InsufficientLevelSet(
                f"level {level} holds {len(bin_ids)} image(s); need at least 2 "
                f"({n} images across {quality_levels} levels)"
            )
    return bins


def level_value(defender_scores: Mapping[str, float], bin_ids: list[str]) -> float:
    """The bin's representative quality level: median defender score."""
    return float(statistics.median(defender_scores[i] for i in bin_ids))


def select_pair(
    attacker_scores: Mapping[str, float],
    bin_ids: list[str],
    excluded: set[str],
) -> tuple[str, str] | None:
    """Best-discriminating (x, y) in the bin, or None if fewer than 2 remain.

    x maximizes and y minimizes the attacker score; exact ties resolve to the
    lexicographically smallest pair, matching a brute force over ordered pairs.
    """
    available = [i for i in bin_ids if i not in excluded]
    if len(available) < 2:
        return None
    x = min(available, key=lambda i: (-attacker_scores[i], i))
    y = min((i for i in available if i != x), key=lambda i: (attacker_scores[i], i))
    return x, y


def run_round_robin(scores: ScoreTable, config: GmadConfig) -> list[GmadPair]:
    """Full competition: every ordered model pair, every level, K pairs each.

    Selection order is deterministic: model pairs sorted by id, levels
    ascending, k ascending. The exclusion set accumulates globally, so a
    complete run uses 2 * len(result) distinct images.
    """
    models = scores.models()
    if len(models) < 2:
        raise InvalidValue("round robin needs at least 2 models")
    images = scores.images()
    for model in models:
        for image in images:
            if (image, model) not in scores.entries:
                raise UnknownImage(f"model {model!r} has no score for image {image!r}")
    per_model = {m: scores.model_scores(m) for m in models}
    level_sets = {m: build_level_sets(per_model[m], config.quality_levels) for m in models}
    alphas = {
        m: [level_value(per_model[m], b) for b in level_sets[m]] for m in models
    }

    used: set[str] = set()
    pairs: list[GmadPair] = []
    for attacker in models:
        for defender in models:
            if defender == attacker:
                continue
            for level in range(config.quality_levels):
                bin_ids = level_sets[defender][level]
                for _ in range(config.pairs_per_level):
                    picked = select_pair(per_model[attacker], bin_ids, used)
                    if picked is None:
                        break
                    x, y = picked
                    used.update((x, y))
                    pairs.append(GmadPair(
                        attacker_model=attacker,
                        defender_model=defender,
                        level_index=level,
                        x=x,
                        y=y,
                        attacker_gap=per_model[attacker][x] - per_model[attacker][y],
                        defender_level_value=alphas[defender][level],
                    ))
    return pairs


PAIRS_HEADER = ["attacker", "defender", "level", "x", "y", "attacker_gap", "alpha"]


def dump_pairs(pairs: list[GmadPair]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PAIRS_HEADER)
    for p in pairs:
        writer.writerow([
            p.attacker_model, p.defender_model, p.level_index, p.x, p.y,
            _format_float(p.attacker_gap), _format_float(p.defender_level_value),
        ])
    return out.getvalue()


def parse_pairs(text: str, where: str = "<pairs>") -> list[GmadPair]:
    _, records = _reader(text, PAIRS_HEADER, where)
    pairs = []
    for rec in records:
        pairs.append(GmadPair(
            attacker_model=rec["attacker"],
            defender_model=rec["defender"],
            level_index=int(rec["level"]),
            x=rec["x"],
            y=rec["y"],
            attacker_gap=float(rec["attacker_gap"]),
            defender_level_value=float(rec["alpha"]),
        ))
    return pairs


def load_pairs(path) -> list[GmadPair]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_pairs(fh.read(), where=str(path))
