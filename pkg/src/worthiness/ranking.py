"""Aggregation of 2AFC win counts into a global model ranking.

Win counts are Laplace-smoothed into a positive dominance matrix whose
normalized dominant eigenvector (computed by power iteration) is the
ranking weight vector.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import InvalidValue, NoConvergence, SchemaError
from .ingest import _format_float


class ComparisonMatrix:
    """Raw win counts a_ij = times model i's preferred image beat model j's."""

    def __init__(self, model_ids: list[str], counts):
        if len(set(model_ids)) != len(model_ids) or not model_ids:
            raise InvalidValue("model ids must be nonempty and unique")
        counts = np.asarray(counts, dtype=np.int64)
        m = len(model_ids)
        if counts.shape != (m, m):
            raise InvalidValue(f"counts must be {m}x{m}, got {counts.shape}")
        if (counts < 0).any():
            raise InvalidValue("counts must be nonnegative")
        if np.diagonal(counts).any():
            raise InvalidValue("diagonal counts must be zero")
        self.model_ids = list(model_ids)
        self.counts = counts

    def __eq__(self, other):
        return (
            isinstance(other, ComparisonMatrix)
            and self.model_ids == other.model_ids
            and np.array_equal(self.counts, other.counts)
        )

    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class RankingResult:
    model_ids: list[str]
    weights: np.ndarray
    iterations: int
    residual: float

    def order(self) -> list[str]:
        """Model ids from best to worst; weight ties break by id."""
        idx = sorted(range(len(self.model_ids)),
                     key=lambda i: (-self.weights[i], self.model_ids[i]))
        return [self.model_ids[i] for i in idx]

    def rank_of(self) -> dict[str, int]:
        return {m: r + 1 for r, m in enumerate(self.order())}


def smooth_dominance(matrix: ComparisonMatrix, epsilon: float = 1.0) -> np.ndarray:
    """Dominance ratios b_ij = (a_ij + eps) / (a_ji + eps); unit diagonal."""
    if not epsilon > 0.0:
        raise InvalidValue(f"epsilon must be positive, got {epsilon}")
    a = matrix.counts.astype(np.float64)
    b = (a + epsilon) / (a.T + epsilon)
    np.fill_diagonal(b, 1.0)
    return b


def perron_rank(b: np.ndarray, tol: float = 1e-10, max_iter: int = 10000,
                model_ids: list[str] | None = None) -> RankingResult:
    """Dominant-eigenvector weights of a strictly positive matrix.

    Power iteration from the uniform vector with sum normalization; stops
    when successive iterates differ by less than tol in max norm.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise InvalidValue(f"matrix must be square, got shape {b.shape}")
    if not np.isfinite(b).all() or (b <= 0.0).any():
        raise InvalidValue("matrix entries must be strictly positive and finite")
    if not tol > 0.0:
        raise InvalidValue(f"tol must be positive, got {tol}")
    m = b.shape[0]
    if model_ids is None:
        model_ids = [f"m{i}" for i in range(m)]
    elif len(model_ids) != m:
        raise InvalidValue("model_ids length must match matrix size")

    r = np.full(m, 1.0 / m)
    for iteration in range(1, max_iter + 1):
        r_next = b @ r
        r_next /= r_next.sum()
        residual = float(np.max(np.abs(r_next - r)))
        r = r_next
        if residual < tol:
            return RankingResult(list(model_ids), r, iteration, residual)
    raise NoConvergence(
        f"power iteration did not reach tol={tol} in {max_iter} iterations "
        f"(residual {residual:.3e})",
        last_iterate=r,
        residual=residual,
    )


def rank_comparisons(matrix: ComparisonMatrix, epsilon: float = 1.0,
                     tol: float = 1e-10, max_iter: int = 10000) -> RankingResult:
    """Smooth the raw counts and extract the Perron weights."""
    b = smooth_dominance(matrix, epsilon)
    return perron_rank(b, tol=tol, max_iter=max_iter, model_ids=matrix.model_ids)


# ---------------------------------------------------------------------------
# CSV formats


def dump_matrix(matrix: ComparisonMatrix) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["model"] + matrix.model_ids)
    for i, model in enumerate(matrix.model_ids):
        writer.writerow([model] + [int(c) for c in matrix.counts[i]])
    return out.getvalue()


def parse_matrix(text: str, where: str = "<matrix>") -> ComparisonMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows or len(rows[0]) < 2:
        raise SchemaError(f"{where}: expected a header row 'model,<id>,...'")
    model_ids = [c.strip() for c in rows[0][1:]]
    if len(rows) - 1 != len(model_ids):
        raise SchemaError(f"{where}: {len(model_ids)} columns but {len(rows) - 1} data rows")
    counts = np.zeros((len(model_ids), len(model_ids)), dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        if row[0].strip() != model_ids[i]:
            raise SchemaError(
                f"{where}: row {i + 2} is {row[0]!r}, expected {model_ids[i]!r} (row/column order must match)"
            )
        if len(row) != len(model_ids) + 1:
            raise SchemaError(f"{where}: row {i + 2} has {len(row)} fields")
        for j, cell in enumerate(row[1:]):
            try:
                counts[i, j] = int(cell)
            except ValueError:
                raise InvalidValue(f"{where}: row {i + 2}: count {cell!r} is not an integer") from None
    return ComparisonMatrix(model_ids, counts)


def load_matrix(path) -> ComparisonMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_matrix(fh.read(), where=str(path))


def dump_ranking(result: RankingResult) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["model_id", "weight", "rank"])
    ranks = result.rank_of()
    weight = dict(zip(result.model_ids, result.weights))
    for model in result.order():
        writer.writerow([model, _format_float(weight[model]), ranks[model]])
    return out.getvalue()
