"""Corpus loading, validation, and canonical serialization.

Tables travel as CSV, features as JSONL, the manifest as a JSON document.
Loaders are order-insensitive and everything round-trips through its
canonical text form.
"""

import csv
import io
import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    DuplicateEntry,
    InvalidValue,
    SchemaError,
    UnknownImage,
)

PARTITIONS = ("labeled", "unlabeled", "holdout")


def check_image_id(image_id: str) -> str:
    if not isinstance(image_id, str) or not image_id:
        raise InvalidValue(f"image id must be a nonempty string, got {image_id!r}")
    if any(c.isspace() for c in image_id):
        raise InvalidValue(f"image id must not contain whitespace: {image_id!r}")
    if len(image_id.encode("utf-8")) > 128:
        raise InvalidValue(f"image id exceeds 128 bytes: {image_id[:32]!r}...")
    return image_id


def _parse_finite(text: str, where: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise InvalidValue(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise InvalidValue(f"{where}: non-finite value {text!r}")
    return value


def _format_float(value: float) -> str:
    # repr gives the shortest string that round-trips a float64 exactly
    return repr(float(value))


class ScoreTable:
    """Per-image quality predictions of one or more models.

    entries maps (image_id, model_id) -> score; uncertainty, when present,
    is positive and keyed the same way.
    """

    def __init__(
        self,
        entries: Mapping[tuple[str, str], float],
        uncertainty: Mapping[tuple[str, str], float] | None = None,
    ):
        self.entries: dict[tuple[str, str], float] = {}
        self.uncertainty: dict[tuple[str, str], float] = {}
        for (image_id, model_id), score in entries.items():
            check_image_id(image_id)
            if not model_id:
                raise InvalidValue("model id must be nonempty")
            score = float(score)
            if not math.isfinite(score):
                raise InvalidValue(f"score for ({image_id}, {model_id}) is not finite")
            self.entries[(image_id, model_id)] = score
        for key, sigma in (uncertainty or {}).items():
            if key not in self.entries:
                raise UnknownImage(f"uncertainty for unscored pair {key!r}")
            sigma = float(sigma)
            if not (math.isfinite(sigma) and sigma > 0.0):
                raise InvalidValue(f"uncertainty for {key!r} must be > 0, got {sigma}")
            self.uncertainty[key] = sigma

    def __eq__(self, other):
        return (
            isinstance(other, ScoreTable)
            and self.entries == other.entries
            and self.uncertainty == other.uncertainty
        )

    def __len__(self) -> int:
        return len(self.entries)

    def models(self) -> list[str]:
        return sorted({m for _, m in self.entries})

    def images(self) -> list[str]:
        return sorted({i for i, _ in self.entries})

    def model_scores(self, model_id: str) -> dict[str, float]:
        """Scores of a single model keyed by image id."""
        out = {i: s for (i, m), s in self.entries.items() if m == model_id}
        if not out:
            from .errors import UnknownModel

            raise UnknownModel(f"no scores for model {model_id!r}")
        return out

    def model_uncertainty(self, model_id: str) -> dict[str, float]:
        return {i: u for (i, m), u in self.uncertainty.items() if m == model_id}


class MosTable:
    """Mean opinion scores keyed by image id."""

    def __init__(self, entries: Mapping[str, float]):
        self.entries: dict[str, float] = {}
        for image_id, mos in entries.items():
            check_image_id(image_id)
            mos = float(mos)
            if not math.isfinite(mos):
                raise InvalidValue(f"MOS for {image_id!r} is not finite")
            self.entries[image_id] = mos

    def __eq__(self, other):
        return isinstance(other, MosTable) and self.entries == other.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self.entries

    def __getitem__(self, image_id: str) -> float:
        try:
            return self.entries[image_id]
        except KeyError:
            raise UnknownImage(f"no MOS for image {image_id!r}") from None

    def images(self) -> list[str]:
        return sorted(self.entries)


class FeatureRecord:
    """Staged pooled feature vectors plus a content logit vector for one image."""

    def __init__(self, image_id: str, stages: Iterable[Iterable[float]], logit: Iterable[float]):
        self.image_id = check_image_id(image_id)
        self.stages = [np.asarray(s, dtype=np.float64) for s in stages]
        self.logit = np.asarray(logit, dtype=np.float64)
        for idx, stage in enumerate(self.stages):
            if stage.ndim != 1:
                raise DimensionError(f"{image_id}: stage {idx} is not a flat vector")
            if not np.isfinite(stage).all():
                raise InvalidValue(f"{image_id}: stage {idx} has non-finite entries")
        if self.logit.ndim != 1:
            raise DimensionError(f"{image_id}: logit is not a flat vector")
        if not np.isfinite(self.logit).all():
            raise InvalidValue(f"{image_id}: logit has non-finite entries")

    @property
    def stage_widths(self) -> list[int]:
        return [int(s.size) for s in self.stages]

    def concat_stages(self) -> np.ndarray:
        return np.concatenate(self.stages)

    def __eq__(self, other):
        return (
            isinstance(other, FeatureRecord)
            and self.image_id == other.image_id
            and len(self.stages) == len(other.stages)
            and all(np.array_equal(a, b) for a, b in zip(self.stages, other.stages))
            and np.array_equal(self.logit, other.logit)
        )


class FeatureStore:
    """All feature records of a corpus, width-checked against the manifest."""

    def __init__(self, stage_widths: list[int], logit_width: int,
                 records: Mapping[str, FeatureRecord] | None = None):
        self.stage_widths = [int(w) for w in stage_widths]
        self.logit_width = int(logit_width)
        self.records: dict[str, FeatureRecord] = {}
        for record in (records or {}).values():
            self.add(record)

    def add(self, record: FeatureRecord) -> None:
        if record.image_id in self.records:
            raise DuplicateEntry(f"duplicate feature record for {record.image_id!r}")
        widths = record.stage_widths
        if len(widths) != len(self.stage_widths):
            raise DimensionError(
                f"{record.image_id}: expected {len(self.stage_widths)} stages, got {len(widths)}"
            )
        for idx, (got, want) in enumerate(zip(widths, self.stage_widths)):
            if got != want:
                raise DimensionError(
                    f"{record.image_id}: stage {idx} has width {got}, manifest declares {want}"
                )
        if record.logit.size != self.logit_width:
            raise DimensionError(
                f"{record.image_id}: logit width {record.logit.size}, manifest declares {self.logit_width}"
            )
        self.records[record.image_id] = record

    def __eq__(self, other):
        return (
            isinstance(other, FeatureStore)
            and self.stage_widths == other.stage_widths
            and self.logit_width == other.logit_width
            and self.records == other.records
        )

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self.records

    def record(self, image_id: str) -> FeatureRecord:
        try:
            return self.records[image_id]
        except KeyError:
            raise UnknownImage(f"no features for image {image_id!r}") from None

    def ids(self) -> list[str]:
        return sorted(self.records)

    def stage_matrix(self, ids: Iterable[str], stage: int) -> np.ndarray:
        return np.stack([self.record(i).stages[stage] for i in ids])

    def logit_matrix(self, ids: Iterable[str]) -> np.ndarray:
        return np.stack([self.record(i).logit for i in ids])


@dataclass(frozen=True)
class ManifestImage:
    id: str
    partition: str
    path: str | None = None


@dataclass
class CorpusManifest:
    """Declares corpus name, feature widths, and the image partition tags."""

    name: str
    stage_widths: list[int]
    logit_width: int
    images: list[ManifestImage] = field(default_factory=list)

    def __post_init__(self):
        if not self.name:
            raise InvalidValue("manifest name must be nonempty")
        if any(int(w) <= 0 for w in self.stage_widths) or int(self.logit_width) <= 0:
            raise InvalidValue("stage/logit widths must be positive")
        seen: set[str] = set()
        for img in self.images:
            check_image_id(img.id)
            if img.partition not in PARTITIONS:
                raise InvalidValue(
                    f"{img.id}: partition must be one of {PARTITIONS}, got {img.partition!r}"
                )
            if img.id in seen:
                raise DuplicateEntry(f"duplicate manifest image {img.id!r}")
            seen.add(img.id)
        # canonical order: lexicographic ids, the global tie-break order
        self.images = sorted(self.images, key=lambda m: m.id)

    def ids(self) -> list[str]:
        return [img.id for img in self.images]

    def partition_ids(self, partition: str) -> list[str]:
        if partition not in PARTITIONS:
            raise InvalidValue(f"unknown partition {partition!r}")
        return [img.id for img in self.images if img.partition == partition]

    def path_of(self, image_id: str) -> str | None:
        for img in self.images:
            if img.id == image_id:
                return img.path
        raise UnknownImage(f"image {image_id!r} not in manifest")


class EnsembleTable:
    """Committee / stochastic predictions: (image_id, member_id) -> score."""

    def __init__(self, entries: Mapping[tuple[str, str], float]):
        self.entries: dict[tuple[str, str], float] = {}
        for (image_id, member_id), score in entries.items():
            check_image_id(image_id)
            if not member_id:
                raise InvalidValue("member id must be nonempty")
            score = float(score)
            if not math.isfinite(score):
                raise InvalidValue(f"ensemble score for ({image_id}, {member_id}) is not finite")
            self.entries[(image_id, member_id)] = score

    def __eq__(self, other):
        return isinstance(other, EnsembleTable) and self.entries == other.entries

    def __len__(self) -> int:
        return len(self.entries)

    def images(self) -> list[str]:
        return sorted({i for i, _ in self.entries})

    def member_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for image_id, _ in self.entries:
            counts[image_id] = counts.get(image_id, 0) + 1
        return counts

    def members_of(self, image_id: str) -> np.ndarray:
        scores = [s for (i, _), s in sorted(self.entries.items()) if i == image_id]
        if not scores:
            raise UnknownImage(f"no ensemble members for image {image_id!r}")
        return np.asarray(scores, dtype=np.float64)


# ---------------------------------------------------------------------------
# loaders


def _reader(text: str, required: list[str], where: str) -> tuple[list[str], list[dict]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaError(f"{where}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    for column in required:
        if column not in header:
            raise SchemaError(f"{where}: missing column {column!r} (header {header})")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise SchemaError(f"{where}: line {lineno} has {len(row)} fields, header has {len(header)}")
        records.append({"_line": lineno, **dict(zip(header, (c.strip() for c in row)))})
    return header, records


def parse_scores(text: str, schema: Mapping[str, str] | None = None,
                 where: str = "<scores>") -> ScoreTable:
    """Parse a score CSV. `schema` may rename the canonical columns."""
    names = {"image_id": "image_id", "model_id": "model_id",
             "score": "score", "uncertainty": "uncertainty"}
    if schema:
        names.update(schema)
    header, records = _reader(text, [names["image_id"], names["model_id"], names["score"]], where)
    has_uncertainty = names["uncertainty"] in header
    entries: dict[tuple[str, str], float] = {}
    uncertainty: dict[tuple[str, str], float] = {}
    first_line: dict[tuple[str, str], int] = {}
    for rec in records:
        key = (rec[names["image_id"]], rec[names["model_id"]])
        if key in entries:
            raise DuplicateEntry(
                f"{where}: ({key[0]}, {key[1]}) on line {rec['_line']} duplicates line {first_line[key]}"
            )
        entries[key] = _parse_finite(rec[names["score"]], f"{where}: line {rec['_line']}")
        first_line[key] = rec["_line"]
        if has_uncertainty and rec[names["uncertainty"]] != "":
            sigma = _parse_finite(rec[names["uncertainty"]], f"{where}: line {rec['_line']}")
            if sigma <= 0.0:
                raise InvalidValue(f"{where}: line {rec['_line']}: uncertainty must be > 0")
            uncertainty[key] = sigma
    return ScoreTable(entries, uncertainty)


def load_scores(path, schema: Mapping[str, str] | None = None) -> ScoreTable:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_scores(fh.read(), schema, where=str(path))


def dump_scores(table: ScoreTable) -> str:
    with_uncertainty = bool(table.uncertainty)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = ["image_id", "model_id", "score"] + (["uncertainty"] if with_uncertainty else [])
    writer.writerow(header)
    for (image_id, model_id) in sorted(table.entries):
        row = [image_id, model_id, _format_float(table.entries[(image_id, model_id)])]
        if with_uncertainty:
            sigma = table.uncertainty.get((image_id, model_id))
            row.append("" if sigma is None else _format_float(sigma))
        writer.writerow(row)
    return out.getvalue()


def parse_mos(text: str, where: str = "<mos>") -> MosTable:
    _, records = _reader(text, ["image_id", "mos"], where)
    entries: dict[str, float] = {}
    first_line: dict[str, int] = {}
    for rec in records:
        image_id = rec["image_id"]
        if image_id in entries:
            raise DuplicateEntry(
                f"{where}: {image_id!r} on line {rec['_line']} duplicates line {first_line[image_id]}"
            )
        entries[image_id] = _parse_finite(rec["mos"], f"{where}: line {rec['_line']}")
        first_line[image_id] = rec["_line"]
    return MosTable(entries)


def load_mos(path) -> MosTable:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_mos(fh.read(), where=str(path))


def dump_mos(table: MosTable) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["image_id", "mos"])
    for image_id in sorted(table.entries):
        writer.writerow([image_id, _format_float(table.entries[image_id])])
    return out.getvalue()


def parse_features(text: str, manifest: CorpusManifest, where: str = "<features>") -> FeatureStore:
    store = FeatureStore(manifest.stage_widths, manifest.logit_width)
    known = set(manifest.ids())
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{where}: line {lineno}: invalid JSON: {exc}") from None
        for key in ("image_id", "stages", "logit"):
            if key not in obj:
                raise SchemaError(f"{where}: line {lineno}: missing field {key!r}")
        if obj["image_id"] not in known:
            raise UnknownImage(f"{where}: line {lineno}: id {obj['image_id']!r} not in manifest")
        record = FeatureRecord(obj["image_id"], obj["stages"], obj["logit"])
        store.add(record)
    return store


def load_features(path, manifest: CorpusManifest) -> FeatureStore:
    with open(path, encoding="utf-8") as fh:
        return parse_features(fh.read(), manifest, where=str(path))


def dump_features(store: FeatureStore) -> str:
    lines = []
    for image_id in store.ids():
        record = store.records[image_id]
        lines.append(json.dumps({
            "image_id": image_id,
            "stages": [stage.tolist() for stage in record.stages],
            "logit": record.logit.tolist(),
        }))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_manifest(text: str, where: str = "<manifest>") -> CorpusManifest:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{where}: invalid JSON: {exc}") from None
    for key in ("name", "stage_widths", "logit_width", "images"):
        if key not in obj:
            raise SchemaError(f"{where}: missing field {key!r}")
    images = []
    for entry in obj["images"]:
        if "id" not in entry or "partition" not in entry:
            raise SchemaError(f"{where}: image entries need 'id' and 'partition'")
        images.append(ManifestImage(entry["id"], entry["partition"], entry.get("path")))
    return CorpusManifest(obj["name"], [int(w) for w in obj["stage_widths"]],
                          int(obj["logit_width"]), images)


def load_manifest(path) -> CorpusManifest:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh.read(), where=str(path))


def dump_manifest(manifest: CorpusManifest) -> str:
    images = []
    for img in manifest.images:
        entry: dict = {"id": img.id, "partition": img.partition}
        if img.path is not None:
            entry["path"] = img.path
        images.append(entry)
    return json.dumps({
        "name": manifest.name,
        "stage_widths": manifest.stage_widths,
        "logit_width": manifest.logit_width,
        "images": images,
    }, indent=2) + "\n"


def parse_ensemble(text: str, where: str = "<ensemble>") -> EnsembleTable:
    _, records = _reader(text, ["image_id", "member_id", "score"], where)
    entries: dict[tuple[str, str], float] = {}
    first_line: dict[tuple[str, str], int] = {}
    for rec in records:
        key = (rec["image_id"], rec["member_id"])
        if key in entries:
            raise DuplicateEntry(
                f"{where}: ({key[0]}, {key[1]}) on line {rec['_line']} duplicates line {first_line[key]}"
            )
        entries[key] = _parse_finite(rec["score"], f"{where}: line {rec['_line']}")
        first_line[key] = rec["_line"]
    return EnsembleTable(entries)


def load_ensemble(path) -> EnsembleTable:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_ensemble(fh.read(), where=str(path))


def dump_ensemble(table: EnsembleTable) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["image_id", "member_id", "score"])
    for key in sorted(table.entries):
        writer.writerow([key[0], key[1], _format_float(table.entries[key])])
    return out.getvalue()


# ---------------------------------------------------------------------------
# cross-reference validation


class ValidationReport:
    """Findings per table: ids missing from it and ids unknown to the manifest."""

    def __init__(self):
        self.findings: dict[str, list[str]] = {}

    def add(self, section: str, ids: Iterable[str]) -> None:
        ids = sorted(ids)
        if ids:
            self.findings[section] = ids

    def is_empty(self) -> bool:
        return not self.findings

    def __bool__(self) -> bool:  # truthy when there ARE findings
        return not self.is_empty()

    def to_dict(self) -> dict:
        return dict(sorted(self.findings.items()))

    def summary(self) -> str:
        if self.is_empty():
            return "corpus consistent: no findings"
        lines = [f"{len(self.findings)} finding group(s):"]
        for section, ids in sorted(self.findings.items()):
            shown = ", ".join(ids[:8]) + (", ..." if len(ids) > 8 else "")
            lines.append(f"  {section} ({len(ids)}): {shown}")
        return "\n".join(lines)


def validate_corpus(
    manifest: CorpusManifest,
    scores: ScoreTable | None = None,
    mos: MosTable | None = None,
    features: FeatureStore | None = None,
    ensembles: EnsembleTable | None = None,
) -> ValidationReport:
    """Cross-check every table against the manifest. Pure reporting, no raises."""
    report = ValidationReport()
    manifest_ids = set(manifest.ids())
    if scores is not None:
        scored = set(scores.images())
        report.add("scores.missing", manifest_ids - scored)
        report.add("scores.unknown", scored - manifest_ids)
        models = scores.models()
        incomplete = {
            i for i in scored & manifest_ids
            if any((i, m) not in scores.entries for m in models)
        }
        report.add("scores.incomplete", incomplete)
    if mos is not None:
        rated = set(mos.entries)
        report.add("mos.missing", manifest_ids - rated)
        report.add("mos.unknown", rated - manifest_ids)
    if features is not None:
        featured = set(features.records)
        report.add("features.missing", manifest_ids - featured)
        report.add("features.unknown", featured - manifest_ids)
    if ensembles is not None:
        covered = set(ensembles.images())
        report.add("ensembles.missing", manifest_ids - covered)
        report.add("ensembles.unknown", covered - manifest_ids)
        counts = ensembles.member_counts()
        if len(set(counts.values())) > 1:
            report.add("ensembles.unequal_members",
                       [f"{i}:{n}" for i, n in sorted(counts.items())])
    return report
