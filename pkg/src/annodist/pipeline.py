"""Ingestion and preprocessing: windowing, aggregation, consensus targets.

Frame-level features and annotation traces are cut into half-open windows
``[start, start + window_len)`` on a shared stride grid (start = k * stride,
requiring full coverage: start + window_len <= duration).  Features are
averaged per window and concatenated across modalities; annotations are
averaged per annotator within the window and reduced to a clamped
:class:`~annodist.consensus.MomentPair` across annotators.

CSV interfaces
--------------
* features:     header ``subject_id,modality,timestamp,f0,...,fK``
* annotations:  header ``subject_id,annotator_id,timestamp,value``
* built dataset: ``subject_id,window_start,n_annotators,mu,sigma,f0,...`` plus
  a JSON manifest (label range, modality dims, window config, subjects).

Timestamps are seconds as decimals; files are UTF-8.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .consensus import DEFAULT_EPSILON, MomentPair, clamp_moments, consensus_moments
from .errors import (
    DomainError,
    EmptyDatasetError,
    InsufficientDataError,
    SchemaError,
)

log = logging.getLogger(__name__)

_TIME_TOL = 1e-9


def fmt_float(x) -> str:
    """Shortest exact decimal form; keeps CSV output byte-reproducible."""
    return repr(float(x))


@dataclass(frozen=True)
class WindowConfig:
    """Windowing parameters: 3 s windows shifted by 400 ms by default."""

    window_len: float = 3.0
    stride: float = 0.4
    label_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not (0.0 < self.stride <= self.window_len):
            raise DomainError("WindowConfig: need 0 < stride <= window_len")
        lo, hi = self.label_range
        if not hi > lo:
            raise DomainError("WindowConfig: label_range must satisfy hi > lo")


@dataclass(frozen=True)
class FrameSeries:
    """One modality's frame-level feature stream for one subject."""

    subject_id: str
    timestamps: np.ndarray
    features: np.ndarray
    modality: str

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or ts.ndim != 1 or feats.shape[0] != ts.size:
            raise DomainError("FrameSeries: features must be (n_frames, dim)")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise DomainError(
                f"FrameSeries[{self.subject_id}/{self.modality}]: "
                "timestamps must be strictly increasing"
            )
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "features", feats)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class AnnotationTrace:
    """One annotator's continuous trace for one subject."""

    subject_id: str
    annotator_id: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        if ts.ndim != 1 or vals.ndim != 1 or ts.size != vals.size:
            raise DomainError("AnnotationTrace: timestamps/values must align")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise DomainError(
                f"AnnotationTrace[{self.subject_id}/{self.annotator_id}]: "
                "timestamps must be strictly increasing"
            )
        if not np.all(np.isfinite(vals)):
            raise DomainError(
                f"AnnotationTrace[{self.subject_id}/{self.annotator_id}]: "
                "values must be finite"
            )
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class WindowedSample:
    """Aligned feature vector plus consensus target for one window."""

    subject_id: str
    window_start: float
    feature_vector: np.ndarray
    target: MomentPair
    n_annotators: int


@dataclass
class BuildReport:
    """Counts and provenance gathered while building a windowed dataset."""

    n_samples: int = 0
    windows_skipped_empty: int = 0
    windows_dropped_few_annotators: int = 0
    windows_unmatched: int = 0
    subjects: list[str] = field(default_factory=list)
    modality_dims: dict[str, int] = field(default_factory=dict)


def window_starts(duration: float, cfg: WindowConfig) -> np.ndarray:
    """All window starts k * stride with k*stride + window_len <= duration."""
    count = int(np.floor((duration - cfg.window_len + _TIME_TOL) / cfg.stride)) + 1
    if count <= 0:
        return np.empty(0, dtype=np.float64)
    return np.arange(count, dtype=np.float64) * cfg.stride


def window_features(
    series: FrameSeries, cfg: WindowConfig
) -> tuple[list[tuple[float, np.ndarray]], list[float]]:
    """Per-window mean feature vectors; returns (windows, skipped_starts).

    Frames containing NaN are dropped before averaging; a window with no
    remaining frames is skipped and reported.
    """
    if series.timestamps.size == 0:
        log.warning(
            "window_features: empty series %s/%s", series.subject_id, series.modality
        )
        return [], []
    keep = ~np.any(np.isnan(series.features), axis=1)
    ts = series.timestamps[keep]
    feats = series.features[keep]
    out: list[tuple[float, np.ndarray]] = []
    skipped: list[float] = []
    for start in window_starts(float(series.timestamps[-1]), cfg):
        lo = np.searchsorted(ts, start, side="left")
        hi = np.searchsorted(ts, start + cfg.window_len, side="left")
        if hi <= lo:
            skipped.append(float(start))
            continue
        out.append((float(start), feats[lo:hi].mean(axis=0)))
    if skipped:
        log.warning(
            "window_features: %s/%s skipped %d empty windows",
            series.subject_id, series.modality, len(skipped),
        )
    return out, skipped


def rescale_annotations(
    trace: AnnotationTrace, label_range: tuple[float, float]
) -> AnnotationTrace:
    """Linearly map values from [lo, hi] onto [0, 1]; order preserving."""
    lo, hi = label_range
    if not hi > lo:
        raise DomainError("rescale_annotations: label range must satisfy hi > lo")
    bad = (trace.values < lo) | (trace.values > hi)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DomainError(
            f"rescale_annotations: value {trace.values[i]!r} outside "
            f"[{lo}, {hi}] for annotator {trace.annotator_id!r} "
            f"at t={trace.timestamps[i]!r}"
        )
    return AnnotationTrace(
        trace.subject_id,
        trace.annotator_id,
        trace.timestamps,
        (trace.values - lo) / (hi - lo),
    )


def window_consensus(
    traces: list[AnnotationTrace],
    cfg: WindowConfig,
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[list[tuple[float, MomentPair, int]], list[float]]:
    """Clamped consensus moments per window for one subject.

    Each annotator's in-window values are averaged to one scalar first, so
    sigma measures pure inter-annotator disagreement.  Annotators without a
    sample in a window are excluded; windows with fewer than two contributing
    annotators are dropped and returned in the second element.
    """
    if len(traces) < 2:
        raise InsufficientDataError(
            f"window_consensus: need >= 2 annotation traces, got {len(traces)}"
        )
    subject = traces[0].subject_id
    for tr in traces:
        if tr.subject_id != subject:
            raise DomainError("window_consensus: traces must share one subject")
        if np.any(tr.values < 0.0) or np.any(tr.values > 1.0):
            raise DomainError(
                f"window_consensus: annotator {tr.annotator_id!r} has values "
                "outside [0, 1]; rescale first"
            )
    duration = max(float(tr.timestamps[-1]) for tr in traces if tr.timestamps.size)
    out: list[tuple[float, MomentPair, int]] = []
    dropped: list[float] = []
    for start in window_starts(duration, cfg):
        end = start + cfg.window_len
        per_annotator = []
        for tr in traces:
            lo = np.searchsorted(tr.timestamps, start, side="left")
            hi = np.searchsorted(tr.timestamps, end, side="left")
            if hi > lo:
                per_annotator.append(float(tr.values[lo:hi].mean()))
        if len(per_annotator) < 2:
            dropped.append(float(start))
            continue
        raw = consensus_moments(per_annotator)
        out.append((float(start), clamp_moments(raw, epsilon), len(per_annotator)))
    return out, dropped


def build_dataset(
    features: list[FrameSeries],
    annotations: list[AnnotationTrace],
    cfg: WindowConfig,
    modalities: list[str] | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[list[WindowedSample], BuildReport]:
    """Join windowed features with consensus targets on (subject, window).

    Feature vectors are concatenated across the selected modalities in the
    given order (sorted set of all modalities when unspecified).  Windows
    present on only one side are dropped and counted.
    """
    by_key: dict[tuple[str, str], FrameSeries] = {}
    for fs in features:
        key = (fs.subject_id, fs.modality)
        if key in by_key:
            raise DomainError(f"build_dataset: duplicate feature series {key}")
        by_key[key] = fs
    if modalities is None:
        modalities = sorted({fs.modality for fs in features})
    else:
        known = {fs.modality for fs in features}
        missing = [m for m in modalities if m not in known]
        if missing:
            raise DomainError(f"build_dataset: unknown modalities {missing}")

    traces_by_subject: dict[str, list[AnnotationTrace]] = {}
    for tr in annotations:
        bucket = traces_by_subject.setdefault(tr.subject_id, [])
        if any(t.annotator_id == tr.annotator_id for t in bucket):
            raise DomainError(
                f"build_dataset: duplicate trace for subject {tr.subject_id!r} "
                f"annotator {tr.annotator_id!r}"
            )
        bucket.append(tr)

    feat_subjects = {
        s for s in {fs.subject_id for fs in features}
        if all((s, m) in by_key for m in modalities)
    }
    subjects = sorted(feat_subjects & set(traces_by_subject))
    if not subjects:
        raise EmptyDatasetError(
            "build_dataset: no subjects with both features and annotations"
        )

    report = BuildReport(subjects=subjects)
    for m in modalities:
        report.modality_dims[m] = by_key[(subjects[0], m)].dim
    samples: list[WindowedSample] = []
    for subject in subjects:
        per_modality: list[dict[int, np.ndarray]] = []
        for m in modalities:
            fs = by_key[(subject, m)]
            if fs.dim != report.modality_dims[m]:
                raise DomainError(
                    f"build_dataset: modality {m!r} dim mismatch for "
                    f"subject {subject!r}"
                )
            wins, skipped = window_features(fs, cfg)
            report.windows_skipped_empty += len(skipped)
            per_modality.append(
                {int(round(start / cfg.stride)): vec for start, vec in wins}
            )
        consensus, dropped = window_consensus(
            traces_by_subject[subject], cfg, epsilon
        )
        report.windows_dropped_few_annotators += len(dropped)
        target_by_k = {
            int(round(start / cfg.stride)): (start, m, n)
            for start, m, n in consensus
        }
        feat_ks = set(per_modality[0])
        for d in per_modality[1:]:
            feat_ks &= set(d)
        common = sorted(feat_ks & set(target_by_k))
        report.windows_unmatched += (
            len(feat_ks | set(target_by_k)) - len(common)
        )
        for k in common:
            start, target, n_annot = target_by_k[k]
            vec = np.concatenate([d[k] for d in per_modality])
            samples.append(WindowedSample(subject, start, vec, target, n_annot))
    report.n_samples = len(samples)
    return samples, report


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------


def _open_reader(path):
    return open(path, "r", encoding="utf-8", newline="")


def _parse_float(text: str, path, line_no: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise SchemaError(
            f"{path}:{line_no}: column {column!r} is not a number: {text!r}"
        ) from None


def read_feature_csv(path) -> list[FrameSeries]:
    """Read a feature CSV into one FrameSeries per (subject, modality)."""
    path = Path(path)
    groups: dict[tuple[str, str], list[tuple[float, list[float]]]] = {}
    with _open_reader(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["subject_id", "modality", "timestamp"]:
            raise SchemaError(
                f"{path}:1: expected header starting with "
                "'subject_id,modality,timestamp', got "
                f"{','.join(header) if header else '<empty>'}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 4:
                raise SchemaError(f"{path}:{line_no}: missing feature columns")
            t = _parse_float(row[2], path, line_no, "timestamp")
            feats = [
                _parse_float(v, path, line_no, f"f{i}")
                for i, v in enumerate(row[3:])
                if v != ""
            ]
            groups.setdefault((row[0], row[1]), []).append((t, feats))
    out = []
    for (subject, modality), rows in sorted(groups.items()):
        rows.sort(key=lambda r: r[0])
        dims = {len(f) for _, f in rows}
        if len(dims) != 1:
            raise SchemaError(
                f"{path}: inconsistent feature dimension for "
                f"{subject}/{modality}: {sorted(dims)}"
            )
        ts = np.array([t for t, _ in rows])
        if np.any(np.diff(ts) <= 0):
            raise SchemaError(
                f"{path}: duplicate timestamp in series {subject}/{modality}"
            )
        out.append(
            FrameSeries(subject, ts, np.array([f for _, f in rows]), modality)
        )
    return out


def read_annotation_csv(path) -> list[AnnotationTrace]:
    """Read an annotation CSV into one AnnotationTrace per (subject, annotator)."""
    path = Path(path)
    groups: dict[tuple[str, str], list[tuple[float, float]]] = {}
    with _open_reader(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["subject_id", "annotator_id", "timestamp", "value"]
        if header != expected:
            raise SchemaError(
                f"{path}:1: expected header {','.join(expected)!r}, got "
                f"{','.join(header) if header else '<empty>'!r}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise SchemaError(f"{path}:{line_no}: expected 4 columns")
            t = _parse_float(row[2], path, line_no, "timestamp")
            v = _parse_float(row[3], path, line_no, "value")
            groups.setdefault((row[0], row[1]), []).append((t, v))
    out = []
    for (subject, annotator), rows in sorted(groups.items()):
        rows.sort(key=lambda r: r[0])
        ts = np.array([t for t, _ in rows])
        if np.any(np.diff(ts) <= 0):
            raise SchemaError(
                f"{path}: duplicate timestamp in trace {subject}/{annotator}"
            )
        out.append(
            AnnotationTrace(subject, annotator, ts, np.array([v for _, v in rows]))
        )
    return out


def write_feature_csv(path, series: list[FrameSeries]) -> None:
    path = Path(path)
    max_dim = max((fs.dim for fs in series), default=0)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "modality", "timestamp"] + [f"f{i}" for i in range(max_dim)]
        )
        for fs in series:
            for t, vec in zip(fs.timestamps, fs.features):
                writer.writerow(
                    [fs.subject_id, fs.modality, fmt_float(t)]
                    + [fmt_float(v) for v in vec]
                )


def write_annotation_csv(path, traces: list[AnnotationTrace]) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "annotator_id", "timestamp", "value"])
        for tr in traces:
            for t, v in zip(tr.timestamps, tr.values):
                writer.writerow(
                    [tr.subject_id, tr.annotator_id, fmt_float(t), fmt_float(v)]
                )


def write_dataset(
    outdir, samples: list[WindowedSample], report: BuildReport, cfg: WindowConfig
) -> Path:
    """Write the windowed-sample table plus its provenance manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    dim = samples[0].feature_vector.size if samples else 0
    table = outdir / "dataset.csv"
    with open(table, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "window_start", "n_annotators", "mu", "sigma"]
            + [f"f{i}" for i in range(dim)]
        )
        for s in samples:
            writer.writerow(
                [
                    s.subject_id,
                    fmt_float(s.window_start),
                    s.n_annotators,
                    fmt_float(s.target.mu),
                    fmt_float(s.target.sigma),
                ]
                + [fmt_float(v) for v in s.feature_vector]
            )
    manifest = {
        "label_range": list(cfg.label_range),
        "window": {"window_len": cfg.window_len, "stride": cfg.stride},
        "modality_dims": report.modality_dims,
        "subjects": report.subjects,
        "counts": {
            "samples": report.n_samples,
            "windows_skipped_empty": report.windows_skipped_empty,
            "windows_dropped_few_annotators": report.windows_dropped_few_annotators,
            "windows_unmatched": report.windows_unmatched,
        },
    }
    with open(outdir / "dataset_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return table


def read_dataset(path) -> tuple[list[WindowedSample], dict]:
    """Read a built dataset table (and its manifest when present)."""
    path = Path(path)
    if path.is_dir():
        path = path / "dataset.csv"
    samples = []
    with _open_reader(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        prefix = ["subject_id", "window_start", "n_annotators", "mu", "sigma"]
        if header is None or header[:5] != prefix:
            raise SchemaError(f"{path}:1: expected dataset header {prefix}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 5:
                raise SchemaError(f"{path}:{line_no}: short row")
            samples.append(
                WindowedSample(
                    subject_id=row[0],
                    window_start=_parse_float(row[1], path, line_no, "window_start"),
                    n_annotators=int(row[2]),
                    target=MomentPair(
                        _parse_float(row[3], path, line_no, "mu"),
                        _parse_float(row[4], path, line_no, "sigma"),
                    ),
                    feature_vector=np.array(
                        [
                            _parse_float(v, path, line_no, f"f{i}")
                            for i, v in enumerate(row[5:])
                        ]
                    ),
                )
            )
    manifest_path = path.parent / "dataset_manifest.json"
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    return samples, manifest
