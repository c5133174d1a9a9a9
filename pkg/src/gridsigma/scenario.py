"""Load profiles, anomaly injection, feature statistics, and dataset assembly.

Every random draw flows from a master seed through numpy SeedSequence
children keyed by (seed, purpose tag, index), so datasets are bit-identical
across runs regardless of evaluation order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError, PowerFlowError
from .grid import FeatureLayout, GridCase, LayoutEntry, extract_features, solve_newton

logger = logging.getLogger(__name__)

NORMAL = "normal"
ANOMALY = "anomaly"

# SeedSequence purpose tags
_TAG_PROFILE = 1
_TAG_INJECT = 2
_TAG_SPLIT = 3

STD_FLOOR = 1e-12
A_FLOOR = 0.05  # pu; minimum injected deviation so near-zero sensors move


@dataclass(frozen=True)
class LoadProfile:
    hours: int
    scale: np.ndarray  # (hours, bus_count)

    def __post_init__(self):
        if self.scale.shape[0] != self.hours:
            raise DatasetError("profile row count does not match hours")
        if self.scale.size and not ((self.scale > 0) & (self.scale < 4)).all():
            raise DatasetError("load multipliers must lie in (0, 4)")


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    label: str  # normal | anomaly
    injected: tuple[int, ...]  # sorted feature indices
    deltas: tuple[float, ...]  # aligned with injected
    hour: int


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray  # population std (divide by n)
    n: int
    split: str  # provenance tag, e.g. "train"


@dataclass(frozen=True)
class SplitSizes:
    train: int = 1200
    validation: int = 200
    test: int = 200

    @property
    def total(self) -> int:
        return self.train + self.validation + self.test


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    splits: dict[str, tuple[int, ...]]  # train / validation / test id sets
    layout: FeatureLayout
    stats: FeatureStats
    master_seed: int

    def by_id(self, sample_id: int) -> Sample:
        s = self.samples[sample_id]
        if s.id != sample_id:  # samples are stored in id order by construction
            for s in self.samples:
                if s.id == sample_id:
                    return s
            raise KeyError(sample_id)
        return s

    def split_samples(self, name: str) -> list[Sample]:
        return [self.samples[i] for i in self.splits[name]]


def _child_rng(master_seed: int, tag: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, tag, index]))


def synth_load_profile(hours: int, bus_count: int, seed: int) -> LoadProfile:
    """Daily sinusoid per bus (period 24 h, amplitude 0.2, mean 1.0) plus
    Gaussian noise (sigma 0.03), clamped to [0.6, 1.4]."""
    if hours < 1:
        raise DatasetError("hours must be >= 1")
    rng = _child_rng(seed, _TAG_PROFILE)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=bus_count)
    t = np.arange(hours, dtype=float)[:, None]
    scale = 1.0 + 0.2 * np.sin(2.0 * np.pi * t / 24.0 + phase[None, :])
    scale += rng.normal(0.0, 0.03, size=(hours, bus_count))
    scale = np.clip(scale, 0.6, 1.4)
    return LoadProfile(hours=hours, scale=scale)


def ingest_load_csv(text: str, bus_count: int) -> LoadProfile:
    """Read a load profile from CSV text: header row of bus ids, numeric body."""
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise DatasetError("empty CSV")
    header = rows[0]
    if len(header) != bus_count:
        raise DatasetError(
            f"header has {len(header)} columns, expected {bus_count} bus ids"
        )
    body = []
    for rownum, row in enumerate(rows[1:], start=2):
        if len(row) != bus_count:
            raise DatasetError(
                f"row {rownum}: {len(row)} columns, expected {bus_count}"
            )
        try:
            body.append([float(cell) for cell in row])
        except ValueError:
            raise DatasetError(f"row {rownum}: non-numeric cell") from None
    if not body:
        raise DatasetError("CSV has no data rows")
    return LoadProfile(hours=len(body), scale=np.asarray(body, dtype=float))


def export_load_csv(profile: LoadProfile, bus_ids: list[int]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(bus_ids)
    for row in profile.scale:
        writer.writerow([repr(float(v)) for v in row])
    return out.getvalue()


def inject_anomaly(
    features: np.ndarray,
    seed: "int | np.random.SeedSequence",
    k_inject: int = 3,
    magnitude: float = 0.15,
) -> tuple[np.ndarray, tuple[int, ...], tuple[float, ...]]:
    """Corrupt k distinct sensors: delta = sign * max(magnitude*|x|, A_FLOOR)."""
    n = len(features)
    if k_inject > n:
        raise DatasetError(f"k_inject {k_inject} exceeds feature count {n}")
    if magnitude <= 0:
        raise DatasetError("magnitude must be positive")
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(n, size=k_inject, replace=False))
    signs = rng.integers(0, 2, size=k_inject) * 2 - 1
    out = np.array(features, dtype=float, copy=True)
    deltas = []
    for idx, sign in zip(indices, signs):
        delta = float(sign) * max(magnitude * abs(float(features[idx])), A_FLOOR)
        out[idx] = out[idx] + delta
        deltas.append(delta)
    return out, tuple(int(i) for i in indices), tuple(deltas)


def compute_stats(samples: list[Sample], split: str = "train") -> FeatureStats:
    """Per-feature population mean and std over the given samples."""
    if not samples:
        raise DatasetError("cannot compute stats of an empty sample list")
    matrix = np.stack([s.features for s in samples])
    return FeatureStats(
        mean=matrix.mean(axis=0),
        std=matrix.std(axis=0),
        n=len(samples),
        split=split,
    )


def zscores(features: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """(value - mean) / max(std, 1e-12), elementwise."""
    if len(features) != len(stats.mean):
        raise DatasetError(
            f"feature length {len(features)} does not match stats length "
            f"{len(stats.mean)}"
        )
    return (np.asarray(features, dtype=float) - stats.mean) / np.maximum(
        stats.std, STD_FLOOR
    )


def build_dataset(
    case: GridCase,
    profile: LoadProfile,
    layout: FeatureLayout,
    sizes: SplitSizes = SplitSizes(),
    seed: int = 42,
    k_inject: int = 3,
    magnitude: float = 0.15,
    tol: float = 1e-8,
    max_iter: int = 20,
) -> Dataset:
    """Run the measurement pipeline hour by hour and assemble a labeled,
    stratified, split dataset.

    Half the samples are untouched power-flow measurements; the other half
    duplicate a normal base vector and receive seeded injections. Statistics
    come from the train split only. Hours whose power flow fails to converge
    are skipped with a log entry.
    """
    for name, size in (
        ("train", sizes.train),
        ("validation", sizes.validation),
        ("test", sizes.test),
    ):
        if size <= 0 or size % 2 != 0:
            raise DatasetError(f"{name} size must be positive and even, got {size}")
    n_total = sizes.total
    n_normal = n_total // 2
    n_anomalous = n_total - n_normal
    if profile.scale.shape[1] != len(case.buses):
        raise DatasetError(
            f"profile has {profile.scale.shape[1]} bus columns, case has "
            f"{len(case.buses)} buses"
        )
    if profile.hours < n_normal:
        raise DatasetError(
            f"profile supplies {profile.hours} hours, need at least {n_normal}"
        )

    base_features: list[np.ndarray] = []
    hours_used: list[int] = []
    for hour in range(profile.hours):
        if len(base_features) == n_normal:
            break
        try:
            sol = solve_newton(case, profile.scale[hour], tol=tol, max_iter=max_iter)
        except PowerFlowError as exc:
            logger.warning("hour %d skipped: %s", hour, exc)
            continue
        base_features.append(extract_features(sol, layout))
        hours_used.append(hour)
    if len(base_features) < n_normal:
        raise DatasetError(
            f"only {len(base_features)} of {n_normal} required hours converged"
        )

    samples: list[Sample] = []
    for i in range(n_normal):
        samples.append(
            Sample(
                id=i,
                features=base_features[i],
                label=NORMAL,
                injected=(),
                deltas=(),
                hour=hours_used[i],
            )
        )
    for j in range(n_anomalous):
        b = j % n_normal
        feats, injected, deltas = inject_anomaly(
            base_features[b],
            np.random.SeedSequence([seed, _TAG_INJECT, j]),
            k_inject=k_inject,
            magnitude=magnitude,
        )
        samples.append(
            Sample(
                id=n_normal + j,
                features=feats,
                label=ANOMALY,
                injected=injected,
                deltas=deltas,
                hour=hours_used[b],
            )
        )

    rng = _child_rng(seed, _TAG_SPLIT)
    normal_ids = rng.permutation(n_normal)
    anomalous_ids = rng.permutation(n_anomalous) + n_normal
    splits: dict[str, tuple[int, ...]] = {}
    cursor = 0
    for name, size in (
        ("train", sizes.train),
        ("validation", sizes.validation),
        ("test", sizes.test),
    ):
        half = size // 2
        ids = list(normal_ids[cursor : cursor + half]) + list(
            anomalous_ids[cursor : cursor + half]
        )
        splits[name] = tuple(sorted(int(i) for i in ids))
        cursor += half

    stats = compute_stats([samples[i] for i in splits["train"]], split="train")
    return Dataset(
        samples=tuple(samples),
        splits=splits,
        layout=layout,
        stats=stats,
        master_seed=seed,
    )


# --------------------------------------------------------------------------
# Persistence: JSONL samples, JSON stats/meta, CSV feature export


def sample_to_record(sample: Sample) -> dict:
    return {
        "id": sample.id,
        "hour": sample.hour,
        "label": sample.label,
        "injected": list(sample.injected),
        "deltas": list(sample.deltas),
        "features": [float(v) for v in sample.features],
    }


def sample_from_record(rec: dict) -> Sample:
    label = str(rec["label"])
    injected = tuple(int(i) for i in rec["injected"])
    deltas = tuple(float(d) for d in rec["deltas"])
    if (label == ANOMALY) != bool(injected):
        raise ValueError(f"label {label!r} inconsistent with injected {injected}")
    if len(deltas) != len(injected):
        raise ValueError("deltas and injected lengths differ")
    return Sample(
        id=int(rec["id"]),
        features=np.asarray(rec["features"], dtype=float),
        label=label,
        injected=injected,
        deltas=deltas,
        hour=int(rec["hour"]),
    )


def dataset_to_jsonl(ds: Dataset) -> str:
    return "".join(
        json.dumps(sample_to_record(s), separators=(",", ":")) + "\n"
        for s in ds.samples
    )


def stats_to_json(stats: FeatureStats) -> str:
    doc = {
        "mean": [float(v) for v in stats.mean],
        "std": [float(v) for v in stats.std],
        "n": stats.n,
        "split": stats.split,
    }
    return json.dumps(doc, indent=2) + "\n"


def stats_from_json(text: str) -> FeatureStats:
    doc = json.loads(text)
    return FeatureStats(
        mean=np.asarray(doc["mean"], dtype=float),
        std=np.asarray(doc["std"], dtype=float),
        n=int(doc["n"]),
        split=str(doc["split"]),
    )


def meta_to_json(ds: Dataset) -> str:
    doc = {
        "master_seed": ds.master_seed,
        "splits": {name: list(ids) for name, ids in ds.splits.items()},
        "layout": [
            {"name": e.name, "kind": e.kind, "index": e.index}
            for e in ds.layout.entries
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def features_to_csv(ds: Dataset) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["id", "hour", "label"] + ds.layout.names())
    for s in ds.samples:
        writer.writerow(
            [s.id, s.hour, s.label] + [repr(float(v)) for v in s.features]
        )
    return out.getvalue()


def dataset_from_files(jsonl_text: str, stats_text: str, meta_text: str) -> Dataset:
    samples = []
    for lineno, line in enumerate(jsonl_text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            samples.append(sample_from_record(json.loads(line)))
        except (KeyError, ValueError) as exc:
            raise DatasetError(f"dataset line {lineno}: {exc}") from None
    meta = json.loads(meta_text)
    layout = FeatureLayout(
        tuple(
            LayoutEntry(name=e["name"], kind=e["kind"], index=int(e["index"]))
            for e in meta["layout"]
        )
    )
    return Dataset(
        samples=tuple(samples),
        splits={
            name: tuple(int(i) for i in ids) for name, ids in meta["splits"].items()
        },
        layout=layout,
        stats=stats_from_json(stats_text),
        master_seed=int(meta["master_seed"]),
    )
