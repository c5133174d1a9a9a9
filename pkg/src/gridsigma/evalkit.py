"""Confusion-matrix metrics, experiment runners, and report tables.

Positive means anomaly. Ground truth for scoring is always the injection
label; the three-sigma rule is the detection heuristic under test, not the
referee. Metrics keep exact integer counts and render undefined values as
"n/a" instead of silently degrading to 0.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import DatasetError, GridSigmaError
from . import agents, detectors, promptkit
from .promptkit import PromptConfig
from .scenario import ANOMALY, NORMAL, Dataset, zscores

logger = logging.getLogger(__name__)

AS_WRONG = "as_wrong"
EXCLUDED = "excluded"
INVALID_POLICIES = (AS_WRONG, EXCLUDED)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float | None
    recall: float | None
    precision: float | None
    f1: float | None
    counts: ConfusionCounts
    invalid_count: int = 0
    invalid_policy: str = AS_WRONG


def confusion(
    preds: list[str], truths: list[str], policy: str = AS_WRONG
) -> tuple[ConfusionCounts, int]:
    """Count (pred, truth) pairs; invalid predictions follow the policy."""
    if len(preds) != len(truths):
        raise GridSigmaError(
            f"{len(preds)} predictions vs {len(truths)} truths"
        )
    if policy not in INVALID_POLICIES:
        raise GridSigmaError(f"unknown invalid policy {policy!r}")
    tp = fp = fn = tn = invalid = 0
    for pred, truth in zip(preds, truths):
        if pred == promptkit.INVALID:
            invalid += 1
            if policy == EXCLUDED:
                continue
            pred = NORMAL if truth == ANOMALY else ANOMALY  # count as wrong
        if truth == ANOMALY:
            if pred == ANOMALY:
                tp += 1
            else:
                fn += 1
        else:
            if pred == ANOMALY:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn), invalid


def metrics(
    counts: ConfusionCounts, invalid_count: int = 0, invalid_policy: str = AS_WRONG
) -> MetricsReport:
    """Accuracy, recall, precision, F1; zero denominators yield None."""
    c = counts
    accuracy = (c.tp + c.tn) / c.total if c.total else None
    recall = c.tp / (c.tp + c.fn) if (c.tp + c.fn) else None
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) else None
    if recall is None or precision is None or (recall + precision) == 0:
        f1 = None
    else:
        f1 = 2 * recall * precision / (recall + precision)
    return MetricsReport(
        accuracy=accuracy,
        recall=recall,
        precision=precision,
        f1=f1,
        counts=c,
        invalid_count=invalid_count,
        invalid_policy=invalid_policy,
    )


def f1_from(recall: float, precision: float) -> float | None:
    """Harmonic mean of recall and precision; None when both are zero."""
    if recall == 0 and precision == 0:
        return None
    return 2 * recall * precision / (recall + precision)


def lift(new: float, old: float) -> float:
    """Relative improvement (new - old) / old."""
    return (new - old) / old


# --------------------------------------------------------------------------
# Experiment runner


@dataclass(frozen=True)
class RunConfig:
    paradigm: str = promptkit.ZERO_SHOT
    variant: str = promptkit.VARIANT_Z_ONLY
    agent: str = agents.REFERENCE_RULE  # agent kind name
    data_dir: str = "data"
    example_seed: int = 7
    coin_seed: int = 7
    invalid_policy: str = AS_WRONG
    k_examples: int = -1  # -1 = paradigm default
    m_select: int = 8
    decimals: int = 4
    selection_decimals: int = 6
    endpoint: "agents.EndpointConfig | None" = None

    def prompt_config(self) -> PromptConfig:
        return PromptConfig(
            paradigm=self.paradigm,
            variant=self.variant,
            k_examples=self.k_examples,
            example_seed=self.example_seed,
            decimals=self.decimals,
            m_select=self.m_select,
        )

    def agent_kind(self) -> agents.AgentKind:
        if self.agent == agents.COIN_FLIP:
            return agents.AgentKind(self.agent, seed=self.coin_seed)
        return agents.AgentKind(self.agent)


def load_dataset_dir(data_dir: "str | Path") -> Dataset:
    from .scenario import dataset_from_files

    root = Path(data_dir)
    try:
        return dataset_from_files(
            (root / "dataset.jsonl").read_text(encoding="utf-8"),
            (root / "stats.json").read_text(encoding="utf-8"),
            (root / "meta.json").read_text(encoding="utf-8"),
        )
    except FileNotFoundError as exc:
        raise DatasetError(f"dataset not found under {root}: {exc.filename}") from None


def _config_doc(run: RunConfig, extra: dict | None = None) -> dict:
    doc = {
        "paradigm": run.paradigm,
        "variant": run.variant,
        "agent": run.agent,
        "example_seed": run.example_seed,
        "coin_seed": run.coin_seed,
        "invalid_policy": run.invalid_policy,
        "k_examples": run.k_examples,
        "m_select": run.m_select,
        "decimals": run.decimals,
        "model": run.endpoint.model_name if run.endpoint else None,
    }
    if extra:
        doc.update(extra)
    return doc


def _metrics_doc(report: MetricsReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "recall": report.recall,
        "precision": report.precision,
        "f1": report.f1,
        "counts": {
            "tp": report.counts.tp,
            "fp": report.counts.fp,
            "fn": report.counts.fn,
            "tn": report.counts.tn,
        },
        "invalid_count": report.invalid_count,
    }


def run_experiment(
    run: RunConfig,
    dataset: Dataset | None = None,
    cache: "agents.ResponseCache | None" = None,
    out_dir: "str | Path | None" = None,
) -> tuple[MetricsReport, dict]:
    """Render prompts for the test split, execute the agent, score, persist.

    Returns the metrics report under the configured invalid policy plus the
    run manifest (also written to out_dir when given). Examples come from
    the train split only; any example ids are excluded from the targets.
    """
    if dataset is None:
        dataset = load_dataset_dir(run.data_dir)
    cfg = run.prompt_config()
    agent = run.agent_kind()
    examples = (
        promptkit.select_examples(dataset.split_samples("train"), cfg, dataset.stats)
        if cfg.k_examples
        else []
    )
    example_ids = {s.id for s in examples}
    targets = [
        s for s in dataset.split_samples("test") if s.id not in example_ids
    ]
    if not targets:
        raise DatasetError("test split is empty")
    bundles = [
        promptkit.render_prompt(s, dataset.stats, cfg, examples, dataset.layout)
        for s in targets
    ]
    verdicts = agents.run_batch(bundles, agent, run.endpoint, cache)
    preds = [v.label for v in verdicts]
    truths = [s.label for s in targets]
    if all(p == promptkit.INVALID for p in preds):
        logger.warning("all %d verdicts were invalid", len(preds))

    reports = {}
    for policy in INVALID_POLICIES:
        counts, invalid = confusion(preds, truths, policy)
        reports[policy] = metrics(counts, invalid, policy)
    chosen = reports[run.invalid_policy]

    manifest = {
        "config": _config_doc(run),
        "dataset_digest": _dataset_digest_of(dataset),
        "samples": [
            {
                "id": s.id,
                "prompt_hash": b.content_hash,
                "label": v.label,
                "truth": s.label,
                "parse_mode": v.parse_mode,
            }
            for s, b, v in zip(targets, bundles, verdicts)
        ],
        "example_ids": sorted(example_ids),
        "metrics": {policy: _metrics_doc(rep) for policy, rep in reports.items()},
    }
    if out_dir is not None:
        path = Path(out_dir) / manifest_name(run)
        write_manifest(manifest, path)
        manifest["path"] = str(path)
    return chosen, manifest


def _dataset_digest_of(dataset: Dataset) -> str:
    from .scenario import dataset_to_jsonl

    return hashlib.sha256(dataset_to_jsonl(dataset).encode("utf-8")).hexdigest()


def manifest_name(run: RunConfig) -> str:
    agent = run.agent
    if agent == agents.COIN_FLIP:
        agent = f"{agent}{run.coin_seed}"
    return f"{run.paradigm}_{run.variant}_{agent}.json"


def write_manifest(manifest: dict, path: "str | Path") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def run_hybrid_experiment(
    run: RunConfig,
    model: detectors.DetectorModel,
    dataset: Dataset | None = None,
    cache: "agents.ResponseCache | None" = None,
    out_dir: "str | Path | None" = None,
    use_reference_selector: bool = False,
) -> tuple[MetricsReport, dict]:
    """Hybrid pipeline: per-sample sensor selection gates the detector score.

    The hybrid cutoff is calibrated on the validation split with the
    reference selector; test-time selections come from the agent (or the
    reference selector directly when use_reference_selector is set).
    """
    if dataset is None:
        dataset = load_dataset_dir(run.data_dir)
    if model.threshold is None:
        raise GridSigmaError("hybrid needs a calibrated detector model")
    tau_h = detectors.calibrate_hybrid_threshold(
        model, dataset.split_samples("validation"), dataset.stats, m=run.m_select
    )
    agent = run.agent_kind()
    targets = dataset.split_samples("test")
    preds: list[str] = []
    selections: list[detectors.FeatureSelection] = []
    for s in targets:
        if use_reference_selector:
            sel = detectors.reference_selector(
                zscores(s.features, dataset.stats), run.m_select, sample_id=s.id
            )
        else:
            sel = detectors.llm_select_features(
                s,
                dataset.stats,
                dataset.layout,
                agent,
                run.endpoint,
                cache,
                m=run.m_select,
                decimals=run.selection_decimals,
            )
        selections.append(sel)
        preds.append(detectors.hybrid_detect(model, sel, tau_h, s.features))
    truths = [s.label for s in targets]
    counts, invalid = confusion(preds, truths, run.invalid_policy)
    report = metrics(counts, invalid, run.invalid_policy)
    manifest = {
        "config": _config_doc(
            run,
            {
                "selector": "reference_topz" if use_reference_selector else run.agent,
                "tau_hybrid": tau_h,
            },
        ),
        "dataset_digest": _dataset_digest_of(dataset),
        "samples": [
            {
                "id": s.id,
                "label": p,
                "truth": s.label,
                "selection": list(sel.ranked),
                "selection_source": sel.source,
            }
            for s, p, sel in zip(targets, preds, selections)
        ],
        "metrics": {run.invalid_policy: _metrics_doc(report)},
    }
    if out_dir is not None:
        selector = "reference_topz" if use_reference_selector else run.agent
        path = Path(out_dir) / f"hybrid_{selector}.json"
        write_manifest(manifest, path)
        manifest["path"] = str(path)
    return report, manifest


def run_detector_experiment(
    model: detectors.DetectorModel,
    dataset: Dataset,
    out_dir: "str | Path | None" = None,
) -> tuple[MetricsReport, dict]:
    """Standalone detector scored on the test split."""
    targets = dataset.split_samples("test")
    preds = [detectors.detect(model, s.features) for s in targets]
    truths = [s.label for s in targets]
    counts, invalid = confusion(preds, truths, AS_WRONG)
    report = metrics(counts, invalid, AS_WRONG)
    manifest = {
        "config": {"detector": "autoencoder", "threshold": model.threshold,
                   "train_seed": model.train_seed},
        "dataset_digest": _dataset_digest_of(dataset),
        "samples": [
            {"id": s.id, "label": p, "truth": s.label}
            for s, p in zip(targets, preds)
        ],
        "metrics": {AS_WRONG: _metrics_doc(report)},
    }
    if out_dir is not None:
        path = Path(out_dir) / "dl_detector.json"
        write_manifest(manifest, path)
        manifest["path"] = str(path)
    return report, manifest


# --------------------------------------------------------------------------
# Report tables

VARIANT_LABELS = {
    promptkit.VARIANT_VALUE: "Value",
    promptkit.VARIANT_MEAN_STD_VALUE: "Mean-Std-Value",
    promptkit.VARIANT_MEAN_STD_VALUE_Z: "Mean-Std-Value-Z",
    promptkit.VARIANT_Z_ONLY: "Z_score",
}

PARADIGM_LABELS = {
    promptkit.ZERO_SHOT: "Zero-shot",
    promptkit.FEW_SHOT: "Few-shot",
    promptkit.ICL: "ICL",
    promptkit.FINETUNE_EXPORT: "Fine-tuned",
    promptkit.HYBRID_SELECT: "Hybrid",
}

_ROW_ORDER = [
    "Value",
    "Mean-Std-Value",
    "Mean-Std-Value-Z",
    "Z_score",
    "Zero-shot",
    "Few-shot",
    "ICL",
    "Fine-tuned",
    "Hybrid",
    "Traditional DL",
    "LLM + DL",
]

_COLUMNS = ["Configuration", "Accuracy", "Recall", "Precision", "F1-score"]


def _pct(value: float | None) -> str:
    return "n/a" if value is None else f"{100.0 * value:.1f}%"


def _metric_row(report: MetricsReport) -> list[float | None]:
    return [report.accuracy, report.recall, report.precision, report.f1]


def ablation_table(
    reports: list[tuple[str, MetricsReport]],
    fmt: str = "text",
    with_lift: bool = False,
) -> str:
    """Rows of {configuration, accuracy, recall, precision, f1}.

    Rows follow the canonical order when their labels are known. With
    with_lift, a relative-delta row (last vs first) is appended, as in the
    traditional-vs-hybrid comparison. fmt: text | md | json.
    """
    labels = [label for label, _ in reports]
    if len(set(labels)) != len(labels):
        raise GridSigmaError("duplicate configuration rows")

    def order_key(item):
        label = item[0]
        return (_ROW_ORDER.index(label) if label in _ROW_ORDER else len(_ROW_ORDER),)

    ordered = sorted(reports, key=order_key)
    rows: list[tuple[str, list[float | None]]] = [
        (label, _metric_row(rep)) for label, rep in ordered
    ]
    lift_row: list[float | None] | None = None
    if with_lift:
        if len(rows) < 2:
            raise GridSigmaError("lift row needs at least two reports")
        old, new = rows[0][1], rows[-1][1]
        lift_row = [
            None if (a is None or b in (None, 0)) else lift(a, b)
            for a, b in zip(new, old)
        ]

    if fmt == "json":
        doc = {
            "columns": _COLUMNS,
            "rows": [
                {"configuration": label, "accuracy": m[0], "recall": m[1],
                 "precision": m[2], "f1": m[3]}
                for label, m in rows
            ],
        }
        if lift_row is not None:
            doc["lift"] = {
                "configuration": "Performance lift",
                "accuracy": lift_row[0],
                "recall": lift_row[1],
                "precision": lift_row[2],
                "f1": lift_row[3],
            }
        return json.dumps(doc, indent=2) + "\n"

    cells = [[label] + [_pct(v) for v in m] for label, m in rows]
    if lift_row is not None:
        cells.append(
            ["Performance lift"]
            + ["n/a" if v is None else f"{100.0 * v:.2f}%" for v in lift_row]
        )
    widths = [
        max(len(_COLUMNS[c]), max(len(row[c]) for row in cells))
        for c in range(len(_COLUMNS))
    ]
    if fmt == "md":
        head = "| " + " | ".join(
            _COLUMNS[c].ljust(widths[c]) for c in range(len(_COLUMNS))
        ) + " |"
        sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        body = [
            "| " + " | ".join(row[c].ljust(widths[c]) for c in range(len(_COLUMNS)))
            + " |"
            for row in cells
        ]
        return "\n".join([head, sep] + body) + "\n"
    if fmt != "text":
        raise GridSigmaError(f"unknown table format {fmt!r}")
    head = "  ".join(_COLUMNS[c].ljust(widths[c]) for c in range(len(_COLUMNS)))
    rule = "-" * len(head.rstrip())
    body = [
        "  ".join(row[c].ljust(widths[c]) for c in range(len(_COLUMNS))).rstrip()
        for row in cells
    ]
    return "\n".join([head.rstrip(), rule] + body) + "\n"


def report_from_manifest(doc: dict, policy: str = AS_WRONG) -> MetricsReport:
    m = doc["metrics"].get(policy) or next(iter(doc["metrics"].values()))
    counts = ConfusionCounts(**m["counts"])
    return MetricsReport(
        accuracy=m["accuracy"],
        recall=m["recall"],
        precision=m["precision"],
        f1=m["f1"],
        counts=counts,
        invalid_count=m.get("invalid_count", 0),
        invalid_policy=policy,
    )
