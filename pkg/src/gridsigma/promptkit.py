"""Prompt rendering, example selection, and agent-output parsing.

Rendering is byte-deterministic: the same (sample, stats, config, examples)
always produces the same text and content hash. The value-block table
grammar defined here is also what the deterministic reference agent parses.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .errors import PromptError
from .grid import FeatureLayout
from .scenario import ANOMALY, NORMAL, FeatureStats, Sample, zscores

ZERO_SHOT = "zero_shot"
FEW_SHOT = "few_shot"
ICL = "icl"
FINETUNE_EXPORT = "finetune_export"
HYBRID_SELECT = "hybrid_select"
PARADIGMS = (ZERO_SHOT, FEW_SHOT, ICL, FINETUNE_EXPORT, HYBRID_SELECT)

VARIANT_VALUE = "value"
VARIANT_MEAN_STD_VALUE = "mean_std_value"
VARIANT_MEAN_STD_VALUE_Z = "mean_std_value_z"
VARIANT_Z_ONLY = "z_only"
VARIANTS = (
    VARIANT_VALUE,
    VARIANT_MEAN_STD_VALUE,
    VARIANT_MEAN_STD_VALUE_Z,
    VARIANT_Z_ONLY,
)

_VARIANT_COLUMNS = {
    VARIANT_VALUE: ("value",),
    VARIANT_MEAN_STD_VALUE: ("value", "mean", "std"),
    VARIANT_MEAN_STD_VALUE_Z: ("value", "mean", "std", "|z|"),
    VARIANT_Z_ONLY: ("|z|",),
}

_VARIANT_DESCRIPTION = {
    VARIANT_VALUE: "the current value",
    VARIANT_MEAN_STD_VALUE: "value, mean, and std",
    VARIANT_MEAN_STD_VALUE_Z: "value, mean, std, and absolute z-score",
    VARIANT_Z_ONLY: "the absolute z-score",
}

_GROUP_TITLES = {
    "p_inj": ("P", "active power injections"),
    "q_inj": ("Q", "reactive power injections"),
    "p_flow": ("Pf", "active line flows"),
    "q_flow": ("Qf", "reactive line flows"),
    "v_mag": ("V", "voltage magnitudes"),
}

_DEFAULT_K = {ZERO_SHOT: 0, FEW_SHOT: 2, ICL: 10, FINETUNE_EXPORT: 0, HYBRID_SELECT: 0}


@dataclass(frozen=True)
class PromptConfig:
    paradigm: str = ZERO_SHOT
    variant: str = VARIANT_Z_ONLY
    k_examples: int = -1  # -1 resolves to the paradigm default
    example_seed: int = 7
    decimals: int = 4
    m_select: int = 8  # sensors requested by hybrid selection prompts
    threshold: float = 3.0

    def __post_init__(self):
        if self.paradigm not in PARADIGMS:
            raise PromptError(f"unknown paradigm {self.paradigm!r}")
        if self.variant not in VARIANTS:
            raise PromptError(f"unknown variant {self.variant!r}")
        if self.k_examples == -1:
            object.__setattr__(self, "k_examples", _DEFAULT_K[self.paradigm])
        k = self.k_examples
        if self.paradigm in (ZERO_SHOT, FINETUNE_EXPORT, HYBRID_SELECT) and k != 0:
            raise PromptError(f"{self.paradigm} requires k_examples = 0, got {k}")
        if self.paradigm == FEW_SHOT and k != 2:
            raise PromptError(f"few_shot requires k_examples = 2, got {k}")
        if self.paradigm == ICL and k not in (10, 5):
            raise PromptError(f"icl requires k_examples in (10, 5), got {k}")


@dataclass(frozen=True)
class PromptBundle:
    text: str
    sample_id: int
    config: PromptConfig
    example_ids: tuple[int, ...]
    content_hash: str


INVALID = "invalid"
STRICT = "strict"
LENIENT = "lenient"
FAILED = "failed"


@dataclass(frozen=True)
class AgentVerdict:
    label: str  # normal | anomaly | invalid
    rationale: str
    raw: str
    parse_mode: str  # strict | lenient | failed


# --------------------------------------------------------------------------
# Value block


def render_value_block(
    sample: Sample,
    stats: FeatureStats,
    layout: FeatureLayout,
    variant: str,
    decimals: int = 4,
) -> str:
    """Plain-text sensor table, grouped by sensor kind, columns per variant."""
    if variant not in _VARIANT_COLUMNS:
        raise PromptError(f"unknown variant {variant!r}")
    if len(stats.mean) != len(layout) or len(sample.features) != len(layout):
        raise PromptError("sample/stats length does not match layout")
    columns = _VARIANT_COLUMNS[variant]
    z = np.abs(zscores(sample.features, stats))
    std_floored = np.maximum(stats.std, 1e-12)

    cell_sources = {
        "value": sample.features,
        "mean": stats.mean,
        "std": std_floored,
        "|z|": z,
    }

    groups: list[tuple[str, list[int]]] = []
    for i, entry in enumerate(layout.entries):
        if groups and groups[-1][0] == entry.kind:
            groups[-1][1].append(i)
        else:
            groups.append((entry.kind, [i]))

    name_width = max(len("sensor"), max(len(e.name) for e in layout.entries))
    col_cells = {
        c: [f"{cell_sources[c][i]:.{decimals}f}" for i in range(len(layout))]
        for c in columns
    }
    col_width = {
        c: max(len(c), max(len(v) for v in col_cells[c])) for c in columns
    }

    lines: list[str] = []
    for gi, (kind, indices) in enumerate(groups):
        tag, title = _GROUP_TITLES[kind]
        if gi > 0:
            lines.append("")
        lines.append(f"[{tag}] {title}")
        header = "sensor".ljust(name_width)
        for c in columns:
            header += "  " + c.rjust(col_width[c])
        lines.append(header)
        for i in indices:
            row = layout.entries[i].name.ljust(name_width)
            for c in columns:
                row += "  " + col_cells[c][i].rjust(col_width[c])
            lines.append(row)
    return "\n".join(lines)


@dataclass(frozen=True)
class ValueBlockTable:
    columns: tuple[str, ...]
    names: tuple[str, ...]
    cells: dict  # column -> tuple[float, ...]


def parse_value_block(text: str) -> ValueBlockTable:
    """Parse a rendered value block back into named sensor rows.

    Grammar: group header lines start with '[', the column header line
    starts with 'sensor', data rows are whitespace-separated (name then one
    float per column). Raises PromptError on anything else.
    """
    columns: tuple[str, ...] | None = None
    names: list[str] = []
    cells: list[list[float]] = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("["):
            continue
        tokens = stripped.split()
        if tokens[0] == "sensor":
            cols = tuple(tokens[1:])
            if columns is None:
                columns = cols
            elif cols != columns:
                raise PromptError("inconsistent column headers across groups")
            continue
        if columns is None:
            raise PromptError(f"data row before any column header: {stripped!r}")
        if len(tokens) != 1 + len(columns):
            raise PromptError(f"malformed table row: {stripped!r}")
        try:
            values = [float(t) for t in tokens[1:]]
        except ValueError:
            raise PromptError(f"non-numeric cell in row: {stripped!r}") from None
        names.append(tokens[0])
        cells.append(values)
    if columns is None or not names:
        raise PromptError("no table found in value block")
    by_col = {
        c: tuple(row[j] for row in cells) for j, c in enumerate(columns)
    }
    return ValueBlockTable(columns=columns, names=tuple(names), cells=by_col)


# --------------------------------------------------------------------------
# Prompt assembly

_ROLE_CLASSIFY = (
    "**Role Instruction**: You are a power system analyst. Your task is to "
    "determine whether the following sample indicates an anomaly."
)
_ROLE_SELECT = (
    "**Role Instruction**: You are a power system analyst. Your task is to "
    "identify the sensors most likely to be compromised in the following sample."
)

VALUE_BLOCK_HEADING = "**Value Block**:"
OUTPUT_FORMAT_HEADING = "**Output Format**:"


def _system_context(n_features: int) -> str:
    return (
        "**System Context**: The dataset includes real/reactive power "
        "injections (P_i, Q_i), line power flows (P_ij, Q_ij), and bus "
        f"voltage magnitudes (V), with {n_features} features per sample."
    )


def format_threshold(threshold: float) -> str:
    s = f"{threshold:g}"
    return s if ("." in s or "e" in s) else s + ".0"


def _anomaly_rule(n_features: int, variant: str, threshold: float) -> str:
    thr = format_threshold(threshold)
    return "\n".join(
        [
            "**Anomaly Rule**: 3-sigma",
            f"- You will receive {n_features} sensor values.",
            "- If the mean, std, or z-score is not provided, you must infer "
            "them from the available values before making a decision.",
            "- Decision procedure:",
            "  - For each measurement i, compute z-score = (value - mean) / "
            "std, where std := max(std, 1e-12).",
            f'  - Label as "anomaly" if at least one measurement satisfies '
            f'|z| >= {thr}; otherwise, label as "normal".',
            f"  - The Value Block below lists {_VARIANT_DESCRIPTION[variant]} "
            "for each measurement, grouped by sensor category.",
        ]
    )


_OUTPUT_FORMAT_CLASSIFY = "\n".join(
    [
        "**Output Format**: (must be exactly two lines):",
        "1) Label: normal OR anomaly (1 word only)",
        "2) Brief explanation for the classification",
        "**Answer**:",
    ]
)


def _output_format_select(m: int) -> str:
    return "\n".join(
        [
            f"**Output Format**: (must be at most {m} lines): list the names "
            f"of up to {m} suspicious sensors, one sensor name per line, most "
            "suspicious first.",
            "**Answer**:",
        ]
    )


def render_prompt(
    sample: Sample,
    stats: FeatureStats,
    config: PromptConfig,
    examples: list[Sample],
    layout: FeatureLayout,
) -> PromptBundle:
    """Assemble the full prompt in fixed block order."""
    if len(examples) != config.k_examples:
        raise PromptError(
            f"{config.paradigm} expects {config.k_examples} examples, "
            f"got {len(examples)}"
        )
    n = len(layout)
    parts = [
        _ROLE_SELECT if config.paradigm == HYBRID_SELECT else _ROLE_CLASSIFY,
        _system_context(n),
        _anomaly_rule(n, config.variant, config.threshold),
    ]
    if examples:
        ex_lines = ["**Examples**:"]
        for num, ex in enumerate(examples, start=1):
            ex_lines.append(f"Example {num}:")
            ex_lines.append(
                render_value_block(ex, stats, layout, config.variant, config.decimals)
            )
            ex_lines.append(f"Label: {ex.label}")
            ex_lines.append("")
        parts.append("\n".join(ex_lines).rstrip())
    parts.append(VALUE_BLOCK_HEADING)
    parts.append(
        render_value_block(sample, stats, layout, config.variant, config.decimals)
    )
    if config.paradigm == HYBRID_SELECT:
        parts.append(_output_format_select(config.m_select))
    else:
        parts.append(_OUTPUT_FORMAT_CLASSIFY)
    text = "\n".join(parts) + "\n"
    return PromptBundle(
        text=text,
        sample_id=sample.id,
        config=config,
        example_ids=tuple(ex.id for ex in examples),
        content_hash=hashlib.sha256(text.encode("utf-8")).hexdigest(),
    )


def target_value_block(prompt_text: str) -> str:
    """Extract the target value block (after the last Value Block heading)."""
    start = prompt_text.rfind(VALUE_BLOCK_HEADING)
    if start == -1:
        raise PromptError("prompt has no Value Block heading")
    start += len(VALUE_BLOCK_HEADING)
    end = prompt_text.find(OUTPUT_FORMAT_HEADING, start)
    if end == -1:
        raise PromptError("prompt has no Output Format heading")
    return prompt_text[start:end]


# --------------------------------------------------------------------------
# Example selection


def select_examples(
    train: list[Sample],
    config: PromptConfig,
    stats: FeatureStats,
) -> list[Sample]:
    """Pick labeled exemplars from the train split, deterministically.

    Few-shot: one normal and one anomalous. ICL: k/2 normal plus anomalous
    cases stratified across max-|z| quartiles so anomaly strengths vary.
    Returned interleaved (normal, anomaly, ...).
    """
    k = config.k_examples
    if k == 0:
        return []
    normals = [s for s in train if s.label == NORMAL]
    anomalies = [s for s in train if s.label == ANOMALY]
    n_normal = k // 2
    n_anomalous = k - n_normal
    if len(normals) < n_normal:
        raise PromptError(
            f"train split has {len(normals)} normal samples, need {n_normal}"
        )
    if len(anomalies) < n_anomalous:
        raise PromptError(
            f"train split has {len(anomalies)} anomalous samples, need {n_anomalous}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([config.example_seed, 4]))
    picked_normal = [
        normals[i] for i in rng.choice(len(normals), size=n_normal, replace=False)
    ]

    # Rank anomalies by max |z| and spread picks across four strength bins.
    strength = [float(np.max(np.abs(zscores(s.features, stats)))) for s in anomalies]
    order = sorted(range(len(anomalies)), key=lambda i: (strength[i], anomalies[i].id))
    bins = [list(b) for b in np.array_split(np.asarray(order), 4)]
    per_bin = [n_anomalous // 4] * 4
    for i in range(n_anomalous % 4):
        per_bin[i] += 1
    picked_anomalous: list[Sample] = []
    for b, want in zip(bins, per_bin):
        if want == 0:
            continue
        if len(b) < want:
            raise PromptError("not enough anomalous samples to stratify")
        chosen = rng.choice(len(b), size=want, replace=False)
        picked_anomalous.extend(anomalies[b[int(c)]] for c in sorted(chosen))

    out: list[Sample] = []
    for i in range(max(n_normal, n_anomalous)):
        if i < n_normal:
            out.append(picked_normal[i])
        if i < n_anomalous:
            out.append(picked_anomalous[i])
    return out


# --------------------------------------------------------------------------
# Verdict parsing

_LABEL_LINE = re.compile(
    r"^(?:1\))?\s*(?:label\s*:)?\s*(normal|anomaly)\s*[.!]?$", re.IGNORECASE
)
_NORMAL_TOKEN = re.compile(r"\bnormal\b", re.IGNORECASE)
_ANOMALY_TOKEN = re.compile(r"\banomaly\b", re.IGNORECASE)


def parse_verdict(raw: str) -> AgentVerdict:
    """Parse agent output against the two-line schema.

    Strict: exactly two non-empty lines, line 1 (after an optional
    "Label:" / "1)" prefix, case-insensitive) is "normal" or "anomaly".
    Lenient fallback: the first line containing exactly one of the two
    tokens decides. Anything else is an invalid verdict.
    """
    lines = [line.strip() for line in raw.splitlines() if line.strip()]
    if len(lines) == 2:
        match = _LABEL_LINE.match(lines[0])
        if match:
            return AgentVerdict(
                label=match.group(1).lower(),
                rationale=lines[1],
                raw=raw,
                parse_mode=STRICT,
            )
    for i, line in enumerate(lines):
        has_normal = bool(_NORMAL_TOKEN.search(line))
        has_anomaly = bool(_ANOMALY_TOKEN.search(line))
        if has_normal != has_anomaly:
            rationale = " ".join(lines[i + 1 :])
            return AgentVerdict(
                label=NORMAL if has_normal else ANOMALY,
                rationale=rationale,
                raw=raw,
                parse_mode=LENIENT,
            )
    return AgentVerdict(label=INVALID, rationale="", raw=raw, parse_mode=FAILED)
