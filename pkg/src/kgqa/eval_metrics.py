"""Text-generation metrics: BLEU-4, ROUGE-1/2 and ROUGE-L.

BLEU-4 combines clipped n-gram precisions for n=1..4 with the brevity
penalty BP = min(1, exp(1 - r/c)):

    score = BP * exp(sum(ln p_n) / 4) * 100

ROUGE-1/2 divide clipped n-gram overlap by the reference n-gram count;
ROUGE-L is the F-measure (beta=1) of LCS-based recall and precision. The
tokenizer lowercases, keeps maximal alphanumeric runs as tokens and emits
every other non-whitespace character as its own token; its version is
recorded in every report since scores are only comparable within one
tokenizer.
"""

from __future__ import annotations

import json
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

TOKENIZER_VERSION = "alnum-runs-v1"

SMOOTHING_NONE = "none"
SMOOTHING_EPSILON = "epsilon"
EPSILON = 1e-9


class DatasetError(Exception):
    """Raised when an instruction dataset file cannot be parsed."""


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    source_text: str

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize(text: str) -> TokenSequence:
    """Lowercase; alphanumeric runs become tokens, every other
    non-whitespace character is a single-character token."""
    tokens: list[str] = []
    run: list[str] = []
    for ch in text.lower():
        if ch.isalnum():
            run.append(ch)
            continue
        if run:
            tokens.append("".join(run))
            run = []
        if not ch.isspace():
            tokens.append(ch)
    if run:
        tokens.append("".join(run))
    return TokenSequence(tokens=tuple(tokens), source_text=text)


def _as_tokens(value: TokenSequence | str) -> TokenSequence:
    return value if isinstance(value, TokenSequence) else tokenize(value)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)
    )


def modified_precision(
    cand: TokenSequence | str, ref: TokenSequence | str, n: int
) -> tuple[int, int]:
    """Clipped and total n-gram counts of the candidate against the
    reference: each candidate n-gram counts at most as often as it appears
    in the reference."""
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    cand, ref = _as_tokens(cand), _as_tokens(ref)
    cand_counts = _ngrams(cand.tokens, n)
    ref_counts = _ngrams(ref.tokens, n)
    total = max(0, len(cand.tokens) - n + 1)
    clipped = sum(
        min(count, ref_counts[gram]) for gram, count in cand_counts.items()
    )
    return clipped, total


@dataclass(frozen=True)
class BleuComponents:
    p: tuple[float, float, float, float]
    bp: float
    c_cand: int
    r_ref: int
    score: float


def brevity_penalty(c_cand: int, r_ref: int) -> float:
    """min(1, exp(1 - r/c)); 0 for an empty candidate by convention."""
    if c_cand == 0:
        return 0.0
    return min(1.0, math.exp(1.0 - r_ref / c_cand))


def bleu_from_components(
    precisions: Sequence[float], bp: float
) -> float:
    """Combine n-gram precisions and the brevity penalty into the 0-100
    score: bp * exp(mean of ln p_n) * 100; zero when any precision is 0."""
    if any(p <= 0.0 for p in precisions):
        return 0.0
    log_mean = sum(math.log(p) for p in precisions) / len(precisions)
    return bp * math.exp(log_mean) * 100.0


def bleu4(
    cand: TokenSequence | str,
    ref: TokenSequence | str,
    smoothing: str = SMOOTHING_NONE,
) -> BleuComponents:
    """Sentence-level BLEU-4 against a single reference.

    Unsmoothed mode scores 0 whenever any precision is 0 (including a
    candidate too short to have n-grams); epsilon mode substitutes 1e-9
    for zero precisions so a score remains computable.
    """
    if smoothing not in (SMOOTHING_NONE, SMOOTHING_EPSILON):
        raise ValueError(f"unknown smoothing mode {smoothing!r}")
    cand, ref = _as_tokens(cand), _as_tokens(ref)
    precisions: list[float] = []
    for n in range(1, 5):
        clipped, total = modified_precision(cand, ref, n)
        if total > 0 and clipped > 0:
            precisions.append(clipped / total)
        elif smoothing == SMOOTHING_EPSILON:
            precisions.append(EPSILON)
        else:
            precisions.append(0.0)
    bp = brevity_penalty(len(cand.tokens), len(ref.tokens))
    score = bleu_from_components(precisions, bp)
    return BleuComponents(
        p=tuple(precisions),
        bp=bp,
        c_cand=len(cand.tokens),
        r_ref=len(ref.tokens),
        score=score,
    )


def rouge_n(
    cand: TokenSequence | str, ref: TokenSequence | str, n: int
) -> float:
    """Clipped n-gram overlap divided by the reference n-gram count."""
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    cand, ref = _as_tokens(cand), _as_tokens(ref)
    ref_counts = _ngrams(ref.tokens, n)
    total_ref = sum(ref_counts.values())
    if total_ref == 0:
        return 0.0
    cand_counts = _ngrams(cand.tokens, n)
    overlap = sum(
        min(cand_counts[gram], count) for gram, count in ref_counts.items()
    )
    return overlap / total_ref


def lcs_length(x: TokenSequence | str, y: TokenSequence | str) -> int:
    """Longest common subsequence length via dynamic programming."""
    a, b = _as_tokens(x).tokens, _as_tokens(y).tokens
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0] * (len(b) + 1)
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current[j] = previous[j - 1] + 1
            else:
                current[j] = max(previous[j], current[j - 1])
        previous = current
    return previous[-1]


@dataclass(frozen=True)
class RougeScores:
    rouge1: float
    rouge2: float
    rougeL: float
    lcs_length: int
    r_lcs: float
    p_lcs: float
    beta: float = 1.0


def rouge_l(cand: TokenSequence | str, ref: TokenSequence | str) -> RougeScores:
    """LCS F-measure with beta=1; the candidate is X, the reference is Y."""
    cand, ref = _as_tokens(cand), _as_tokens(ref)
    length = lcs_length(cand, ref)
    r = length / len(ref.tokens) if ref.tokens else 0.0
    p = length / len(cand.tokens) if cand.tokens else 0.0
    f = (2.0 * r * p / (r + p)) if (r + p) > 0 else 0.0
    return RougeScores(
        rouge1=rouge_n(cand, ref, 1),
        rouge2=rouge_n(cand, ref, 2),
        rougeL=f,
        lcs_length=length,
        r_lcs=r,
        p_lcs=p,
    )


# -- instruction datasets -------------------------------------------------


@dataclass(frozen=True)
class AlpacaRecord:
    instruction: str
    input: str = ""
    output: str = ""

    def __post_init__(self) -> None:
        if not self.instruction:
            raise ValueError("instruction must be non-empty")

    def prompt(self) -> str:
        if self.input:
            return f"{self.instruction}\n\n{self.input}"
        return self.instruction


def load_alpaca(path: str | Path) -> list[AlpacaRecord]:
    """Load an instruction dataset file: a JSON array of objects with
    instruction/input/output fields. Bad rows are reported by index."""
    try:
        rows = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    if not isinstance(rows, list):
        raise DatasetError(f"dataset {path} must be a JSON array")
    records: list[AlpacaRecord] = []
    bad: list[str] = []
    for index, row in enumerate(rows):
        try:
            records.append(
                AlpacaRecord(
                    instruction=row["instruction"],
                    input=row.get("input", "") or "",
                    output=row.get("output", "") or "",
                )
            )
        except (TypeError, KeyError, ValueError) as exc:
            bad.append(f"row {index}: {exc}")
    if bad:
        raise DatasetError(f"dataset {path} has malformed rows: " + "; ".join(bad))
    return records


@dataclass
class SampleScore:
    index: int
    bleu4: float  # 0-100
    rouge1: float  # 0-1
    rouge2: float
    rougeL: float
    error: str | None = None


@dataclass
class MetricReport:
    """Corpus means (0-100 scale) with per-sample detail and throughput."""

    bleu4: float
    rouge1: float
    rouge2: float
    rougeL: float
    sample_count: int
    failed_count: int
    runtime_seconds: float
    samples_per_second: float
    smoothing: str
    tokenizer_version: str = TOKENIZER_VERSION
    per_sample: list[SampleScore] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "bleu4": self.bleu4,
            "rouge1": self.rouge1,
            "rouge2": self.rouge2,
            "rougeL": self.rougeL,
            "sample_count": self.sample_count,
            "failed_count": self.failed_count,
            "runtime_seconds": self.runtime_seconds,
            "samples_per_second": self.samples_per_second,
            "smoothing": self.smoothing,
            "tokenizer_version": self.tokenizer_version,
            "extra": self.extra,
            "per_sample": [
                {
                    "index": s.index,
                    "bleu4": s.bleu4,
                    "rouge1": s.rouge1,
                    "rouge2": s.rouge2,
                    "rougeL": s.rougeL,
                    "error": s.error,
                }
                for s in self.per_sample
            ],
        }


def evaluate_dataset(
    records: Sequence[AlpacaRecord],
    predictor: Callable[[str], str],
    smoothing: str = SMOOTHING_NONE,
) -> MetricReport:
    """Score a predictor on instruction records against their outputs.

    Sentence-level metrics are averaged arithmetically over scored samples
    and reported on the 0-100 scale. Predictor failures are excluded from
    the means and counted.
    """
    if not records:
        raise ValueError("records must be non-empty")
    started = time.perf_counter()
    per_sample: list[SampleScore] = []
    for index, record in enumerate(records):
        try:
            prediction = predictor(record.prompt())
        except Exception as exc:  # predictor failures are data, not crashes
            per_sample.append(
                SampleScore(index, 0.0, 0.0, 0.0, 0.0, error=str(exc))
            )
            continue
        cand = tokenize(prediction)
        ref = tokenize(record.output)
        bleu = bleu4(cand, ref, smoothing=smoothing)
        rouge = rouge_l(cand, ref)
        per_sample.append(
            SampleScore(
                index=index,
                bleu4=bleu.score,
                rouge1=rouge.rouge1,
                rouge2=rouge.rouge2,
                rougeL=rouge.rougeL,
            )
        )
    runtime = time.perf_counter() - started
    scored = [s for s in per_sample if s.error is None]
    count = len(scored)

    def mean(values: list[float]) -> float:
        return sum(values) / len(values) if values else 0.0

    return MetricReport(
        bleu4=mean([s.bleu4 for s in scored]),
        rouge1=mean([s.rouge1 for s in scored]) * 100.0,
        rouge2=mean([s.rouge2 for s in scored]) * 100.0,
        rougeL=mean([s.rougeL for s in scored]) * 100.0,
        sample_count=count,
        failed_count=len(per_sample) - count,
        runtime_seconds=runtime,
        samples_per_second=count / runtime if runtime > 0 else 0.0,
        smoothing=smoothing,
        per_sample=per_sample,
    )


def render_report_table(report: MetricReport) -> str:
    """Aligned plain-text table with the standard metric row names."""
    rows = [
        ("BLEU-4", f"{report.bleu4:.4f}"),
        ("ROUGE-1", f"{report.rouge1:.4f}"),
        ("ROUGE-2", f"{report.rouge2:.4f}"),
        ("ROUGE-L", f"{report.rougeL:.4f}"),
    ]
    if "predict_runtime" in report.extra:
        rows.append(("predict_runtime", f"{report.extra['predict_runtime']:.4f}"))
    rows.append(("runtime", f"{report.runtime_seconds:.4f}"))
    rows.append(("samples_per_second", f"{report.samples_per_second:.4f}"))
    if "steps_per_second" in report.extra:
        rows.append(("steps_per_second", f"{report.extra['steps_per_second']:.4f}"))
    width = max(len(name) for name, _ in rows)
    lines = [f"{name.ljust(width)}  {value}" for name, value in rows]
    return "\n".join(lines)
