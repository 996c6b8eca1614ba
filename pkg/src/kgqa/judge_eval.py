"""Answer-quality judging with an external LLM and system comparison.

A judge model scores each answer against the reference on five dimensions
(0.0-1.0): similarity to reference, fluency, coherence, relevance to
question and factual accuracy. Two systems are compared by judging both
answers per record independently (the judge never sees which system
produced an answer) and reporting per-dimension mean improvements in
absolute percentage points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import prompt_assets
from .eval_metrics import AlpacaRecord
from .llm_gateway import (
    ChatRequest,
    GatewayError,
    LlmGateway,
    ParseError,
    _first_json_value,
    clamp_confidence,
)

logger = logging.getLogger(__name__)

DIMENSIONS = (
    "similarity_to_reference",
    "fluency",
    "coherence",
    "relevance_to_question",
    "factual_accuracy",
)

DIMENSION_LABELS = {
    "similarity_to_reference": "Similarity to Reference",
    "fluency": "Fluency",
    "coherence": "Coherence",
    "relevance_to_question": "Relevance to Question",
    "factual_accuracy": "Factual Accuracy",
}

OVERALL_LABEL = "Overall Average Score"


@dataclass(frozen=True)
class DimensionScores:
    similarity_to_reference: float
    fluency: float
    coherence: float
    relevance_to_question: float
    factual_accuracy: float
    clamped_dimensions: tuple[str, ...] = ()

    @property
    def average(self) -> float:
        return sum(self.as_dict().values()) / len(DIMENSIONS)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in DIMENSIONS}


@dataclass(frozen=True)
class JudgeVerdict:
    scores: DimensionScores
    rationale: str
    raw_reply: str


def judge_answer(
    question: str,
    reference: str,
    answer: str,
    judge_gateway: LlmGateway,
    prompt_template: str = prompt_assets.JUDGE_RUBRIC,
    model: str = "default",
    temperature: float = 0.0,
) -> JudgeVerdict:
    """Score one answer on the five-dimension rubric.

    Raises ``ParseError`` when fewer than five scores are recoverable from
    the reply; gateway failures propagate. Out-of-range scores are clamped
    into [0, 1] and flagged on the verdict.
    """
    for label, value in (
        ("question", question),
        ("reference", reference),
        ("answer", answer),
    ):
        if not value.strip():
            raise ValueError(f"{label} must be non-empty")
    prompt = prompt_assets.render(
        prompt_template, question=question, reference=reference, answer=answer
    )
    reply = judge_gateway.chat(
        ChatRequest.from_pairs(
            [("user", prompt)], model=model, temperature=temperature
        )
    )
    value = _first_json_value(reply.content)
    if not isinstance(value, dict):
        raise ParseError("judge reply is not a JSON object")
    raw_scores: dict[str, float] = {}
    clamped: list[str] = []
    for name in DIMENSIONS:
        if name not in value or not isinstance(value[name], (int, float)):
            raise ParseError(f"judge reply is missing a numeric {name!r} score")
        score, was_clamped = clamp_confidence(float(value[name]))
        raw_scores[name] = score
        if was_clamped:
            clamped.append(name)
            logger.info("judge score %s=%s clamped", name, value[name])
    scores = DimensionScores(clamped_dimensions=tuple(clamped), **raw_scores)
    return JudgeVerdict(
        scores=scores,
        rationale=str(value.get("rationale", "")),
        raw_reply=reply.content,
    )


@dataclass
class ComparisonReport:
    system_a_label: str
    system_b_label: str
    means_a: dict[str, float]
    means_b: dict[str, float]
    improvements: dict[str, float]  # absolute percentage points
    overall_a: float
    overall_b: float
    overall_improvement: float
    judged_count: int
    failed_count: int
    failures: list[str] = field(default_factory=list)

    def improvement_strings(self) -> dict[str, str]:
        formatted = {
            name: format_improvement(value)
            for name, value in self.improvements.items()
        }
        formatted[OVERALL_LABEL] = format_improvement(self.overall_improvement)
        return formatted

    def to_dict(self) -> dict:
        return {
            "system_a": self.system_a_label,
            "system_b": self.system_b_label,
            "means_a": self.means_a,
            "means_b": self.means_b,
            "improvements": self.improvements,
            "overall_a": self.overall_a,
            "overall_b": self.overall_b,
            "overall_improvement": self.overall_improvement,
            "judged_count": self.judged_count,
            "failed_count": self.failed_count,
            "failures": self.failures,
        }


def format_improvement(points: float) -> str:
    return f"{points:+.2f}%"


def compare_systems(
    records: Sequence[AlpacaRecord],
    system_a: Callable[[str], str],
    system_b: Callable[[str], str],
    judge_gateway: LlmGateway,
    system_a_label: str = "System A",
    system_b_label: str = "System B",
    model: str = "default",
) -> ComparisonReport:
    """Judge both systems on every record and aggregate dimension means.

    Each answer is judged in its own call, blind to system identity. A
    record where either system or either judge call fails is excluded from
    the means and counted.
    """
    if not records:
        raise ValueError("records must be non-empty")
    scores_a: list[DimensionScores] = []
    scores_b: list[DimensionScores] = []
    failures: list[str] = []
    for index, record in enumerate(records):
        prompt = record.prompt()
        try:
            answer_a = system_a(prompt)
            answer_b = system_b(prompt)
            verdict_a = judge_answer(
                prompt, record.output, answer_a, judge_gateway, model=model
            )
            verdict_b = judge_answer(
                prompt, record.output, answer_b, judge_gateway, model=model
            )
        except (GatewayError, ValueError) as exc:
            failures.append(f"record {index}: {exc}")
            logger.warning("record %d excluded: %s", index, exc)
            continue
        scores_a.append(verdict_a.scores)
        scores_b.append(verdict_b.scores)

    def dimension_means(scoreset: list[DimensionScores]) -> dict[str, float]:
        if not scoreset:
            return {name: 0.0 for name in DIMENSIONS}
        return {
            name: sum(s.as_dict()[name] for s in scoreset) / len(scoreset)
            for name in DIMENSIONS
        }

    means_a = dimension_means(scores_a)
    means_b = dimension_means(scores_b)
    improvements = {
        name: (means_b[name] - means_a[name]) * 100.0 for name in DIMENSIONS
    }
    overall_a = sum(means_a.values()) / len(DIMENSIONS)
    overall_b = sum(means_b.values()) / len(DIMENSIONS)
    return ComparisonReport(
        system_a_label=system_a_label,
        system_b_label=system_b_label,
        means_a=means_a,
        means_b=means_b,
        improvements=improvements,
        overall_a=overall_a,
        overall_b=overall_b,
        overall_improvement=(overall_b - overall_a) * 100.0,
        judged_count=len(scores_a),
        failed_count=len(failures),
        failures=failures,
    )


def render_comparison_table(report: ComparisonReport) -> str:
    """Plain-text comparison table: one row per dimension plus the overall
    average, in the rubric's order."""
    header = ("Metric", report.system_a_label, report.system_b_label, "Improvement")
    rows = [header]
    for name in DIMENSIONS:
        rows.append(
            (
                DIMENSION_LABELS[name],
                f"{report.means_a[name]:.4f}",
                f"{report.means_b[name]:.4f}",
                format_improvement(report.improvements[name]),
            )
        )
    rows.append(
        (
            OVERALL_LABEL,
            f"{report.overall_a:.4f}",
            f"{report.overall_b:.4f}",
            format_improvement(report.overall_improvement),
        )
    )
    widths = [max(len(row[col]) for row in rows) for col in range(4)]
    lines = [
        "  ".join(cell.ljust(widths[col]) for col, cell in enumerate(row)).rstrip()
        for row in rows
    ]
    return "\n".join(lines)
