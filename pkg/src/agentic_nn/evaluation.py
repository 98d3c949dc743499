"""Judging forward outputs and turning judgements into dataset metrics.

Parse failures never escape: they come back as failed outcomes carrying the
error name, because optimisation has to keep going.
"""

from __future__ import annotations

import math
import re
from collections.abc import Sequence
from dataclasses import asdict, dataclass

from .errors import AnnError, JudgeUnparseable, MixedOutcomeKinds, RubricUnparseable, UnrecognizedVerdict
from .graph import render_prompt
from .llm import ChatRequest, Gateway
from .parsing import Verdict, extract_verdict
from . import prompts

RUBRIC_FIELDS = ("Coherence", "Engagement", "Adherence", "Creativity")


@dataclass(frozen=True)
class RubricScore:
    coherence: float
    engagement: float
    adherence: float
    creativity: float
    suggestions: str
    overall: float


@dataclass(frozen=True)
class EvalOutcome:
    kind: str  # "verdict" or "rubric"
    passed: bool
    raw_judge_text: str
    verdict: Verdict | None = None
    rubric: RubricScore | None = None
    error: str | None = None

    @property
    def score(self) -> float:
        if self.kind == "rubric":
            return self.rubric.overall if self.rubric else 0.0
        return 1.0 if self.passed else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _label(name: str) -> str:
    # tolerate list bullets and markdown bold around the label
    return rf"(?im)^[\s>*\-•#]*\**\s*{re.escape(name)}\s*\**\s*:\s*\**\s*"


def parse_rubric(text: str) -> RubricScore:
    """Read the six labelled rubric lines; scores may be bracketed or bare."""
    scores = {}
    for name in (*RUBRIC_FIELDS, "Overall Score"):
        m = re.search(_label(name) + r"\[?\s*(\d+(?:\.\d+)?)", text)
        if not m:
            raise RubricUnparseable(f"missing or non-numeric {name!r}")
        value = float(m.group(1))
        if not 0.0 <= value <= 10.0:
            raise RubricUnparseable(f"{name} score {value} outside [0, 10]")
        scores[name] = value
    m = re.search(_label("Suggestions for Improvement") + r"(.*)$", text)
    if not m:
        raise RubricUnparseable("missing 'Suggestions for Improvement'")
    suggestions = m.group(1).strip().strip("[]").strip()
    return RubricScore(
        coherence=scores["Coherence"],
        engagement=scores["Engagement"],
        adherence=scores["Adherence"],
        creativity=scores["Creativity"],
        suggestions=suggestions,
        overall=scores["Overall Score"],
    )


class Judge:
    def __init__(self, gateway: Gateway, model: str = "gpt-4o-mini", threshold: float = 7.0):
        self.gateway = gateway
        self.model = model
        self.threshold = threshold

    def _ask(self, text: str, purpose: str) -> str:
        return self.gateway.complete(
            ChatRequest(model_name=self.model, user_text=text, temperature=0.0, purpose=purpose)
        ).text

    def verify_with_ground_truth(self, problem: str, final_answer: str, solution: str) -> EvalOutcome:
        if solution is None:
            raise ValueError("verification needs a ground-truth solution")
        prompt = render_prompt(
            prompts.VERIFY, {"problem": problem, "final_answer": final_answer, "solution": solution}
        )
        try:
            raw = self._ask(prompt, "judge")
        except AnnError as e:
            return EvalOutcome("verdict", False, "", error=f"{type(e).__name__}: {e}")
        try:
            verdict = extract_verdict(raw)
        except UnrecognizedVerdict as e:
            return EvalOutcome("verdict", False, raw, error=f"{JudgeUnparseable.__name__}: {e}")
        return EvalOutcome("verdict", verdict.passed, raw, verdict=verdict)

    def score_open_ended(self, task_prompt: str, output: str) -> EvalOutcome:
        prompt = render_prompt(prompts.RUBRIC, {"task_prompt": task_prompt, "output": output})
        try:
            raw = self._ask(prompt, "judge")
        except AnnError as e:
            return EvalOutcome("rubric", False, "", error=f"{type(e).__name__}: {e}")
        try:
            score = parse_rubric(raw)
        except RubricUnparseable as e:
            return EvalOutcome("rubric", False, raw, error=f"{RubricUnparseable.__name__}: {e}")
        return EvalOutcome("rubric", score.overall >= self.threshold, raw, rubric=score)

    def evaluate(self, task, final_output: str) -> EvalOutcome:
        """Ground-truth verification when the task has one, rubric scoring otherwise."""
        if task.ground_truth is not None:
            return self.verify_with_ground_truth(task.task_prompt, final_output, task.ground_truth)
        return self.score_open_ended(task.task_prompt, final_output)


def failed_outcome(task, reason: str) -> EvalOutcome:
    """Outcome for a task whose forward pass never produced an output."""
    kind = "verdict" if task.ground_truth is not None else "rubric"
    rubric = RubricScore(0, 0, 0, 0, "", 0) if kind == "rubric" else None
    return EvalOutcome(kind, False, "", rubric=rubric, error=reason)


def dataset_metric(outcomes: Sequence[EvalOutcome]) -> float:
    """Pass fraction for verdict datasets, mean overall score for rubric ones."""
    if not outcomes:
        raise ValueError("dataset_metric needs at least one outcome")
    kinds = {o.kind for o in outcomes}
    if len(kinds) > 1:
        raise MixedOutcomeKinds(f"outcome kinds {sorted(kinds)}")
    if kinds == {"verdict"}:
        return sum(o.passed for o in outcomes) / len(outcomes)
    return math.fsum(o.score for o in outcomes) / len(outcomes)
