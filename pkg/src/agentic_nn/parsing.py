"""Parsers for the tagged reply formats used by every prompt protocol."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from typing import Any

from .errors import MissingTag, UnbalancedTag, UnrecognizedVerdict


def extract_tagged(text: str, tag: str) -> str:
    """Trimmed content of the first ``<tag>...</tag>`` pair in ``text``."""
    open_t, close_t = f"<{tag}>", f"</{tag}>"
    start = text.find(open_t)
    if start < 0:
        if close_t in text:
            raise UnbalancedTag(f"</{tag}> without <{tag}>")
        raise MissingTag(tag)
    start += len(open_t)
    end = text.find(close_t, start)
    if end < 0:
        raise UnbalancedTag(f"<{tag}> is never closed")
    return text[start:end].strip()


class VerdictKind(str, enum.Enum):
    CORRECT = "Correct"
    APPROXIMATED = "Approximated"
    INCORRECT = "Incorrect"
    NO_ANSWER = "NoAnswer"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    ground_truth: str | None = None
    extracted: str | None = None

    @property
    def passed(self) -> bool:
        return self.kind in (VerdictKind.CORRECT, VerdictKind.APPROXIMATED)


VERDICT_CORRECT = "The answer is correct."
VERDICT_APPROXIMATED = "The answer is approximated but should be correct."
VERDICT_INCORRECT = "The answer is incorrect."
VERDICT_NO_ANSWER = "The reply doesn't contain an answer."

_OPENERS = (
    (VERDICT_APPROXIMATED, VerdictKind.APPROXIMATED),
    (VERDICT_CORRECT, VerdictKind.CORRECT),
    (VERDICT_INCORRECT, VerdictKind.INCORRECT),
    (VERDICT_NO_ANSWER, VerdictKind.NO_ANSWER),
)

_LABELLED_INCORRECT = re.compile(
    r"Correct Answer:\s*(?P<gt>.*?)\s*\|\s*Answer extracted:\s*(?P<ex>.*?)\s*\.?\s*$"
)


def _norm(line: str) -> str:
    line = line.replace("’", "'").replace("‘", "'")
    line = " ".join(line.split())
    return line.strip().strip("\"'`*").strip()


def incorrect_verdict_text(ground_truth: str, extracted: str) -> str:
    """Render the incorrect-answer option with its two spans filled in."""
    return (
        f"{VERDICT_INCORRECT} Correct Answer: <ground truth answer>{ground_truth}</ground truth answer>"
        f" | Answer extracted: <answer extracted>{extracted}</answer extracted>."
    )


def extract_verdict(text: str) -> Verdict:
    """Map a judge reply onto one of the four canonical options.

    The first line that starts with a canonical opener decides; lines before it
    (an echoed extraction, say) are ignored.
    """
    lines = text.splitlines()
    for i, raw in enumerate(lines):
        line = _norm(raw)
        for opener, kind in _OPENERS:
            if not line.startswith(opener):
                continue
            if kind is not VerdictKind.INCORRECT:
                return Verdict(kind)
            rest = "\n".join(lines[i:])
            gt = ex = None
            try:
                gt = extract_tagged(rest, "ground truth answer")
                ex = extract_tagged(rest, "answer extracted")
            except (MissingTag, UnbalancedTag):
                m = _LABELLED_INCORRECT.search(_norm(rest))
                if m:
                    gt, ex = m.group("gt"), m.group("ex")
            return Verdict(kind, ground_truth=gt, extracted=ex)
    raise UnrecognizedVerdict(text[:200])


def first_json_object(text: str) -> dict[str, Any] | None:
    """Best-effort pull of a JSON object out of a model reply.

    Tries the whole text, then fenced code blocks, then each ``{`` position with
    a raw decoder. Returns ``None`` when nothing parses to a dict.
    """
    text = text.strip()
    candidates = [text]
    candidates += re.findall(r"```(?:json)?\s*(.*?)```", text, flags=re.S)
    for c in candidates:
        try:
            obj = json.loads(c)
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    return None
