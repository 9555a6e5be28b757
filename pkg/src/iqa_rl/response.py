"""Two-block ``<think>``/``<answer>`` responses: parsing, format reward, turns.

A response looks like::

    <think>
    1) Image Quality Summary: ...
    2) Directions for Improvement: ...
    3) Issues to Avoid: ...
    4) Decision & Rationale: ...
    </think>
    <answer>{"bbox_2d": [0, 0, 0, 0], "rating": 2.25, "tool": "final"}</answer>

Second-turn responses use "Crop Inspection Summary" and "Final Decision &
Rationale" for the first and last headings.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

from .errors import (
    BadBbox,
    BadJson,
    MissingKey,
    MissingTag,
    ParseFailure,
    ProtocolViolation,
    RatingOutOfRange,
)

RATING_MIN = 1.0
RATING_MAX = 5.0
MAX_TURNS = 2
ANSWER_KEYS = ("bbox_2d", "rating", "tool")

SUMMARY_LABELS = ("Image Quality Summary", "Crop Inspection Summary")
IMPROVEMENTS_LABEL = "Directions for Improvement"
ISSUES_LABEL = "Issues to Avoid"
DECISION_LABELS = ("Final Decision & Rationale", "Decision & Rationale")


class Tool(str, Enum):
    CROP = "crop"
    FINAL = "final"


@dataclass(frozen=True)
class BBox:
    x1: int
    y1: int
    x2: int
    y2: int

    @classmethod
    def sentinel(cls) -> "BBox":
        return cls(0, 0, 0, 0)

    @property
    def is_sentinel(self) -> bool:
        return self.x1 == self.y1 == self.x2 == self.y2 == 0

    @property
    def is_proper(self) -> bool:
        return self.x1 < self.x2 and self.y1 < self.y2

    @property
    def area(self) -> int:
        return max(0, self.x2 - self.x1) * max(0, self.y2 - self.y1)

    def as_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]

    def clamp(self, width: int, height: int) -> "BBox":
        return BBox(
            min(max(self.x1, 0), width),
            min(max(self.y1, 0), height),
            min(max(self.x2, 0), width),
            min(max(self.y2, 0), height),
        )

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x1 < self.x2 <= width and 0 <= self.y1 < self.y2 <= height


@dataclass(frozen=True)
class AnswerBlock:
    bbox: BBox
    rating: float
    tool: Tool

    def to_json(self) -> str:
        return json.dumps(
            {"bbox_2d": self.bbox.as_list(), "rating": round(self.rating, 2), "tool": self.tool.value}
        )


@dataclass(frozen=True)
class ThinkBlock:
    summary: str
    improvements: str
    issues: str
    decision_rationale: str
    raw: str
    in_order: bool = True

    @property
    def complete(self) -> bool:
        """Both mandatory sections present, non-empty, and headings in order."""
        return self.in_order and bool(self.improvements) and bool(self.issues)


@dataclass(frozen=True)
class StructuredResponse:
    think: ThinkBlock
    answer: AnswerBlock
    turn_index: int = 1


# -- serialisation ------------------------------------------------------------

def render_think(summary: str, improvements: str, issues: str, decision: str, turn_index: int = 1) -> str:
    first = SUMMARY_LABELS[0] if turn_index == 1 else SUMMARY_LABELS[1]
    last = DECISION_LABELS[1] if turn_index == 1 else DECISION_LABELS[0]
    return (
        f"1) {first}: {summary}\n"
        f"2) {IMPROVEMENTS_LABEL}: {improvements}\n"
        f"3) {ISSUES_LABEL}: {issues}\n"
        f"4) {last}: {decision}"
    )


def serialize(resp: StructuredResponse) -> str:
    return f"<think>\n{resp.think.raw}\n</think>\n<answer>{resp.answer.to_json()}</answer>"


# -- parsing ------------------------------------------------------------------

def _heading_re(labels: Tuple[str, ...]) -> re.Pattern:
    alts = "|".join(re.escape(label) for label in labels)
    # optional list number and markdown emphasis around the label, then a colon
    return re.compile(
        r"(?:^|\n)[ \t]*(?:\*\*)?[ \t]*(?:\d+[\).][ \t]*)?(?:\*\*)?[ \t]*(?:" + alts + r")[ \t]*(?:\*\*)?[ \t]*:(?:\*\*)?",
        re.IGNORECASE,
    )


_HEADINGS = (
    _heading_re(SUMMARY_LABELS),
    _heading_re((IMPROVEMENTS_LABEL,)),
    _heading_re((ISSUES_LABEL,)),
    _heading_re(DECISION_LABELS),
)


def parse_think(raw: str) -> ThinkBlock:
    spans = []
    for pattern in _HEADINGS:
        matches = list(pattern.finditer(raw))
        spans.append(matches[0] if len(matches) == 1 else None)

    present = [(i, m) for i, m in enumerate(spans) if m is not None]
    starts = [m.start() for _, m in present]
    in_order = starts == sorted(starts)
    # a duplicated heading is treated as absent, which also fails the format check
    sections = [""] * 4
    ordered = sorted(present, key=lambda item: item[1].start())
    for pos, (i, m) in enumerate(ordered):
        end = ordered[pos + 1][1].start() if pos + 1 < len(ordered) else len(raw)
        sections[i] = raw[m.end():end].strip()
    return ThinkBlock(
        summary=sections[0],
        improvements=sections[1],
        issues=sections[2],
        decision_rationale=sections[3],
        raw=raw.strip(),
        in_order=in_order,
    )


def _single_block(text: str, name: str) -> Tuple[int, int, str]:
    opens = [m for m in re.finditer(f"<{name}>", text)]
    closes = [m for m in re.finditer(f"</{name}>", text)]
    if len(opens) != 1 or len(closes) != 1:
        raise MissingTag(f"expected exactly one <{name}>...</{name}> block")
    start, end = opens[0].end(), closes[0].start()
    if end < start:
        raise MissingTag(f"</{name}> precedes <{name}>")
    return opens[0].start(), closes[0].end(), text[start:end]


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def parse_answer(body: str, image_dims: Optional[Tuple[int, int]] = None) -> AnswerBlock:
    stripped = body.strip()
    if not stripped.startswith("{"):
        raise BadJson("answer block must hold a JSON object")
    try:
        obj, end = json.JSONDecoder().raw_decode(stripped)
    except (ValueError, RecursionError) as exc:  # JSONDecodeError, over-long ints, deep nesting
        raise BadJson(str(exc)) from None
    if stripped[end:].strip():
        raise BadJson("trailing content after the answer object")
    if not isinstance(obj, dict):
        raise BadJson("answer must be a JSON object")
    for key in ANSWER_KEYS:
        if key not in obj:
            raise MissingKey(key)
    extra = set(obj) - set(ANSWER_KEYS)
    if extra:
        raise MissingKey(f"unexpected keys {sorted(extra)}")

    box = obj["bbox_2d"]
    if not (isinstance(box, list) and len(box) == 4 and all(_is_int(v) for v in box)):
        raise BadBbox("bbox_2d must be a list of four integers")
    bbox = BBox(*box)

    rating = obj["rating"]
    if isinstance(rating, bool) or not isinstance(rating, (int, float)) or not math.isfinite(rating):
        raise RatingOutOfRange(f"rating must be a finite number, got {rating!r}")
    rating = float(rating)
    if not RATING_MIN <= rating <= RATING_MAX:
        raise RatingOutOfRange(f"rating {rating} outside [{RATING_MIN}, {RATING_MAX}]")
    if abs(rating - round(rating, 2)) > 1e-9:
        raise RatingOutOfRange(f"rating {rating} has more than two decimals")

    tool_raw = obj["tool"]
    if not isinstance(tool_raw, str) or tool_raw.strip().lower() not in ("crop", "final"):
        raise MissingKey(f"tool must be 'crop' or 'final', got {tool_raw!r}")
    tool = Tool(tool_raw.strip().lower())

    if tool is Tool.FINAL and not bbox.is_sentinel:
        raise BadBbox("final answers carry the [0,0,0,0] bbox")
    if tool is Tool.CROP:
        if not bbox.is_proper:
            raise BadBbox(f"degenerate crop box {bbox.as_list()}")
        if min(box) < 0:
            raise BadBbox("negative crop coordinates")
        if image_dims is not None:
            w, h = image_dims
            if bbox.x1 >= w or bbox.y1 >= h:
                raise BadBbox(f"crop box {bbox.as_list()} lies outside the {w}x{h} image")
    return AnswerBlock(bbox=bbox, rating=round(rating, 2), tool=tool)


def parse_response(text: str, image_dims: Optional[Tuple[int, int]] = None, turn_index: int = 1) -> StructuredResponse:
    """Parse raw model output; raises a :class:`ParseFailure` subclass."""
    if image_dims is not None and (image_dims[0] <= 0 or image_dims[1] <= 0):
        raise ValueError("image dimensions must be positive")
    t_start, t_end, think_raw = _single_block(text, "think")
    a_start, a_end, answer_raw = _single_block(text, "answer")
    if a_start < t_end:
        raise MissingTag("<think> block must precede <answer> block")
    answer = parse_answer(answer_raw, image_dims)
    if turn_index >= MAX_TURNS and answer.tool is Tool.CROP:
        raise ProtocolViolation(f"crop requested on turn {turn_index}")
    return StructuredResponse(think=parse_think(think_raw), answer=answer, turn_index=turn_index)


def try_parse(text: str, image_dims=None, turn_index: int = 1) -> Union[StructuredResponse, ParseFailure]:
    try:
        return parse_response(text, image_dims, turn_index)
    except ParseFailure as exc:
        return exc


def format_reward(parsed: Union[StructuredResponse, ParseFailure, str], image_dims=None, turn_index: int = 1) -> float:
    """1.0 for a fully well-formed response, else 0.0. Never raises.

    Accepts the result of :func:`try_parse` or raw text.
    """
    if isinstance(parsed, str):
        parsed = try_parse(parsed, image_dims, turn_index)
    if not isinstance(parsed, StructuredResponse):
        return 0.0
    return 1.0 if parsed.think.complete else 0.0


# -- two-turn protocol ------------------------------------------------------------

@dataclass(frozen=True)
class TurnProtocolState:
    image_dims: Tuple[int, int]
    turn: int = 1
    pending_crop: Optional[BBox] = None
    max_turns: int = MAX_TURNS


@dataclass(frozen=True)
class CropRequest:
    bbox: BBox
    turn_index: int

    def next_state(self, state: TurnProtocolState) -> TurnProtocolState:
        return TurnProtocolState(state.image_dims, self.turn_index, self.bbox, state.max_turns)


@dataclass(frozen=True)
class Finished:
    rating: float


def apply_crop(state: TurnProtocolState, answer: AnswerBlock) -> Union[CropRequest, Finished]:
    if state.turn > state.max_turns:
        raise ProtocolViolation(f"turn {state.turn} exceeds max_turns={state.max_turns}")
    if answer.tool is Tool.FINAL:
        return Finished(answer.rating)
    if state.turn >= state.max_turns:
        raise ProtocolViolation(f"crop requested on the last turn ({state.turn})")
    w, h = state.image_dims
    bbox = answer.bbox.clamp(w, h)
    if not bbox.is_proper:
        raise ProtocolViolation(f"crop {answer.bbox.as_list()} has no overlap with the {w}x{h} image")
    return CropRequest(bbox=bbox, turn_index=state.turn + 1)
