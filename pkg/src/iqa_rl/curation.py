"""Training-data curation: visual-reliance filtering, rater-based consistency
filtering, and the low-level image hints handed to the rater."""

from __future__ import annotations

import json
import logging
import math
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import ImageTooSmall, NoDistributions, ParseFailure, RaterProtocolError
from .response import AnswerBlock, BBox, Tool, parse_answer

log = logging.getLogger(__name__)


class Stage(str, Enum):
    VRF = "VRF"
    HACF = "HACF"


class Verdict(str, Enum):
    RETAIN = "Retain"
    DISCARD = "Discard"


@dataclass(frozen=True)
class FilterOutcome:
    sample_id: str
    stage: Stage
    verdict: Verdict
    statistics: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "stage": self.stage.value,
            "verdict": self.verdict.value,
            "statistics": self.statistics,
        }


# -- visual reliance filtering ---------------------------------------------------

def bbox_iou(a: BBox, b: BBox) -> float:
    if a.is_sentinel or b.is_sentinel:
        return 1.0 if a.is_sentinel and b.is_sentinel else 0.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class VrfThresholds:
    rating_diff: float = 0.05
    iou_min: float = 0.5
    entropy_diff: float = 0.01

    def __post_init__(self):
        if self.rating_diff <= 0 or self.entropy_diff <= 0:
            raise ValueError("thresholds must be positive")
        if not 0 < self.iou_min <= 1:
            raise ValueError("iou_min must lie in (0, 1]")


@dataclass(frozen=True)
class Generation:
    """One side of a VRF pair; ``answer`` is None when the output did not parse."""

    answer: Optional[AnswerBlock]
    answer_entropy: float = 0.0


@dataclass(frozen=True)
class PairedGeneration:
    sample_id: str
    with_image: Generation
    without_image: Generation


def answer_entropy(dists: Iterable[Mapping[str, float] | Sequence[float]]) -> float:
    """Mean Shannon entropy (nats) of the answer-span token distributions."""
    values = []
    for dist in dists:
        probs = np.asarray(list(dist.values()) if isinstance(dist, Mapping) else dist, dtype=np.float64)
        nz = probs[probs > 0]
        values.append(float(-(nz * np.log(nz)).sum()))
    if not values:
        raise NoDistributions("no answer-span distributions were logged")
    return math.fsum(values) / len(values)


def vrf_filter(pair: PairedGeneration, th: VrfThresholds = VrfThresholds()) -> FilterOutcome:
    """Discard when the answer barely changes once the image is withheld."""
    w, wo = pair.with_image, pair.without_image
    if w.answer is None or wo.answer is None:
        return FilterOutcome(pair.sample_id, Stage.VRF, Verdict.RETAIN, {
            "warning": "unparseable generation",
            "with_image_parsed": w.answer is not None,
            "without_image_parsed": wo.answer is not None,
        })
    rating_diff = abs(w.answer.rating - wo.answer.rating)
    entropy_diff = abs(w.answer_entropy - wo.answer_entropy)
    same_tool = w.answer.tool is wo.answer.tool
    both_final = w.answer.tool is Tool.FINAL and wo.answer.tool is Tool.FINAL
    iou = bbox_iou(w.answer.bbox, wo.answer.bbox)

    fired = {
        "rating_similar": rating_diff < th.rating_diff,
        "iou_similar": True if both_final else iou >= th.iou_min,
        "entropy_similar": entropy_diff < th.entropy_diff,
        "tool_same": same_tool,
    }
    stats = {
        "rating_diff": rating_diff,
        "iou": iou,
        "iou_skipped": both_final,
        "entropy_diff": entropy_diff,
        "tool_with_image": w.answer.tool.value,
        "tool_without_image": wo.answer.tool.value,
        "criteria": fired,
    }
    verdict = Verdict.DISCARD if all(fired.values()) else Verdict.RETAIN
    return FilterOutcome(pair.sample_id, Stage.VRF, verdict, stats)


# -- low-level hints ------------------------------------------------------------

HINT_KEYS = ("brightness", "contrast", "colorfulness", "sharpness", "mos")
OPTIONAL_HINT_KEYS = ("qmos", "artifacts", "blurriness")


@dataclass(frozen=True)
class HintVector:
    brightness: float
    contrast: float
    colorfulness: float
    sharpness: float
    mos: Optional[float] = None
    qmos: Optional[float] = None
    artifacts: Optional[float] = None
    blurriness: Optional[float] = None

    def __post_init__(self):
        for key in HINT_KEYS + OPTIONAL_HINT_KEYS:
            value = getattr(self, key)
            if value is not None and not math.isfinite(value):
                raise ValueError(f"hint {key} is not finite")
        if not (0 <= self.brightness <= 1 and 0 <= self.contrast <= 1):
            raise ValueError("brightness and contrast must lie in [0, 1]")
        if self.colorfulness < 0 or self.sharpness < 0:
            raise ValueError("colorfulness and sharpness must be >= 0")

    def to_dict(self) -> dict:
        out = {}
        for key in HINT_KEYS + OPTIONAL_HINT_KEYS:
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "HintVector":
        return cls(**{k: data[k] for k in HINT_KEYS + OPTIONAL_HINT_KEYS if k in data})


def luma(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def colorfulness(rgb: np.ndarray) -> float:
    """Hasler & Suesstrunk colourfulness, on the 0-255 channel scale."""
    rgb = np.asarray(rgb, dtype=np.float64)
    rg = rgb[..., 0] - rgb[..., 1]
    yb = 0.5 * (rgb[..., 0] + rgb[..., 1]) - rgb[..., 2]
    spread = math.hypot(rg.std(), yb.std())
    offset = math.hypot(rg.mean(), yb.mean())
    return spread + 0.3 * offset


def compute_hints(rgb: np.ndarray, mos: Optional[float] = None) -> HintVector:
    """Brightness/contrast from luma, colourfulness, and Laplacian-variance sharpness.

    ``rgb`` is an ``H x W x 3`` array of 8-bit values.
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise ValueError(f"expected an HxWx3 RGB buffer, got shape {rgb.shape}")
    if rgb.shape[0] < 3 or rgb.shape[1] < 3:
        raise ImageTooSmall(f"image {rgb.shape[1]}x{rgb.shape[0]} is smaller than 3x3")
    rgb = rgb[..., :3]
    y = luma(rgb)
    return HintVector(
        brightness=float(min(1.0, y.mean() / 255.0)),
        contrast=float(min(1.0, y.std() / 255.0)),
        colorfulness=colorfulness(rgb) / 255.0,
        sharpness=float(kernels.laplacian_variance(y)),
        mos=mos,
    )


def load_rgb(path) -> np.ndarray:
    """Decode an image file into an ``H x W x 3`` uint8 array.

    ``.npy`` buffers are read directly; other formats go through Pillow.
    """
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on the host
        raise OSError(f"cannot decode {path}: Pillow is not installed") from exc
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


# -- hint-augmented consistency filtering -------------------------------------------

DEFAULT_INSTRUCTIONS_ID = "hacf-veracity-v1"


@dataclass(frozen=True)
class RaterRequest:
    sample_id: str
    rationale: str
    image_ref: str
    hints: HintVector
    instructions_id: str = DEFAULT_INSTRUCTIONS_ID

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "rationale": self.rationale,
            "image_ref": self.image_ref,
            "hints": self.hints.to_dict(),
            "instructions_id": self.instructions_id,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "RaterRequest":
        data = json.loads(text)
        return cls(
            sample_id=data["sample_id"],
            rationale=data["rationale"],
            image_ref=data["image_ref"],
            hints=HintVector.from_dict(data["hints"]),
            instructions_id=data["instructions_id"],
        )


def hacf_request(sample_id: str, rationale: str, hints: HintVector, image_ref: str,
                 instructions_id: str = DEFAULT_INSTRUCTIONS_ID) -> RaterRequest:
    return RaterRequest(sample_id, rationale, image_ref, hints, instructions_id)


def hacf_apply(response: str, sample_id: str = "") -> FilterOutcome:
    verdict = response.strip().casefold()
    if verdict == "pass":
        return FilterOutcome(sample_id, Stage.HACF, Verdict.RETAIN, {"rater_decision": "Pass"})
    if verdict == "fail":
        return FilterOutcome(sample_id, Stage.HACF, Verdict.DISCARD, {"rater_decision": "Fail"})
    raise RaterProtocolError(f"rater answered {response!r}; expected Pass or Fail")


class RaterClient(Protocol):
    def judge(self, request: RaterRequest) -> str:
        """Return the rater's raw verdict text."""


class FixtureRater:
    """Replays recorded verdicts keyed by sample id."""

    def __init__(self, verdicts: Mapping[str, str]):
        self.verdicts = dict(verdicts)
        self.calls: List[str] = []

    @classmethod
    def from_file(cls, path) -> "FixtureRater":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def judge(self, request: RaterRequest) -> str:
        self.calls.append(request.sample_id)
        return self.verdicts[request.sample_id]


class HttpRater:
    """POSTs the request JSON; expects ``{"verdict": "..."}`` back."""

    def __init__(self, url: str, timeout: float = 60.0):
        self.url = url
        self.timeout = timeout

    def judge(self, request: RaterRequest) -> str:
        req = urllib.request.Request(
            self.url,
            data=request.to_json().encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            body = json.loads(resp.read().decode("utf-8"))
        return str(body["verdict"])


@dataclass
class HacfResult:
    outcomes: List[FilterOutcome]
    failed: Dict[str, str]  # sample_id -> last error, after retries ran out


def run_hacf(requests: Sequence[RaterRequest], client: RaterClient, max_in_flight: int = 4,
             max_retries: int = 3, backoff: float = 0.5,
             sleep: Callable[[float], None] = time.sleep) -> HacfResult:
    """Judge every request with bounded concurrency and exponential-backoff retry.

    Outcomes come back sorted by sample id regardless of completion order.
    Samples whose rater never answers Pass/Fail land in ``failed``.
    """

    def judge_one(request: RaterRequest) -> Tuple[str, Optional[FilterOutcome], str]:
        error = ""
        for attempt in range(max_retries + 1):
            try:
                return request.sample_id, hacf_apply(client.judge(request), request.sample_id), ""
            except (RaterProtocolError, OSError) as exc:
                error = str(exc)
                log.warning("rater attempt %d for %s failed: %s", attempt + 1, request.sample_id, exc)
                if attempt < max_retries:
                    sleep(backoff * 2 ** attempt)
        return request.sample_id, None, error

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = list(pool.map(judge_one, requests))
    outcomes = sorted((o for _, o, _ in results if o is not None), key=lambda o: o.sample_id)
    failed = {sid: err for sid, o, err in results if o is None}
    return HacfResult(outcomes, failed)


# -- record I/O -------------------------------------------------------------------

def _answer_from_json(value, image_dims=None) -> Optional[AnswerBlock]:
    try:
        if isinstance(value, Mapping):
            return parse_answer(json.dumps(dict(value)), image_dims)
        if isinstance(value, str):
            if "<answer>" in value:
                start = value.index("<answer>") + len("<answer>")
                end = value.find("</answer>", start)
                if end < 0 or value.count("<answer>") != 1:
                    return None
                value = value[start:end]
            return parse_answer(value, image_dims)
    except ParseFailure:
        return None
    return None


def generation_from_json(side: Mapping, image_dims=None) -> Generation:
    answer = _answer_from_json(side.get("answer"), image_dims)
    if "entropy" in side:
        ent = float(side["entropy"])
    elif side.get("dists"):
        ent = answer_entropy(side["dists"])
    else:
        raise NoDistributions("generation carries neither 'entropy' nor 'dists'")
    return Generation(answer=answer, answer_entropy=ent)


def pair_from_json(record: Mapping) -> PairedGeneration:
    dims = tuple(record["image_dims"]) if record.get("image_dims") else None
    return PairedGeneration(
        sample_id=str(record["sample_id"]),
        with_image=generation_from_json(record["with_image"], dims),
        without_image=generation_from_json(record["without_image"], dims),
    )
