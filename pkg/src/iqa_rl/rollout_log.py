"""Reading rollout logs and scoring them end to end.

One JSONL object per trajectory::

    {"query_id": ..., "rollout_index": 0, "r_gt": 3.8, "image_dims": [W, H],
     "turns": [{"text": "...", "tokens": [{"pos": 0, "text": "3", "lp_old": -0.1,
                "lp_new": -0.1, "valid": 1, "in_answer": 1, "is_numeric": 1,
                "dist_old": {...}, "dist_new": {...}}]}]}

``image_dims`` is optional; without it crop boxes are only checked for
ordering. Scored records gain ``rewards`` ({format, score, rank, total}) and
``advantage``.
"""

from __future__ import annotations

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

from . import policy, rewards
from .config import EngineConfig
from .errors import EngineError, ParseFailure
from .policy import RolloutGroup, StepReport, TokenRecord, TrajectoryRecord
from .response import StructuredResponse, Tool, parse_response

log = logging.getLogger(__name__)


def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EngineError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if not isinstance(obj, dict):
                raise EngineError(f"{path}:{lineno}: expected a JSON object")
            yield obj


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


@dataclass
class LoggedTrajectory(TrajectoryRecord):
    source: dict = field(default_factory=dict)
    format_ok: bool = False


def token_from_json(tok: dict) -> TokenRecord:
    return TokenRecord(
        position=int(tok["pos"]),
        token_text=str(tok["text"]),
        logprob_old=float(tok["lp_old"]),
        logprob_new=float(tok["lp_new"]),
        validity=int(tok.get("valid", 1)),
        in_answer_span=int(tok.get("in_answer", 0)),
        is_numeric=int(tok.get("is_numeric", 0)),
        dist_old=tok.get("dist_old"),
        dist_new=tok.get("dist_new"),
    )


def parse_turns(record: dict) -> Tuple[List[StructuredResponse], bool]:
    """Parse every turn; returns (parsed turns, protocol fully respected)."""
    dims = tuple(record["image_dims"]) if record.get("image_dims") else None
    parsed: List[StructuredResponse] = []
    ok = True
    turns = record.get("turns", [])
    for i, turn in enumerate(turns, 1):
        try:
            resp = parse_response(turn.get("text", ""), dims, i)
        except ParseFailure as exc:
            log.debug("query %s rollout %s turn %d: %s", record.get("query_id"), record.get("rollout_index"), i, exc)
            ok = False
            continue
        parsed.append(resp)
        last = i == len(turns)
        if not resp.think.complete:
            ok = False
        if last != (resp.answer.tool is Tool.FINAL):
            ok = False  # only the last turn may (and must) be final
    if len(parsed) != len(turns) or not turns:
        ok = False
    return parsed, ok


def load_groups(records: Iterable[dict]) -> List[RolloutGroup]:
    groups: "OrderedDict[object, RolloutGroup]" = OrderedDict()
    for rec in records:
        qid = rec["query_id"]
        tokens = [token_from_json(t) for turn in rec.get("turns", []) for t in turn.get("tokens", [])]
        parsed, ok = parse_turns(rec)
        traj = LoggedTrajectory(qid, int(rec["rollout_index"]), tokens, parsed=parsed, source=rec, format_ok=ok)
        group = groups.setdefault(qid, RolloutGroup(qid, [], float(rec["r_gt"])))
        group.trajectories.append(traj)
    return list(groups.values())


def _final_rating(traj: LoggedTrajectory) -> Optional[float]:
    src_turns = traj.source.get("turns", [])
    if traj.parsed and len(traj.parsed) == len(src_turns):
        return traj.parsed[-1].answer.rating
    return None


def assign_rewards(groups: List[RolloutGroup], cfg: EngineConfig) -> None:
    """Score, rank and total rewards plus advantages, in place.

    Trajectories with any unparseable turn have no rating: they get
    score = rank = 0 and are left out of the group statistics.
    """
    coeffs = cfg.coefficients()
    rated = []
    for g in groups:
        ratings = [(t, _final_rating(t)) for t in g.trajectories]
        kept = [(t, r) for t, r in ratings if r is not None]
        if kept:
            rated.append((g, kept))
    rank_of: Dict[int, float] = {}
    if len(rated) >= 2:
        batch = [rewards.GroupRatings(str(g.query_id), g.r_gt, [r for _, r in kept]) for g, kept in rated]
        for (g, kept), values in zip(rated, rewards.rank_rewards(batch, cfg.v_floor)):
            for (t, _), v in zip(kept, values):
                rank_of[id(t)] = float(v)
    else:
        log.warning("fewer than two rated groups in the batch; rank rewards set to 0")

    for g in groups:
        for t in g.trajectories:
            rating = _final_rating(t)
            fmt = 1.0 if t.format_ok else 0.0
            score = rewards.score_reward(rating, g.r_gt, cfg.sigma) if rating is not None else 0.0
            t.reward = rewards.total_reward(fmt, score, rank_of.get(id(t), 0.0), coeffs)
        policy.group_advantages(g, cfg.adv_eps)


def score_records(records: List[dict], cfg: EngineConfig) -> Tuple[List[dict], Optional[StepReport]]:
    groups = load_groups(records)
    assign_rewards(groups, cfg)
    out = []
    for g in groups:
        for t in g.trajectories:
            row = dict(t.source)
            row["rewards"] = t.reward.to_dict()
            row["advantage"] = t.advantage
            out.append(row)
    report = None
    if all(t.tokens for g in groups for t in g.trajectories):
        report = policy.grpo_step_objective(groups, cfg.klc(), cfg.eps_clip)
    return out, report


def score_file(path, cfg: EngineConfig) -> Tuple[List[dict], Optional[StepReport]]:
    return score_records(list(read_jsonl(Path(path))), cfg)
