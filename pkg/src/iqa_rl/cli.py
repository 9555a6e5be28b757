"""Command-line entry point: ``iqa-rl <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__, curation, metrics, resample, rollout_log, sim
from .config import load_config
from .errors import EngineError

log = logging.getLogger("iqa_rl")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _emit(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _read_manifest(path) -> List[dict]:
    rows = list(rollout_log.read_jsonl(path))
    for row in rows:
        if "id" not in row:
            raise EngineError(f"{path}: manifest rows need an 'id'")
    return rows


def cmd_reward(args) -> int:
    cfg = load_config(args.config)
    rows, report = rollout_log.score_file(args.rollouts, cfg)
    if args.out:
        rollout_log.write_jsonl(args.out, rows)
    else:
        for row in rows:
            print(json.dumps(row, ensure_ascii=False))
    if report is not None and args.report:
        _emit(report.to_dict(), args.report)
    return EXIT_OK


def _rater(args):
    if args.rater_fixture:
        return curation.FixtureRater.from_file(args.rater_fixture)
    if args.rater_url:
        return curation.HttpRater(args.rater_url)
    raise EngineError("hacf needs --rater-fixture or --rater-url")


def _hints_for(record: dict, base: Path) -> curation.HintVector:
    if "hints" in record:
        return curation.HintVector.from_dict(record["hints"])
    rgb = curation.load_rgb(base / record["image_path"])
    return curation.compute_hints(rgb, mos=record.get("mos"))


def cmd_curate(args) -> int:
    cfg = load_config(args.config)
    records = list(rollout_log.read_jsonl(args.records))
    base = Path(args.records).parent
    outcomes = []
    summary = {"total": len(records), "vrf_discarded": 0, "hacf_discarded": 0, "retained": 0}
    if args.stage == "vrf":
        th = cfg.vrf_thresholds()
        outcomes = sorted((curation.vrf_filter(curation.pair_from_json(r), th) for r in records),
                          key=lambda o: o.sample_id)
        summary["vrf_discarded"] = sum(o.verdict is curation.Verdict.DISCARD for o in outcomes)
    else:
        requests = [
            curation.hacf_request(str(r["sample_id"]), r["rationale"], _hints_for(r, base),
                                  str(r.get("image_path", "")))
            for r in records
        ]
        result = curation.run_hacf(requests, _rater(args), max_in_flight=args.max_in_flight,
                                   max_retries=args.retries, backoff=args.backoff)
        outcomes = result.outcomes
        summary["hacf_discarded"] = sum(o.verdict is curation.Verdict.DISCARD for o in outcomes)
        if result.failed:
            summary["rater_failed"] = sorted(result.failed)
    summary["retained"] = sum(o.verdict is curation.Verdict.RETAIN for o in outcomes)
    rows = [o.to_dict() for o in outcomes]
    if args.out:
        rollout_log.write_jsonl(args.out, rows)
    else:
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    _emit(summary, args.summary)
    return EXIT_INVALID if summary.get("rater_failed") else EXIT_OK


def cmd_hints(args) -> int:
    rows = _read_manifest(args.manifest)
    base = Path(args.manifest).parent
    out = []
    for row in rows:
        hv = curation.compute_hints(curation.load_rgb(base / row["path"]), mos=row.get("mos"))
        out.append({"id": row["id"], "hints": hv.to_dict()})
    if args.out:
        rollout_log.write_jsonl(args.out, out)
    else:
        for row in out:
            print(json.dumps(row, sort_keys=True))
    return EXIT_OK


def cmd_resample(args) -> int:
    cfg = load_config(args.config)
    rows = _read_manifest(args.manifest)
    records = [(str(r["id"]), float(r["mos"])) for r in rows]
    bins = resample.bin_scores(records, resample.default_edges(cfg.resample_K))
    plan = resample.stage_weights(bins, args.stage, cfg.resample_S, cfg.resample_gamma)
    size = args.epoch_size or len(records)
    ids = resample.sample_epoch(records, bins, plan, size, args.seed, args.epoch)
    if args.plan:
        Path(args.plan).write_text("\n".join(ids) + "\n", encoding="utf-8")
    else:
        print("\n".join(ids))
    if args.report:
        _emit(plan.report(bins), args.report)
    return EXIT_OK


def read_predictions(path) -> dict:
    preds = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].strip().lower() == "id":
                continue
            if len(row) < 2:
                raise EngineError(f"{path}: rows must be 'id,score'")
            try:
                preds[row[0].strip()] = float(row[1])
            except ValueError:
                raise EngineError(f"{path}: bad score {row[1]!r}") from None
    return preds


def cmd_eval(args) -> int:
    preds = read_predictions(args.predictions)
    truth = {str(r["id"]): float(r["mos"]) for r in _read_manifest(args.manifest)}
    ids = [i for i in truth if i in preds]
    missing = len(truth) - len(ids)
    if missing:
        log.warning("%d manifest ids have no prediction", missing)
    p = [preds[i] for i in ids]
    t = [truth[i] for i in ids]
    _emit({
        "plcc": metrics.plcc(p, t),
        "srcc": metrics.srcc(p, t),
        "unique_score_ratio": metrics.unique_score_ratio(p, args.decimals),
        "n": len(ids),
    }, args.out)
    return EXIT_OK


def cmd_train_sim(args) -> int:
    cfg = load_config(args.config) if args.config else sim.collapse_config(load_config())
    if args.steps is not None:
        cfg = cfg.replace(sim_steps=args.steps)
    report = sim.run_experiment(cfg, klc_on=args.klc == "on", seed=args.seed)
    _emit(report.to_dict(), args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iqa-rl", description="Rewards, GRPO with KL-Coverage, data curation and evaluation for quality-rating policies.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reward", help="score a rollout log and compute the step objective")
    p.add_argument("rollouts")
    p.add_argument("--config")
    p.add_argument("--out", help="scored JSONL (default: stdout)")
    p.add_argument("--report", help="step report JSON")
    p.set_defaults(func=cmd_reward)

    p = sub.add_parser("curate", help="visual-reliance or rater-consistency filtering")
    p.add_argument("stage", choices=["vrf", "hacf"])
    p.add_argument("records")
    p.add_argument("--config")
    p.add_argument("--out", help="FilterOutcome JSONL (default: stdout)")
    p.add_argument("--summary", help="summary JSON (default: stdout)")
    p.add_argument("--rater-fixture", help="JSON object mapping sample_id to recorded verdict")
    p.add_argument("--rater-url")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--backoff", type=float, default=0.5)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("hints", help="low-level hints for every image in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_hints)

    p = sub.add_parser("resample", help="draw one epoch at a re-sampling stage")
    p.add_argument("manifest")
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--epoch-size", type=int)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plan", help="ordered id list (default: stdout)")
    p.add_argument("--report", help="stage report JSON")
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("eval", help="PLCC/SRCC/unique-score ratio of predictions against a manifest")
    p.add_argument("predictions")
    p.add_argument("manifest")
    p.add_argument("--decimals", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-sim", help="run the toy GRPO simulator")
    p.add_argument("--klc", choices=["on", "off"], default="on")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="defaults to the frozen collapse configuration")
    p.add_argument("--steps", type=int)
    p.add_argument("--report")
    p.set_defaults(func=cmd_train_sim)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EngineError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
