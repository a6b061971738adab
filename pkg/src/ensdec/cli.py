"""Command-line entry point: decode, eval, selftest.

Exit codes: 0 success, 1 partial failure (some sessions/questions failed),
2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from pathlib import Path
from typing import Any, Optional

from .config import ConfigError, RunConfig
from .eval import ExtractionRule, extract_answer, majority_vote, normalize_answer, pass_at_k
from .pipeline import run_one_step, run_two_stage
from .record import DecodeRecord, read_records
from .rng import Rng
from . import selftest


def _load_prompts(path: Path) -> list[dict[str, Any]]:
    prompts = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "tokens" not in obj:
                raise ConfigError(
                    [f"prompts:{line_no}: needs a 'tokens' field (text prompts require a tokenizing bridge)"]
                )
            if "id" not in obj:
                raise ConfigError([f"prompts:{line_no}: needs an 'id' field"])
            prompts.append({"id": str(obj["id"]), "tokens": [int(t) for t in obj["tokens"]]})
    return prompts


def cmd_decode(args: argparse.Namespace) -> int:
    try:
        cfg = RunConfig.load(args.config)
        backend = cfg.build_backend()
        cfg.check_backend(backend)
        vocab = cfg.vocabulary(backend)
        run_hash = cfg.semantic_hash(backend)
        prompts = _load_prompts(cfg.prompts_path)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_path = Path(args.output) if args.output else cfg.output_path
    done_ids: set[str] = set()
    if args.resume and out_path.exists():
        done_ids = {rec.id for rec in read_records(str(out_path))}
    elif out_path.exists():
        out_path.unlink()
    out_path.parent.mkdir(parents=True, exist_ok=True)

    todo = [p for p in prompts if p["id"] not in done_ids]
    if args.limit is not None:
        todo = todo[: args.limit]

    runner = run_one_step if cfg.pipeline == "one_step" else run_two_stage

    def decode_one(prompt: dict[str, Any]) -> DecodeRecord:
        return runner(
            prompt["tokens"],
            cfg.strategy,
            cfg.sampling,
            backend,
            Rng(cfg.sampling.seed),
            vocab=vocab,
            merge_mode=cfg.merge_mode,
            prompt_id=prompt["id"],
            run_hash=run_hash,
        )

    failures = 0
    workers = args.workers or os.cpu_count() or 1
    with ExitStack() as stack:
        fh = stack.enter_context(open(out_path, "a", encoding="utf-8"))
        if len(todo) <= 1 or workers == 1:
            results = map(decode_one, todo)
        else:
            pool = stack.enter_context(ThreadPoolExecutor(max_workers=workers))
            results = pool.map(decode_one, todo)
        for rec in results:  # map() preserves prompt order
            if not rec.valid:
                failures += 1
                print(f"session {rec.id} aborted: {rec.error}", file=sys.stderr)
            fh.write(rec.to_jsonl() + "\n")
    print(f"decoded {len(todo)} prompt(s) -> {out_path}" + (f" ({failures} failed)" if failures else ""))
    return 1 if failures else 0


def _judge(rec: DecodeRecord, rule: ExtractionRule) -> Optional[str]:
    return extract_answer(rec.rendered_answer(), rule)


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        rule = _parse_pattern(args.pattern)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        records = read_records(args.results)
        gold = _load_gold(args.gold)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    hashes = sorted({rec.config_hash for rec in records})
    if len(hashes) > 1 and not args.allow_mixed:
        print(
            f"error: results mix {len(hashes)} config hashes ({', '.join(hashes)}); "
            "pass --allow-mixed to evaluate anyway",
            file=sys.stderr,
        )
        return 2

    missing = sorted({rec.id for rec in records} - set(gold))
    if missing:
        for qid in missing:
            print(f"error: no gold answer for question id {qid!r}", file=sys.stderr)
        return 1

    by_question: dict[str, list[DecodeRecord]] = {}
    for rec in records:
        by_question.setdefault(rec.id, []).append(rec)

    per_question = []
    scores = []
    for qid in sorted(by_question):
        recs = by_question[qid]
        want = normalize_answer(gold[qid])
        answers = [_judge(r, rule) for r in recs]
        if args.mode == "mv":
            voted = majority_vote(answers)
            score = 1.0 if voted == want else 0.0
            per_question.append({"id": qid, "answer": voted, "gold": want, "correct": score == 1.0})
        elif args.mode == "ensemble":
            correct = [a == want for a in answers]
            score = sum(correct) / len(correct)
            per_question.append(
                {"id": qid, "answers": answers, "gold": want, "accuracy": round(score, 4)}
            )
        else:  # pass_at_k
            n = len(recs)
            c = sum(1 for a in answers if a == want)
            if args.k > n:
                print(f"error: question {qid!r} has n={n} samples, need k <= n (k={args.k})", file=sys.stderr)
                return 2
            score = pass_at_k(n, c, args.k)
            per_question.append(
                {"id": qid, "n": n, "c": c, "pass_at_k": round(score, 4), "gold": want}
            )
        scores.append(score)

    report = {
        "mode": args.mode,
        "pattern": args.pattern,
        "k": args.k if args.mode == "pass_at_k" else None,
        "questions": len(scores),
        "accuracy": round(sum(scores) / len(scores), 4) if scores else None,
        "config_hashes": hashes,
        "per_question": per_question,
    }
    print(json.dumps(report, separators=(",", ":"), ensure_ascii=False))
    return 0


def _parse_pattern(pattern: str) -> ExtractionRule:
    if pattern == "boxed":
        return ExtractionRule("boxed")
    if pattern == "final_line":
        return ExtractionRule("final_line")
    if pattern.startswith("regex:"):
        return ExtractionRule("regex", pattern[len("regex:"):])
    raise ValueError(f"pattern must be 'boxed', 'final_line' or 'regex:<pattern>', got {pattern!r}")


def _load_gold(path: str) -> dict[str, str]:
    gold = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "id" not in obj or "answer" not in obj:
                raise ValueError(f"{path}:{line_no}: gold rows need 'id' and 'answer'")
            gold[str(obj["id"])] = str(obj["answer"])
    return gold


def cmd_selftest(args: argparse.Namespace) -> int:
    names = list(selftest.SUITES)
    if args.suite:
        if args.suite not in selftest.SUITES:
            print(f"unknown suite {args.suite!r}; available: {', '.join(names)}", file=sys.stderr)
            return 2
        names = [args.suite]
    failed = 0
    for name in names:
        if name == "merge_invariance" and args.debug_corrupt_merge:
            result = selftest.suite_merge_invariance(merge_fn=selftest.corrupted_merge)
        else:
            result = selftest.SUITES[name]()
        status = "PASS" if result.ok else "FAIL"
        print(f"{name}: {status} ({result.cases} cases, {result.seconds:.2f}s) {result.detail}")
        if not result.ok:
            failed += 1
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensdec",
        description="Ensemble decoding: K parallel reasoning traces, one merged answer stream.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dec = sub.add_parser("decode", help="run decoding sessions from a config file")
    p_dec.add_argument("--config", required=True, help="run config JSON path")
    p_dec.add_argument("--limit", type=int, default=None, help="decode at most N prompts")
    p_dec.add_argument("--resume", action="store_true", help="append, skipping ids already in the output")
    p_dec.add_argument("--output", default=None, help="override the config's output path")
    p_dec.add_argument("--workers", type=int, default=None, help="worker pool size (default: CPUs)")
    p_dec.set_defaults(func=cmd_decode)

    p_eval = sub.add_parser("eval", help="score decode records against a gold file")
    p_eval.add_argument("--results", required=True, help="decode records JSONL")
    p_eval.add_argument("--gold", required=True, help="gold answers JSONL ({id, answer})")
    p_eval.add_argument("--mode", required=True, choices=["mv", "ensemble", "pass_at_k"])
    p_eval.add_argument("--k", type=int, default=1, help="budget for pass_at_k mode")
    p_eval.add_argument("--pattern", default="final_line", help="boxed | final_line | regex:<pattern>")
    p_eval.add_argument("--allow-mixed", action="store_true", help="permit mixed config hashes")
    p_eval.set_defaults(func=cmd_eval)

    p_self = sub.add_parser("selftest", help="run the built-in conformance suites")
    p_self.add_argument("--suite", default=None, help="run a single named suite")
    p_self.add_argument(
        "--debug-corrupt-merge",
        action="store_true",
        help=argparse.SUPPRESS,  # fault injection for verifying the suites themselves
    )
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
