"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 bad or missing input data,
3 a verification run found a failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import cluster as cl
from .core import PacerError
from .noninterference import MUTANTS, PASS, verify
from .profpace import profile
from .schedule import ScheduleDb
from .simnet import build, config_from_kv, load_scenario, random_scenario, run
from .tunnel import load_log

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(path: str | Path, text: str) -> None:
    Path(path).write_text(text)


def cmd_cluster(args) -> int:
    corpus = cl.load_corpus(args.corpus)
    if not corpus:
        raise ValueError(f"{args.corpus}: corpus is empty")
    if args.algo == "greedy":
        if args.cmin > len(corpus):
            raise ValueError(f"--cmin {args.cmin} exceeds corpus size {len(corpus)}")
        if all(o.length == 1 for o in corpus):
            result = cl.cluster_documents(corpus, args.cmin)
        else:
            result = cl.cluster_videos(corpus, args.cmin)
    elif args.algo == "pow2":
        result = cl.round_pow2(corpus)
    else:
        result = cl.round_multiple(corpus, args.L)
    report = cl.overhead(result, corpus, mtu_round=args.mtu_round, mtu=args.mtu)
    prefix = Path(args.out) if args.out else Path(args.corpus).with_suffix("")
    _write(f"{prefix}.clusters.jsonl", result.to_jsonl())
    _write(f"{prefix}.report.csv", report.CSV_HEADER + "\n" + report.csv_row() + "\n")
    print(report.CSV_HEADER)
    print(report.csv_row())
    if args.algo == "pow2":
        print(f"max_oh<1.0: {'yes' if report.max_oh < 1.0 else 'NO'}")
    if report.short_members:
        print(f"note: {report.short_members} members are shorter than their ceiling; "
              "their missing segments count only in pad_bytes", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    corpus = cl.load_corpus(args.corpus)
    clusters = []
    for lineno, line in enumerate(Path(args.clusters).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            clusters.append(cl.Cluster(tuple(str(m) for m in rec["member_ids"]), tuple(rec["ceiling"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{args.clusters}:{lineno}: {exc}") from None
    report = cl.overhead(cl.Clustering(clusters, args.cmin), corpus, mtu_round=args.mtu_round, mtu=args.mtu)
    print(report.CSV_HEADER)
    print(report.csv_row())
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = config_from_kv(Path(args.config).read_text(), args.config) if args.config else config_from_kv("")
    records = load_log(args.log)
    templates, warnings = profile(records, cfg)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    db = ScheduleDb(templates, cfg.delta)
    text = db.dumps()
    ScheduleDb.loads(text, cfg)  # what we write must load back
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _scenario(args):
    if args.scenario:
        s = load_scenario(args.scenario)
    else:
        s = random_scenario(args.random)
    if getattr(args, "epochs", None) is not None:
        s = replace(s, epochs=args.epochs)
    return s


def cmd_simulate(args) -> int:
    s = _scenario(args)
    if args.secret is not None:
        s = s.with_secret(args.secret)
    _, trace = run(build(s))
    if args.out:
        _write(args.out, trace.to_csv())
    else:
        sys.stdout.write(trace.to_csv())
    return EXIT_OK


def cmd_verify(args) -> int:
    s = _scenario(args)
    verdicts = verify(s, args.pairs, seed=args.seed, mutant=args.mutant)
    for v in verdicts:
        print(v.line())
    bad = sum(1 for v in verdicts if v.status != PASS)
    print(f"# {len(verdicts) - bad}/{len(verdicts)} pairs passed", file=sys.stderr)
    return EXIT_VERIFY if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pacer", description="Traffic shaping schedules, simulation and noninterference checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("cluster", help="cluster a corpus and report padding overhead")
    c.add_argument("--corpus", required=True, help="CSV of id,size1[,size2,...]")
    c.add_argument("--cmin", type=int, default=1, help="minimum cluster size for --algo greedy")
    c.add_argument("--algo", choices=("greedy", "pow2", "multiple"), default="greedy")
    c.add_argument("--L", type=int, default=100, help="rounding step for --algo multiple")
    c.add_argument("--mtu-round", action="store_true", help="round ceilings up to whole MTUs before reporting")
    c.add_argument("--mtu", type=int, default=1500)
    c.add_argument("--out", help="output prefix (default: corpus path without suffix)")
    c.set_defaults(func=cmd_cluster)

    r = sub.add_parser("report", help="recompute the overhead report for a clustering file")
    r.add_argument("--corpus", required=True)
    r.add_argument("--clusters", required=True, help="JSONL written by 'cluster'")
    r.add_argument("--cmin", type=int, default=1, help="requested minimum cluster size to record")
    r.add_argument("--mtu-round", action="store_true")
    r.add_argument("--mtu", type=int, default=1500)
    r.set_defaults(func=cmd_report)

    pr = sub.add_parser("profile", help="synthesize schedule templates from an event log")
    pr.add_argument("--log", required=True, help="CSV of ts_ns,flow,event,arg")
    pr.add_argument("--config", help="key=value file with epsilon, delta_delay, ... (defaults otherwise)")
    pr.add_argument("--out", help="schedule database to write (default: stdout)")
    pr.set_defaults(func=cmd_profile)

    for name, func, text in (("simulate", cmd_simulate, "run one scenario and write its trace"),
                             ("verify", cmd_verify, "run secret-randomized paired executions")):
        sp = sub.add_parser(name, help=text)
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--scenario", help="key=value scenario file")
        src.add_argument("--random", type=int, metavar="SEED", help="use a generated scenario")
        sp.add_argument("--epochs", type=int, help="override the scenario's epoch count")
        sp.set_defaults(func=func)
        if name == "simulate":
            sp.add_argument("--out", help="trace CSV to write (default: stdout)")
            sp.add_argument("--secret", type=int, help="override the scenario's secret seed")
        else:
            sp.add_argument("--pairs", type=int, default=10)
            sp.add_argument("--seed", type=int, default=0, help="seed for drawing the secret pairs")
            sp.add_argument("--mutant", choices=sorted(MUTANTS), help="plant a known leak")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        name = exc.filename if exc.filename else ""
        print(f"pacer: error: {name}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA
    except (PacerError, ValueError, KeyError) as exc:
        print(f"pacer: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
