"""Command-line entry point: run scenarios and analyze their logs.

Exit codes are a stable scripting contract: 0 success, 1 usage/config/
parse errors, 2 convergence timeout.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
from pathlib import Path

from . import aggregator, deps, runner
from .aggregator import MatchMode
from .config import RunConfig, load_run_config, parse_duration_ns
from .errors import PropwatchError
from .model import LogEntry, Op

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_TIMEOUT = 2

MS = 1_000_000


class _CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exit code 1."""

    def error(self, message):  # noqa: D102
        raise _CliError(f"{self.prog}: {message}")


def build_parser() -> _Parser:
    parser = _Parser(prog="propwatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[], help="execute a scenario against the emulator")
    p_run.add_argument("--scenario", help="scenario YAML file, or builtin:<name>")
    p_run.add_argument("--snapshot", help="re-run from a params.snapshot file")
    p_run.add_argument("--params", action="append", default=[], metavar="K=V",
                       help="builtin scenario parameters (repeatable)")
    p_run.add_argument("--out", default=os.environ.get("PROPWATCH_OUT"),
                       help="run directory (or $PROPWATCH_OUT)")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--clock", choices=["virtual", "real"], default="virtual")
    p_run.add_argument("--repeat", type=int, help="override scenario repetition count")
    p_run.add_argument("--config", help="controller/emulator/agent config YAML")
    p_run.add_argument("--deadline-ms", type=float, help="override convergence deadline")

    def add_log_args(p, with_mode=True):
        p.add_argument("--logs", action="append", required=True, metavar="GLOB",
                       help="log file glob (repeatable)")
        p.add_argument("--deps", required=True, help="dependency rules YAML")
        p.add_argument("--lenient", action="store_true",
                       help="skip malformed log lines instead of failing")
        if with_mode:
            p.add_argument("--mode", choices=["sameop", "causal"], default="sameop")

    p_analyze = sub.add_parser("analyze", help="correlate logs and summarize deltas per rule")
    add_log_args(p_analyze)
    p_analyze.add_argument("--csv", help="write propagation records CSV")
    p_analyze.add_argument("--orphans-csv", help="write unmatched children CSV")
    p_analyze.add_argument("--plot-dir", help="write per-rule histogram CSV+PNG pairs here")
    p_analyze.add_argument("--bin-ms", type=float, default=25.0,
                           help="bin width for --plot-dir histograms")

    p_hist = sub.add_parser("hist", help="histogram of propagation deltas")
    add_log_args(p_hist)
    p_hist.add_argument("--bin-ms", type=float, default=25.0)
    p_hist.add_argument("--op", choices=[op.value for op in Op], help="child op filter")
    p_hist.add_argument("--parent-resource", help="only edges from this resource")
    p_hist.add_argument("--child-resource", help="only edges to this resource")
    p_hist.add_argument("--csv", help="write histogram CSV")
    p_hist.add_argument("--png", help="render histogram figure")

    p_comp = sub.add_parser("completion", help="first/last child delta for one parent event")
    add_log_args(p_comp, with_mode=False)
    p_comp.add_argument("--op", choices=[op.value for op in Op], required=True)
    p_comp.add_argument("--parent-uid")
    p_comp.add_argument("--parent-resource")
    p_comp.add_argument("--parent-name")
    p_comp.add_argument("--parent-namespace", default="default")
    p_comp.add_argument("--expected", type=int)
    p_comp.add_argument("--csv")

    p_edges = sub.add_parser("edges", help="resolve object-level dependency edges")
    add_log_args(p_edges, with_mode=False)
    p_edges.add_argument("--csv")

    p_val = sub.add_parser("validate", help="check config/scenario/deps files")
    p_val.add_argument("--deps")
    p_val.add_argument("--scenario")
    p_val.add_argument("--config")

    return parser


def _load_logs(patterns: list[str], lenient: bool) -> tuple[list[LogEntry], list[Path]]:
    files: list[Path] = []
    for pattern in patterns:
        matched = sorted(glob.glob(pattern))
        files.extend(Path(m) for m in matched if Path(m) not in files)
    if not files:
        raise _CliError(f"no logs match {patterns}")
    per_file = []
    for path in files:
        entries, skipped = aggregator.read_entries(path, lenient=lenient)
        for lineno, reason in skipped:
            print(f"warning: {path}:{lineno}: skipped malformed entry: {reason}", file=sys.stderr)
        per_file.append(entries)
    return aggregator.merge_entries(per_file), files


def _parse_params(pairs: list[str]) -> dict:
    params = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise _CliError(f"--params expects K=V, got {pair!r}")
        if value.lstrip("-").isdigit():
            params[key] = int(value)
        else:
            params[key] = value
    return params


def _cmd_run(args) -> int:
    if args.out is None:
        raise _CliError("run: --out is required (or set PROPWATCH_OUT)")
    config = load_run_config(args.config) if args.config else RunConfig()
    deadline_ns = int(args.deadline_ms * MS) if args.deadline_ms is not None else None
    if args.snapshot:
        result = runner.run_from_snapshot(args.snapshot, args.out, clock_mode=args.clock)
    else:
        if not args.scenario:
            raise _CliError("run: --scenario or --snapshot is required")
        if args.scenario.startswith("builtin:"):
            scenario = runner.builtin_scenario(
                args.scenario[len("builtin:"):], _parse_params(args.params)
            )
        else:
            scenario = runner.load_scenario(args.scenario)
        result = runner.run_scenario(
            scenario,
            config,
            args.out,
            seed=args.seed,
            clock_mode=args.clock,
            repeat=args.repeat,
            deadline_ns=deadline_ns,
        )
    for rep in result.reps:
        state = "converged" if rep.converged else f"INCOMPLETE ({rep.detail})"
        print(f"{rep.log_path}: {state}")
    print(f"run directory: {result.out_dir}")
    return EXIT_OK if result.converged else EXIT_TIMEOUT


def _correlated(args, mode_attr="mode"):
    entries, _ = _load_logs(args.logs, args.lenient)
    rules = deps.load_rules(args.deps)
    edges = deps.resolve_edges(entries, rules)
    mode = MatchMode.SAME_OP
    if getattr(args, mode_attr, "sameop") == "causal":
        mode = MatchMode.CAUSAL_LATEST
    return entries, edges, aggregator.correlate(entries, edges, mode)


def _cmd_analyze(args) -> int:
    entries, edges, result = _correlated(args)
    print(f"{len(entries)} entries, {len(edges)} edges, "
          f"{len(result.records)} records, {len(result.orphans)} orphans")
    rows = aggregator.summarize_records(result.records)
    if rows:
        print(f"{'rule':<40} {'op':<8} {'count':>7} {'min_ms':>10} {'median_ms':>10} {'max_ms':>10}")
        for rule_desc, op, count, lo, med, hi in rows:
            print(f"{rule_desc:<40} {op.value:<8} {count:>7} {lo:>10.3f} {med:>10.3f} {hi:>10.3f}")
    if args.csv:
        aggregator.write_records_csv(result.records, args.csv)
        print(f"records CSV: {args.csv}")
    if args.orphans_csv:
        aggregator.write_orphans_csv(result.orphans, args.orphans_csv)
        print(f"orphans CSV: {args.orphans_csv}")
    if args.plot_dir:
        from . import report

        plot_dir = Path(args.plot_dir)
        plot_dir.mkdir(parents=True, exist_ok=True)
        bin_ns = int(args.bin_ms * MS)
        groups: dict[tuple, list] = {}
        for record in result.records:
            key = (record.edge.rule, record.child_op)
            groups.setdefault(key, []).append(record)
        for (rule, op), records in sorted(
            groups.items(), key=lambda kv: (kv[0][0].describe(), kv[0][1].value)
        ):
            hist = aggregator.histogram(records, bin_ns)
            stem = f"{rule.kind.value}-{rule.parent_resource}-{rule.child_resource}-{op.value}".lower()
            aggregator.write_histogram_csv(hist, plot_dir / f"{stem}.csv")
            report.render_histogram_png(
                hist,
                plot_dir / f"{stem}.png",
                title=f"{op.value} {rule.parent_resource} -> {rule.child_resource}",
            )
            print(f"plot: {plot_dir / (stem + '.png')}")
    return EXIT_OK


def _cmd_hist(args) -> int:
    _, edges, result = _correlated(args)
    records = result.records
    if args.op:
        records = [r for r in records if r.child_op is Op(args.op)]
    if args.parent_resource:
        records = [r for r in records if r.edge.rule.parent_resource == args.parent_resource]
    if args.child_resource:
        records = [r for r in records if r.edge.rule.child_resource == args.child_resource]
    hist = aggregator.histogram(records, int(args.bin_ms * MS))
    print(f"{len(records)} records in {len(hist.counts)} bins of {args.bin_ms} ms")
    for k, count in enumerate(hist.counts):
        print(f"{aggregator.format_ms(k * hist.bin_width_ns):>10} ms  {count}")
    if args.csv:
        aggregator.write_histogram_csv(hist, args.csv)
        print(f"histogram CSV: {args.csv}")
    if args.png:
        from . import report

        report.render_histogram_png(hist, args.png)
        print(f"histogram PNG: {args.png}")
    return EXIT_OK


def _cmd_completion(args) -> int:
    entries, _ = _load_logs(args.logs, args.lenient)
    rules = deps.load_rules(args.deps)
    edges = deps.resolve_edges(entries, rules)
    parent_uid = args.parent_uid
    if parent_uid is None:
        if not (args.parent_resource and args.parent_name):
            raise _CliError("completion: need --parent-uid or --parent-resource/--parent-name")
        candidates = [
            e.obj.meta.uid
            for e in entries
            if e.obj.resource == args.parent_resource
            and e.obj.meta.namespace == args.parent_namespace
            and e.obj.meta.name == args.parent_name
        ]
        if not candidates:
            raise _CliError(
                f"completion: no entries for {args.parent_resource}/"
                f"{args.parent_namespace}/{args.parent_name}"
            )
        parent_uid = candidates[-1]
    report_row = aggregator.completion(entries, edges, parent_uid, Op(args.op), args.expected)
    print(
        f"parent {report_row.parent_uid} {report_row.op.value}: "
        f"{report_row.child_count} children"
        + (f" (expected {report_row.expected_child_count})" if args.expected is not None else "")
        + f", first {report_row.first_child_delta_ns / MS:.3f} ms,"
        f" last {report_row.last_child_delta_ns / MS:.3f} ms,"
        f" {'complete' if report_row.complete else 'INCOMPLETE'}"
    )
    if args.csv:
        aggregator.write_completion_csv([report_row], args.csv)
        print(f"completion CSV: {args.csv}")
    return EXIT_OK


def _cmd_edges(args) -> int:
    entries, _ = _load_logs(args.logs, args.lenient)
    rules = deps.load_rules(args.deps)
    edges = deps.resolve_edges(entries, rules)
    names: dict[str, str] = {}
    for entry in entries:
        names[entry.obj.meta.uid] = entry.obj.meta.name
    print(f"{len(edges)} edges")
    for edge in edges:
        print(
            f"{edge.rule.kind.value:<12} "
            f"{edge.rule.parent_resource}/{names.get(edge.parent_uid, '?')} [{edge.parent_uid}]"
            f" -> {edge.rule.child_resource}/{names.get(edge.child_uid, '?')} [{edge.child_uid}]"
        )
    if args.csv:
        try:
            with open(args.csv, "w", encoding="utf-8") as f:
                f.write("rule_kind,parent_resource,parent_name,parent_uid,"
                        "child_resource,child_name,child_uid\n")
                for edge in edges:
                    f.write(
                        f"{edge.rule.kind.value},{edge.rule.parent_resource},"
                        f"{names.get(edge.parent_uid, '')},{edge.parent_uid},"
                        f"{edge.rule.child_resource},{names.get(edge.child_uid, '')},"
                        f"{edge.child_uid}\n"
                    )
        except OSError as exc:
            raise _CliError(f"cannot write {args.csv}: {exc}") from None
        print(f"edges CSV: {args.csv}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    checked = False
    if args.deps:
        rules = deps.load_rules(args.deps)
        print(f"{args.deps}: {len(rules)} rules ok")
        checked = True
    if args.scenario:
        scenario = runner.load_scenario(args.scenario)
        print(f"{args.scenario}: scenario '{scenario.name}' ok ({len(scenario.steps)} steps)")
        checked = True
    if args.config:
        load_run_config(args.config)
        print(f"{args.config}: config ok")
        checked = True
    if not checked:
        raise _CliError("validate: pass at least one of --deps/--scenario/--config")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "analyze": _cmd_analyze,
    "hist": _cmd_hist,
    "completion": _cmd_completion,
    "edges": _cmd_edges,
    "validate": _cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except PropwatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
