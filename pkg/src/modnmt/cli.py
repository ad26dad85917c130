"""Command-line pipeline: gen-corpus -> train -> evaluate -> stats / report.

Every command is idempotent given identical inputs; grid jobs run in worker
processes (``--jobs``) and write to disjoint run directories, so one failed
job never corrupts its siblings. Exit codes: 0 success, 1 user error,
2 internal error; errors go to stderr as single ``error:`` lines.
"""

from __future__ import annotations

import argparse
import fnmatch
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import experiment as exp
from .evaluation import format_summary, read_cells_tsv, write_cells_tsv
from .stats import fit_cells, permutation_importance, report_table, report_tsv


def _load_cfg(args):
    if args.config:
        return exp.load_config(args.config)
    return exp.merge_config({})


def _select_jobs(cfg, pattern):
    jobs = exp.expand_plan(cfg)
    if pattern:
        jobs = [j for j in jobs if fnmatch.fnmatch(j.name, pattern)]
        if not jobs:
            raise exp.ConfigError(f"--filter {pattern!r} matches no jobs")
    return jobs


def _train_worker(payload):
    cfg, job, out = payload
    return exp.run_job(cfg, job, out)


def _eval_worker(payload):
    cfg, job, out = payload
    return exp.evaluate_job(cfg, job, out)


def _run_parallel(worker, payloads, n_workers):
    """Run payloads, isolating failures; returns (results, failures)."""
    results, failures = [], []
    if n_workers <= 1:
        for payload in payloads:
            try:
                results.append(worker(payload))
            except Exception as e:
                failures.append((payload[1].name, str(e)))
        return results, failures
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = {pool.submit(worker, p): p for p in payloads}
        for future, payload in futures.items():
            try:
                results.append(future.result())
            except Exception as e:
                failures.append((payload[1].name, str(e)))
    return results, failures


def cmd_gen_corpus(args):
    cfg = _load_cfg(args)
    splits = exp.generate_and_save_corpus(cfg, args.out)
    for domain in sorted(splits):
        s = splits[domain]
        print(f"{domain}: train={len(s.train)} validation={len(s.validation)} "
              f"test={len(s.test)} pairs")
    print(f"corpus written under {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_cfg(args)
    jobs = _select_jobs(cfg, args.filter)
    print(f"training {len(jobs)} runs with {args.jobs} worker(s)")
    payloads = [(cfg, job, args.out) for job in jobs]
    done, failures = _run_parallel(_train_worker, payloads, args.jobs)
    for name in sorted(done):
        print(f"ok {name}")
    for name, msg in sorted(failures):
        print(f"failed {name}: {msg}", file=sys.stderr)
    return 1 if failures else 0


def cmd_evaluate(args):
    cfg = _load_cfg(args)
    jobs = _select_jobs(cfg, args.filter)
    payloads = [(cfg, job, args.out) for job in jobs]
    results, failures = _run_parallel(_eval_worker, payloads, args.jobs)
    cells = [c for cell_list in results for c in cell_list]
    out_path = os.path.join(args.out, "results.tsv")
    write_cells_tsv(cells, out_path)
    absent = sum(1 for c in cells if c.bleu is None)
    print(f"wrote {len(cells)} cells to {out_path} ({absent} absent)")
    for name, msg in sorted(failures):
        print(f"failed {name}: {msg}", file=sys.stderr)
    return 1 if failures else 0


def cmd_stats(args):
    cells = read_cells_tsv(args.results)
    sections = [("pooled over all test corpora", cells)]
    if args.per_corpus:
        for domain in sorted({c.test_domain for c in cells}):
            sections.append(
                (f"test corpus {domain}",
                 [c for c in cells if c.test_domain == domain]))
    text_parts, tsv_parts = [], []
    for title, subset in sections:
        dm, fit = fit_cells(subset)
        text_parts.append(f"== OLS fit: {title} ==")
        text_parts.append(report_table(fit, dm.labels, header_lines=dm.header_lines()))
        tsv_parts.append(f"# {title}")
        tsv_parts.append(report_tsv(fit, dm.labels))
        if args.importance:
            from .stats import build_design
            dmat, y = build_design(subset)
            text_parts.append(
                "permutation importance (diagnostic plumbing; NOT the effects analysis):")
            for label, drop in permutation_importance(dmat.matrix, y, dmat.labels):
                text_parts.append(f"  {label:<28} R^2 drop {drop:8.4f}")
            text_parts.append("")
    text = "\n".join(text_parts)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "stats.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(os.path.join(args.out, "stats.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(tsv_parts))
    print(text)
    return 0


def cmd_report(args):
    cells = read_cells_tsv(args.results)
    text = format_summary(cells)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="modnmt",
        description="Modular multilingual translation laboratory at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False):
        p.add_argument("--config", help="JSON experiment config (defaults apply)")
        p.add_argument("--out", default="out", help="output root directory")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="parallel worker count")
            p.add_argument("--filter", help="glob over job names like L-pvlb-alpha-s0")

    common(sub.add_parser("gen-corpus", help="generate corpus, splits, and manifest"))
    common(sub.add_parser("train", help="train grid jobs"), jobs=True)
    common(sub.add_parser("evaluate", help="score checkpoints into results.tsv"), jobs=True)

    stats_p = sub.add_parser("stats", help="OLS coefficient table from results.tsv")
    stats_p.add_argument("--results", required=True)
    stats_p.add_argument("--out", default="out")
    stats_p.add_argument("--per-corpus", action="store_true", dest="per_corpus",
                         help="additionally fit each test corpus separately")
    stats_p.add_argument("--importance", action="store_true",
                         help="append a permutation-importance diagnostic")

    report_p = sub.add_parser("report", help="summary table from results.tsv")
    report_p.add_argument("--results", required=True)
    report_p.add_argument("--out", default="out")
    return parser


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (exp.ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # anything else is an internal error
        print(f"internal-error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
