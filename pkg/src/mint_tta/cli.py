"""Command-line interface: diagnostics, theory sweeps, adaptation runs,
and the self-verification suite.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
"""

import argparse
import re
import sys
import time
from pathlib import Path

import numpy as np

from .config import load_config, resolve_threads, write_sidecar
from .dump_io import read_dump, write_csv
from .engine import MintConfig, predict
from .errors import DataError, UsageError, VerificationFailure
from .metrics import compute_variance_report
from .runner import (
    BATCH_CSV_HEADER,
    SUMMARY_CSV_HEADER,
    materialize_stream,
    run_adaptation,
    run_dump_adaptation,
    summary_row,
)
from .synthetic import NormWeights
from .theory import gt_limits, mc_measure
from .verify import run_verify

DIAG_CSV_HEADER = (
    "severity", "corruption_tag", "gt_total", "gt_inter", "gt_intra",
    "pl_total", "pl_inter", "pl_intra", "accuracy", "seed",
)
SWEEP_CSV_HEADER = (
    "severity", "seed", "n", "cf_inter", "cf_intra", "mc_inter", "mc_intra",
    "abs_gap_inter", "rel_gap_inter", "abs_gap_intra", "rel_gap_intra",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _tag_of(path) -> str:
    stem = Path(path).stem
    return stem.split("__", 1)[1] if "__" in stem else stem


def _severity_of(tag: str):
    if tag == "clean":
        return 0.0
    m = re.fullmatch(r"s(\d+(?:\.\d+)?)", tag)
    return float(m.group(1)) if m else None


def cmd_diag(args) -> int:
    rows = []
    for path in args.input:
        emb, text = read_dump(path)
        if emb.labels is None and not args.pseudo_text:
            raise DataError(f"{path}: nothing to compute (no labels; pass --pseudo-text "
                            "to use argmax predictions)")
        if args.pseudo_text and text is None:
            raise DataError(f"{path}: --pseudo-text requires text embeddings in the dump")
        tag = _tag_of(path)
        severity = _severity_of(tag)

        gt_cells = (None, None, None)
        if emb.labels is not None:
            r = compute_variance_report(emb, emb.labels)
            gt_cells = (r.total, r.inter, r.intra)
        pl_cells = (None, None, None)
        accuracy = None
        if text is not None:
            pl, _ = predict(emb, text)
            r = compute_variance_report(emb, pl)
            pl_cells = (r.total, r.inter, r.intra)
            if emb.labels is not None:
                accuracy = float(np.mean(pl == emb.labels))
        rows.append((severity, tag, *gt_cells, *pl_cells, accuracy, None))
    write_csv(args.output, DIAG_CSV_HEADER, rows)
    _write_args_sidecar(args.output, "diag", inputs=",".join(str(p) for p in args.input),
                        pseudo_text=str(args.pseudo_text))
    print(f"wrote {len(rows)} row(s) to {args.output}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.n_samples:
        cfg.n_samples = args.n_samples
    if args.seeds:
        cfg.seeds = [int(s) for s in args.seeds.split(",")]
    threads = resolve_threads(args.threads)
    rows = []
    for severity in cfg.severities:
        p = cfg.latent_params(float(severity))
        cf_inter, cf_intra = gt_limits(p)
        for seed in cfg.seeds:
            m = mc_measure(p, NormWeights.ones_for(p), cfg.n_samples, seed=int(seed),
                           threads=threads)
            gap_inter = abs(m.gt_report.inter - cf_inter)
            gap_intra = abs(m.gt_report.intra - cf_intra)
            rows.append((
                severity, seed, cfg.n_samples, cf_inter, cf_intra,
                m.gt_report.inter, m.gt_report.intra,
                gap_inter, gap_inter / cf_inter, gap_intra, gap_intra / cf_intra,
            ))
    write_csv(args.output, SWEEP_CSV_HEADER, rows)
    write_sidecar(cfg, str(args.output) + ".config.ini", command="sweep")
    print(f"wrote {len(rows)} row(s) to {args.output}")
    return 0


def _mint_config(cfg, args, batch_size: int) -> MintConfig:
    return MintConfig(
        learning_rate=cfg.learning_rate,
        k_prior=cfg.k_prior,
        batch_size=batch_size,
        use_mean_acc=not args.no_mean_acc,
        use_grad_acc=not args.no_grad_acc,
        use_text_adjust=not args.no_text_adjust,
        global_count_blend=args.text_blend_global,
    )


def cmd_adapt(args) -> int:
    cfg = load_config(args.config)
    for name in ("severity", "contamination", "n_batches", "seed", "learning_rate",
                 "k_prior", "mode", "input"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    batch_sizes = ([int(b) for b in args.batch_size.split(",")] if args.batch_size
                   else [cfg.batch_size])

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)

    if cfg.mode == "dump":
        if not cfg.input:
            raise UsageError("dump mode needs --input")
        emb, text = read_dump(cfg.input)
        if text is None:
            raise DataError(f"{cfg.input}: dump-mode adaptation requires text embeddings")
        prebuilt = None
    elif cfg.mode == "synthetic":
        params = cfg.latent_params(cfg.severity)
        n_total = cfg.n_batches * cfg.batch_size
        prebuilt = materialize_stream(params, n_total, cfg.seed)
    else:
        raise UsageError(f"unknown mode {cfg.mode!r}")

    summary = []
    for bs in batch_sizes:
        if cfg.mode == "dump":
            result = run_dump_adaptation(emb, text, bs, _mint_config(cfg, args, bs), seed=cfg.seed)
        else:
            result = run_adaptation(params, cfg.contamination, cfg.n_batches, bs, cfg.seed,
                                    _mint_config(cfg, args, bs), prebuilt_stream=prebuilt)
        write_csv(outdir / f"batches_bs{bs}.csv", BATCH_CSV_HEADER, result.batch_rows)
        summary.append(summary_row(result))
        print(f"batch_size={bs}: zero-shot {result.zero_shot_accuracy:.4f} "
              f"adapted {result.adapted_accuracy:.4f}")
    write_csv(outdir / "summary.csv", SUMMARY_CSV_HEADER, summary)
    write_sidecar(cfg, outdir / "resolved_config.ini", command="adapt")
    return 0


def cmd_verify(args) -> int:
    threads = resolve_threads(args.threads)
    started = time.perf_counter()
    results = run_verify(args.level, threads=threads)
    elapsed = time.perf_counter() - started
    width = max(len(r.name) for r in results)
    print(f"{'suite'.ljust(width)}  status  time     detail")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name.ljust(width)}  {status}    {r.seconds:6.2f}s  {r.detail}")
    print(f"total: {elapsed:.2f}s")
    if args.level == "quick" and elapsed > 60.0:
        print("warning: quick level exceeded its 60 s budget", file=sys.stderr)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationFailure("failing suites: " + ", ".join(failed))
    return 0


def _write_args_sidecar(output, command: str, **entries):
    import configparser

    parser = configparser.ConfigParser()
    parser["meta"] = {"command": command, **entries}
    with open(str(output) + ".config.ini", "w", encoding="utf-8") as fh:
        parser.write(fh)


def build_parser() -> _Parser:
    parser = _Parser(prog="mint", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_diag = sub.add_parser("diag", help="variance metrics over embedding dumps")
    p_diag.add_argument("--input", nargs="+", required=True, help="dump file(s)")
    p_diag.add_argument("--output", required=True, help="CSV path")
    p_diag.add_argument("--pseudo-text", action="store_true",
                        help="compute pseudo-label metrics from the dump's text embeddings")
    p_diag.set_defaults(func=cmd_diag)

    p_sweep = sub.add_parser("sweep", help="closed-form vs Monte Carlo severity sweep")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--output", required=True, help="CSV path")
    p_sweep.add_argument("--n-samples", type=int, default=None)
    p_sweep.add_argument("--seeds", default=None, help="comma-separated seed list")
    p_sweep.add_argument("--threads", type=int, default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_adapt = sub.add_parser("adapt", help="online adaptation over a stream")
    p_adapt.add_argument("--config", default=None)
    p_adapt.add_argument("--output", default="mint_adapt_out", help="output directory")
    p_adapt.add_argument("--batch-size", default=None,
                         help="batch size or comma list; a list reuses one stream")
    p_adapt.add_argument("--severity", type=float, default=None)
    p_adapt.add_argument("--contamination", type=float, default=None)
    p_adapt.add_argument("--n-batches", type=int, default=None)
    p_adapt.add_argument("--seed", type=int, default=None)
    p_adapt.add_argument("--learning-rate", type=float, default=None)
    p_adapt.add_argument("--k-prior", type=float, default=None)
    p_adapt.add_argument("--mode", choices=("synthetic", "dump"), default=None)
    p_adapt.add_argument("--input", default=None, help="dump path (dump mode)")
    p_adapt.add_argument("--no-text-adjust", action="store_true")
    p_adapt.add_argument("--no-grad-acc", action="store_true")
    p_adapt.add_argument("--no-mean-acc", action="store_true")
    p_adapt.add_argument("--text-blend-global", action="store_true",
                         help="blend text embeddings by the global count instead of per-class")
    p_adapt.set_defaults(func=cmd_adapt)

    p_verify = sub.add_parser("verify", help="run the self-verification suites")
    p_verify.add_argument("--level", choices=("quick", "full"), default="quick")
    p_verify.add_argument("--threads", type=int, default=None)
    p_verify.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
