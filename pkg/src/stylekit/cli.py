"""stylekit command line: plan, sample, metrics, filter, rank, report, ablate.

Exit status 0 on success, 1 on any validation or usage error, 2 on internal
errors. All randomness flows through --seed (default: STYLEKIT_SEED env var,
then 0); relative paths resolve against --workdir.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import errors, identity_sampler, judgment_aggregator, reporting, store, style_metrics, token_planner, validity_filter


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise errors.UsageError(message)


def _default_seed() -> int:
    try:
        return int(os.environ.get("STYLEKIT_SEED", "0"))
    except ValueError:
        raise errors.UsageError("STYLEKIT_SEED must be an integer") from None


def build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="stylekit", description=__doc__)
    parser.add_argument("--workdir", default=".", help="base directory for relative paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="assign shared and specific training tokens")
    p.add_argument("--vocab", required=True)
    p.add_argument("--n", type=int, required=True, help="number of training characters")
    p.add_argument("--strategy", choices=["rarest", "clustered"], default="rarest")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pool-size", type=int, default=None, help="limit the clustered candidate pool")
    p.add_argument("--class-descriptor", default="style")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="draw generation identities")
    p.add_argument("--plan", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--mode", choices=["token", "univar", "multivar"], required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--start-index", type=int, default=0)
    p.add_argument("--match-token-norm", action="store_true",
                   help="rescale sampled vectors to the mean pool embedding norm")
    p.add_argument("--out", required=True)

    p = sub.add_parser("metrics", help="fidelity and diversity for a generated set")
    p.add_argument("--gen", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("filter", help="run the four-stage validity filter")
    p.add_argument("--gen", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--copy-threshold", type=float, default=None)
    p.add_argument("--defective-threshold", type=float, default=None)
    p.add_argument("--duplicate-threshold", type=float, default=0.98)
    p.add_argument("--subject-counts", default=None)
    p.add_argument("--overrides", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--histogram", action="store_true",
                   help="print similarity/fidelity histograms for threshold calibration")

    p = sub.add_parser("rank", help="aggregate human judgments into rankings")
    p.add_argument("--comparisons", default=None)
    p.add_argument("--ratings", default=None)
    p.add_argument("--tie-policy", choices=["half_win", "drop"], default="half_win")
    p.add_argument("--format", choices=["markdown", "csv", "json"], default="markdown")
    p.add_argument("--out", default=None)

    for name, help_text in (
        ("report", "assemble breakdown and metric tables from run artifacts"),
        ("ablate", "report over the four-variant training ablation matrix"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--runs", required=True)
        p.add_argument("--artifacts", required=True)
        p.add_argument("--format", choices=["markdown", "csv", "json"], default="markdown")
        p.add_argument("--out", default=None)

    return parser


def _resolve(workdir: Path, p) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else workdir / p


def _write_or_print(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _cmd_plan(args, wd: Path) -> int:
    vocab = store.load_vocabulary(_resolve(wd, args.vocab))
    seed = args.seed if args.seed is not None else _default_seed()
    if args.strategy == "rarest":
        plan = token_planner.select_rarest(vocab, args.n)
        plan = dataclasses.replace(plan, seed=seed, class_descriptor=args.class_descriptor)
    else:
        plan = token_planner.select_clustered(vocab, args.n, seed, pool_size=args.pool_size)
        plan = dataclasses.replace(plan, class_descriptor=args.class_descriptor)
    out = token_planner.save_plan(plan, _resolve(wd, args.out))
    print(f"wrote plan for {plan.n_characters} characters to {out}")
    return 0


def _cmd_sample(args, wd: Path) -> int:
    if args.count < 0:
        raise errors.UsageError("--count must be non-negative")
    plan = token_planner.load_plan(_resolve(wd, args.plan))
    vocab = store.load_vocabulary(_resolve(wd, args.vocab))
    seed = args.seed if args.seed is not None else _default_seed()
    exclude = plan.assigned_tokens()
    indices = range(args.start_index, args.start_index + args.count)
    if args.mode == "token":
        payloads = [identity_sampler.sample_token(vocab, exclude, seed, i) for i in indices]
    else:
        stats = identity_sampler.fit_embedding_stats(vocab, exclude)
        target = None
        if args.match_token_norm:
            target = identity_sampler.mean_pool_norm(vocab, exclude)
        draw = (
            identity_sampler.sample_univariate
            if args.mode == "univar"
            else identity_sampler.sample_multivariate
        )
        payloads = [draw(stats, seed, i, target_norm=target) for i in indices]
    out = identity_sampler.write_identities(payloads, _resolve(wd, args.out))
    print(f"wrote {len(payloads)} identities to {out}")
    return 0


def _cmd_metrics(args, wd: Path) -> int:
    gen = store.load_image_set(_resolve(wd, args.gen))
    refs = store.load_image_set(_resolve(wd, args.refs))
    if gen.style_embeddings is None or refs.style_embeddings is None:
        raise errors.MissingEmbeddingSpace("metrics need style-space embeddings on both sets")
    if gen.clip_embeddings is None:
        raise errors.MissingEmbeddingSpace("diversity needs identity-space embeddings on the generated set")
    fid = style_metrics.fidelity(gen.style_embeddings, refs.style_embeddings)
    div = style_metrics.diversity(gen.clip_embeddings)
    doc = {
        "fidelity": fid.value,
        "diversity": div.value,
        "n": fid.n_generated,
        "m": fid.m_reference,
        "space": {"fidelity": fid.space, "diversity": div.space},
    }
    out = _resolve(wd, args.out)
    out.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"fidelity {fid.value:.6f} diversity {div.value:.6f} -> {out}")
    return 0


def _print_histograms(gen, refs) -> None:
    hists = validity_filter.score_histograms(gen, refs)
    for name, data in hists.items():
        print(f"{name}:")
        peak = max(data["counts"]) or 1
        for count, lo, hi in zip(data["counts"], data["edges"], data["edges"][1:]):
            bar = "#" * round(40 * count / peak)
            print(f"  [{lo:.3f}, {hi:.3f}) {count:6d} {bar}")


def _cmd_filter(args, wd: Path) -> int:
    gen = store.load_image_set(_resolve(wd, args.gen))
    refs = store.load_image_set(_resolve(wd, args.refs))
    if args.histogram:
        _print_histograms(gen, refs)
        if args.copy_threshold is None and args.defective_threshold is None:
            return 0
    if args.copy_threshold is None or args.defective_threshold is None:
        raise errors.UsageError("--copy-threshold and --defective-threshold are required")
    config = validity_filter.FilterConfig(
        copy_threshold=args.copy_threshold,
        defective_threshold=args.defective_threshold,
        duplicate_threshold=args.duplicate_threshold,
        subject_counts_path=_resolve(wd, args.subject_counts),
        manual_overrides_path=_resolve(wd, args.overrides),
    )
    report = validity_filter.run_pipeline(gen, refs, config)
    if args.out:
        report.save(_resolve(wd, args.out))
    if args.csv:
        report.to_csv(_resolve(wd, args.csv))
    print(
        f"{len(report.image_order)} images, invalid {report.invalid_pct:.2f}% "
        + " ".join(f"{cat}={report.counts[cat]}" for cat in validity_filter.CATEGORY_ORDER)
    )
    return 0


def _cmd_rank(args, wd: Path) -> int:
    if not args.comparisons and not args.ratings:
        raise errors.UsageError("rank needs --comparisons and/or --ratings")
    tables = []
    if args.comparisons:
        records = store.load_judgments(_resolve(wd, args.comparisons), "comparisons")
        rt = judgment_aggregator.comparison_rank_tables(records, tie_policy=args.tie_policy)
        tables.append(reporting.rank_table(rt))
    if args.ratings:
        records = store.load_judgments(_resolve(wd, args.ratings), "ratings")
        rt = judgment_aggregator.rating_rank_tables(records)
        tables.append(reporting.rank_table(rt))
    _write_or_print(reporting.render_tables(tables, args.format), _resolve(wd, args.out))
    return 0


def _cmd_report(args, wd: Path, variants=None) -> int:
    runs = store.load_runs(_resolve(wd, args.runs))
    tables = reporting.build_report(runs, _resolve(wd, args.artifacts), variants)
    _write_or_print(reporting.render_tables(tables, args.format), _resolve(wd, args.out))
    return 0


_COMMANDS = {
    "plan": _cmd_plan,
    "sample": _cmd_sample,
    "metrics": _cmd_metrics,
    "filter": _cmd_filter,
    "rank": _cmd_rank,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        wd = Path(args.workdir)
        if args.command == "report":
            return _cmd_report(args, wd)
        if args.command == "ablate":
            return _cmd_report(args, wd, variants=store.ABLATION_VARIANTS)
        return _COMMANDS[args.command](args, wd)
    except errors.UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print("run 'stylekit --help' for help", file=sys.stderr)
        return 1
    except errors.StylekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        code = exc.code
        return int(code) if code else 0
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
