"""Command line interface wiring the pipeline together.

Subcommands: ingest, split, fit, evaluate, compare, analyze, synth,
validate.  Exit codes: 0 success, 1 usage error, 2 data error,
3 training failure.  Model kinds are spelled lf/a/b/c/d on the command
line: flat, community-uniform, user-uniform, community-learned,
user-learned.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis as analysis_mod
from . import validate as validate_mod
from .assign import ModelKind
from .dataset import (
    DataError,
    Dataset,
    FormatConfig,
    SplitScheme,
    SplitSpec,
    TrainingError,
    parse_reviews,
    pool_infrequent_users,
    split,
    write_reviews,
    write_split_manifest,
)
from .evaluator import compare, mse
from .synth import SynthConfig, TrajectoryKind, generate
from .trainer import DEFAULT_LAMBDA_GRID, FittedModel, TrainConfig, fit
from .model import params_to_level_dicts

MODEL_CHOICES = [k.value for k in ModelKind]


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_format_flags(p: argparse.ArgumentParser, scale_default: float = 5.0):
    p.add_argument("--delimiter", default="\t")
    p.add_argument("--user-col", default="user")
    p.add_argument("--item-col", default="item")
    p.add_argument("--rating-col", default="rating")
    p.add_argument("--timestamp-col", default="timestamp")
    p.add_argument("--scale-max", type=float, default=scale_default)


def _format_config(args, scale_max=None) -> FormatConfig:
    return FormatConfig(
        delimiter=args.delimiter,
        user_col=args.user_col,
        item_col=args.item_col,
        rating_col=args.rating_col,
        timestamp_col=args.timestamp_col,
        scale_max=args.scale_max if scale_max is None else scale_max,
    )


def _load_dataset(path, args) -> Dataset:
    return parse_reviews(path, _format_config(args))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exprec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[], help="parse, normalize, and pool a raw review file")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-ratings", type=int, default=50,
                   help="users below this rating count are pooled into a background pseudo-user")
    _add_format_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="write train/validation/test files plus a manifest")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scheme", choices=[s.value for s in SplitScheme], default="random")
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--validation-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    _add_format_flags(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fit", help="train one model kind with lambda selected on validation")
    p.add_argument("--input", required=True, help="training ratings file")
    p.add_argument("--valid", required=True, help="validation ratings file")
    p.add_argument("--model", choices=MODEL_CHOICES, default=None)
    p.add_argument("--E", type=int, default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lambda-grid", default=None,
                   help="comma-separated smoothness weights, e.g. '1,10,100'")
    p.add_argument("--max-outer-iters", type=int, default=None)
    p.add_argument("--inner-tolerance", type=float, default=None)
    p.add_argument("--inner-max-iters", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON file with the same keys; flags override")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_format_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="test MSE of a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--scheme", default=None)
    p.add_argument("--out", required=True)
    _add_format_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="MSE table and benefit rows for several models")
    p.add_argument("--model", action="append", required=True, dest="models")
    p.add_argument("--test", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--out", default=None, help="CSV destination; stdout when omitted")
    _add_format_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="expert/novice analyses as CSV tables")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--genres", default=None, help="two-column file: item, genre")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-ratings", type=int, default=50)
    p.add_argument("--min-cohort", type=int, default=5)
    p.add_argument("--window", type=float, default=0.5)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--gap", type=int, default=182 * 86400)
    p.add_argument("--prefixes", default="10,100")
    _add_format_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="generate a synthetic corpus with known ground truth")
    p.add_argument("--config", default=None, help="JSON file of generator settings")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--users", type=int, default=None)
    p.add_argument("--items", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="run the invariant suite on a model and corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_format_flags(p)
    p.set_defaults(func=cmd_validate)

    return parser


def cmd_ingest(args) -> int:
    d = parse_reviews(args.input, _format_config(args))
    if d.duplicates_dropped:
        print(f"dropped {d.duplicates_dropped} duplicate (user, item) rows", file=sys.stderr)
    pooled = pool_infrequent_users(d, args.min_ratings)
    if pooled.background_user:
        n_bg = len(pooled.user_index[pooled.background_user])
        print(f"pooled {n_bg} ratings into {pooled.background_user}", file=sys.stderr)
    # output is on the normalized scale: read it back with --scale-max 5
    write_reviews(pooled, args.out)
    return 0


def cmd_split(args) -> int:
    d = _load_dataset(args.input, args)
    spec = SplitSpec(
        scheme=SplitScheme(args.scheme),
        test_fraction=args.test_fraction,
        validation_fraction=args.validation_fraction,
        seed=args.seed,
    )
    train, valid, test = split(d, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_reviews(train, out / "train.tsv")
    write_reviews(valid, out / "valid.tsv")
    write_reviews(test, out / "test.tsv")
    write_split_manifest(
        out / "split.json", spec, {"train": train, "validation": valid, "test": test}
    )
    return 0


def _train_config(args) -> TrainConfig:
    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))

    def pick(flag_value, key, default):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key, default)

    grid = pick(args.lambda_grid, "lambda_grid", None)
    if isinstance(grid, str):
        grid = tuple(float(x) for x in grid.split(","))
    elif grid is not None:
        grid = tuple(float(x) for x in grid)
    else:
        grid = DEFAULT_LAMBDA_GRID
    return TrainConfig(
        E=int(pick(args.E, "E", 5)),
        K=int(pick(args.K, "K", 5)),
        lambda_grid=grid,
        max_outer_iters=int(pick(args.max_outer_iters, "max_outer_iters", 50)),
        inner_tolerance=float(pick(args.inner_tolerance, "inner_tolerance", 1e-6)),
        inner_max_iters=int(pick(args.inner_max_iters, "inner_max_iters", 1000)),
        seed=int(pick(args.seed, "seed", 0)),
        model_kind=ModelKind(pick(args.model, "model_kind", "d")),
    )


def cmd_fit(args) -> int:
    train = _load_dataset(args.input, args)
    valid = _load_dataset(args.valid, args)
    cfg = _train_config(args)

    def progress(lam, it, obj, changed):
        print(f"iter={it} obj={obj:.8g} changed={changed}", file=sys.stderr)

    model = fit(
        train,
        valid,
        cfg,
        progress=None if args.threads > 1 else progress,
        threads=args.threads,
    )
    model.save(args.out)
    print(f"selected lambda={model.lam}", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    model = FittedModel.load(args.model)
    test = _load_dataset(args.test, args)
    train = _load_dataset(args.train, args)
    report = mse(model, test, train, scheme=args.scheme)
    Path(args.out).write_text(json.dumps(report.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_compare(args) -> int:
    models = [FittedModel.load(path) for path in args.models]
    test = _load_dataset(args.test, args)
    train = _load_dataset(args.train, args)
    result = compare(models, test, train)
    rows = [["kind", "lambda", "mse", "std_error"]]
    for row in result.rows:
        rows.append([row.kind, repr(row.lam), repr(row.mse), repr(row.std_error)])
    for name, value in result.benefits.items():
        rows.append([f"benefit_{name}", "", f"{value:.2f}%", ""])
    text = "\n".join(",".join(str(c) for c in r) for r in rows) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_genres(path) -> dict[str, str]:
    genres = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"genres file line {line_no}: expected 2 columns")
            if line_no == 1 and parts[0].strip().lower() == "item":
                continue
            genres[parts[0].strip()] = parts[1].strip()
    return genres


def cmd_analyze(args) -> int:
    model = FittedModel.load(args.model)
    train = _load_dataset(args.train, args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if model.params.E >= 2:
        scores = analysis_mod.acquired_taste_scores(model, train, args.min_ratings)
        _write_csv(
            out / "taste_scores.csv",
            ["item", "d", "beginner_bias", "expert_bias", "mean_rating", "n_ratings"],
            [
                [s.item, repr(s.d), repr(s.beginner_bias), repr(s.expert_bias),
                 repr(s.mean_rating), s.n_ratings]
                for s in scores
            ],
        )
        if args.genres:
            summary = analysis_mod.genre_bias_summary(scores, _load_genres(args.genres))
            _write_csv(
                out / "genre_summary.csv",
                ["genre", "mean_beginner_bias", "mean_expert_bias", "mean_d", "n_items"],
                [
                    [g.genre, repr(g.mean_beginner_bias), repr(g.mean_expert_bias),
                     repr(g.mean_d), g.n_items]
                    for g in summary
                ],
            )
    else:
        print("skipping taste scores: model has a single level", file=sys.stderr)

    agreement = analysis_mod.agreement_variance(
        model, train, min_cohort=args.min_cohort, window=args.window, step=args.step
    )
    _write_csv(
        out / "agreement.csv",
        ["experience", "mean_variance", "n_cohorts"],
        [[repr(a.experience), repr(a.mean_variance), a.n_cohorts] for a in agreement],
    )

    if model.kind.is_learned:
        rows, counts = analysis_mod.progression_stats(model, train)
        _write_csv(
            out / "progression.csv",
            ["cohort", "level", "median_cum_time", "median_cum_count", "n_users"],
            [[r.cohort, r.level, repr(r.median_cum_time), repr(r.median_cum_count), r.n_users]
             for r in rows],
        )
        print(f"progression cohorts: {counts}", file=sys.stderr)
    else:
        print("skipping progression: schedule-driven model kind", file=sys.stderr)

    retention_rows = []
    for prefix in (int(x) for x in args.prefixes.split(",")):
        for point in analysis_mod.retention_curves(model, train, gap=args.gap, prefix=prefix):
            retention_rows.append(
                [prefix, point.cohort, point.rating_index, repr(point.mean_level), point.n_users]
            )
    _write_csv(
        out / "retention.csv",
        ["prefix", "cohort", "rating_index", "mean_level", "n_users"],
        retention_rows,
    )
    return 0


def cmd_synth(args) -> int:
    kwargs = {}
    if args.config:
        kwargs = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if "trajectory_kind" in kwargs:
            kwargs["trajectory_kind"] = TrajectoryKind(kwargs["trajectory_kind"])
        if "ratings_per_user" in kwargs and isinstance(kwargs["ratings_per_user"], list):
            kwargs["ratings_per_user"] = tuple(kwargs["ratings_per_user"])
        if "level_drift" in kwargs and isinstance(kwargs["level_drift"], list):
            kwargs["level_drift"] = tuple(kwargs["level_drift"])
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.users is not None:
        kwargs["n_users"] = args.users
    if args.items is not None:
        kwargs["n_items"] = args.items
    cfg = SynthConfig(**kwargs)
    dataset, truth = generate(cfg)
    write_reviews(dataset, args.out)
    truth_doc = {
        "true_params": {
            "E": truth.true_params.E,
            "K": truth.true_params.K,
            "levels": params_to_level_dicts(truth.true_params),
        },
        "true_levels": {u: [int(x) for x in lv] for u, lv in sorted(truth.true_levels.levels.items())},
        "leaver_flags": dict(sorted(truth.leaver_flags.items())),
        "clamp_count": truth.clamp_count,
        "n_ratings": truth.n_ratings,
    }
    Path(args.truth).write_text(json.dumps(truth_doc) + "\n", encoding="utf-8")
    print(
        f"generated {truth.n_ratings} ratings, clamped {truth.clamp_count} "
        f"({100.0 * truth.clamp_fraction:.2f}%)",
        file=sys.stderr,
    )
    return 0


def cmd_validate(args) -> int:
    model = FittedModel.load(args.model)
    train = _load_dataset(args.train, args)
    results = validate_mod.run_all(model.kind, train, model.assignment, seed=args.seed)
    width = max(len(r.name) for r in results)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name.ljust(width)}  {status}  {r.detail}")
        if not r.passed:
            failed = True
            print(r.detail, file=sys.stderr)
    return 2 if failed else 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse signals usage problems (and --help) via SystemExit
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
