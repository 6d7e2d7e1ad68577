"""Command-line pipeline: estimate-ratio, aggregate, select, bench, probe.

Exit codes are a stable scripting contract: 0 success, 2 input or config
error, 3 numerical failure, 4 I/O failure. Randomness comes only from
explicit ``--seed`` flags or config files, never from the environment, and
fixed seeds plus fixed inputs produce byte-identical output files for any
``--threads`` value.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import aggregation, probe, ratio, selection, synth
from .data import load_bundle, load_embeddings, write_bundle
from .errors import ConfigInvalid, IoFailure, NumericalError, ValidationError
from .serialize import read_csv, read_json, write_csv, write_json

SATURATION_WARN_LEVEL = 0.5


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="shiftagg",
        description=(
            "Importance-weighted model aggregation for unsupervised domain "
            "adaptation under covariate shift."
        ),
    )
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate-ratio", help="fit a density-ratio model")
    p.add_argument("--input", required=True, help="bundle directory")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--config", help="ratio config JSON (ratio.json)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_estimate_ratio)

    p = sub.add_parser("aggregate", help="solve aggregation coefficients")
    p.add_argument("--input", required=True, help="bundle directory")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--beta", help="per-source-sample weight CSV (id,beta)")
    p.add_argument("--ratio", help="fitted ratio model JSON")
    p.add_argument(
        "--analytic",
        action="store_true",
        help="use <input>/analytic_ratio.json as the ratio model",
    )
    p.add_argument(
        "--oracle",
        action="store_true",
        help="aggregate against oracle target labels instead of weights",
    )
    p.add_argument("--lambda", dest="lam", type=float, help="Tikhonov value")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("select", help="compare selection and aggregation")
    p.add_argument("--input", required=True, help="bundle directory")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--beta", help="per-source-sample weight CSV")
    p.add_argument("--ratio", help="fitted ratio model JSON")
    p.add_argument("--analytic", action="store_true")
    p.add_argument("--lambda", dest="lam", type=float)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("bench", help="run the synthetic benchmark suite")
    p.add_argument("--config", help="suite config JSON")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--trials", type=int, help="override trial count")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument(
        "--dump-tasks",
        type=int,
        default=0,
        help="write the first N task bundles in the bundle directory format",
    )
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("probe", help="semantic distance over an embedding dump")
    p.add_argument("--input", required=True, help="embedding dump JSON")
    p.add_argument("--output", help="report JSON path (default: stdout only)")
    p.add_argument("--epsilon", type=float, help="closeness threshold")
    p.add_argument(
        "--lipschitz",
        help="comma-separated Lipschitz constants of the layers above",
    )
    p.set_defaults(func=cmd_probe)

    return top


def _ensure_outdir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {path}: {exc}") from exc
    return path


def _load_beta_csv(path, n_expected: int) -> np.ndarray:
    header, rows = read_csv(path)
    if header[:2] != ["id", "beta"]:
        raise ConfigInvalid(f"{path}: expected header 'id,beta'")
    if len(rows) != n_expected:
        raise ConfigInvalid(
            f"{path}: {len(rows)} weights for {n_expected} source samples"
        )
    return np.asarray([float(r[1]) for r in rows], dtype=np.float64)


def _resolve_ratio_arg(args, bundle):
    """Turn --beta/--ratio/--analytic into a weight source, or None."""
    picked = [
        name
        for name, flag in (
            ("--beta", args.beta),
            ("--ratio", args.ratio),
            ("--analytic", getattr(args, "analytic", False)),
        )
        if flag
    ]
    if len(picked) > 1:
        raise ConfigInvalid(f"flags {picked} are mutually exclusive")
    if args.beta:
        return _load_beta_csv(args.beta, bundle.source.n_samples)
    if args.ratio:
        return ratio.load_ratio_model(args.ratio)
    if getattr(args, "analytic", False):
        return ratio.load_ratio_model(os.path.join(args.input, "analytic_ratio.json"))
    return None


def cmd_estimate_ratio(args) -> int:
    bundle = load_bundle(args.input)
    if bundle.source.features is None or bundle.target.features is None:
        missing = []
        if bundle.source.features is None:
            missing.append("source.csv has no x_1..x_d1 columns")
        if bundle.target.features is None:
            missing.append("target.csv has no x_1..x_d1 columns")
        raise ConfigInvalid(
            "ratio estimation needs features on both samples: " + "; ".join(missing)
        )
    cfg = (
        ratio.RatioFitConfig.from_json_dict(read_json(args.config))
        if args.config
        else ratio.RatioFitConfig()
    )
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    model = ratio.fit_ratio(bundle.source.features, bundle.target.features, cfg)
    beta = ratio.evaluate_ratio(model, bundle.source.features)
    saturation = float(np.mean(beta >= model.bound))

    outdir = _ensure_outdir(args.output)
    ratio.save_ratio_model(model, os.path.join(outdir, "ratio.json"))
    write_csv(
        os.path.join(outdir, "beta.csv"),
        ["id", "beta"],
        ([i, b] for i, b in enumerate(beta)),
    )
    print(
        f"estimate-ratio: kind={model.kind} bound={model.bound:g} "
        f"beta mean={float(np.mean(beta)):.6g} saturation={saturation:.3f}",
        file=sys.stderr,
    )
    if saturation > SATURATION_WARN_LEVEL:
        print(
            f"warning: beta saturation fraction {saturation:.3f} exceeds "
            f"{SATURATION_WARN_LEVEL}; the bound B may be too small",
            file=sys.stderr,
        )
    return 0


def cmd_aggregate(args) -> int:
    bundle = load_bundle(args.input)
    outdir = _ensure_outdir(args.output)

    if args.oracle:
        result = aggregation.oracle_aggregate(
            bundle, 0.0 if args.lam is None else args.lam
        )
        mode = "oracle"
        beta = None
    else:
        weight_source = _resolve_ratio_arg(args, bundle)
        if weight_source is None:
            raise ConfigInvalid(
                "aggregate needs one of --beta, --ratio, --analytic, or --oracle"
            )
        beta, _ = aggregation.resolve_beta(bundle, weight_source)
        result = aggregation.run_aggregation(bundle, beta, args.lam)
        mode = "importance_weighted"

    agg_target = aggregation.aggregate_predict(
        bundle.target_preds, result.coefficients
    )
    d2 = bundle.label_dim
    write_csv(
        os.path.join(outdir, "aggregated_predictions.csv"),
        ["id"] + [f"f_{j + 1}" for j in range(d2)],
        ([i] + list(row) for i, row in enumerate(agg_target)),
    )

    doc = result.to_json_dict()
    doc["mode"] = mode
    reports = {}
    reports["source"] = aggregation.make_risk_report(
        bundle.source_preds, bundle.source.labels, result.coefficients, "source"
    ).to_json_dict()
    if beta is not None:
        reports["importance_weighted"] = aggregation.make_risk_report(
            bundle.source_preds,
            bundle.source.labels,
            result.coefficients,
            "importance_weighted",
            beta=beta,
        ).to_json_dict()
    if bundle.target.oracle_labels is not None:
        reports["target_oracle"] = aggregation.make_risk_report(
            bundle.target_preds,
            bundle.target.oracle_labels,
            result.coefficients,
            "target_oracle",
        ).to_json_dict()
    doc["risk_reports"] = reports
    write_json(os.path.join(outdir, "result.json"), doc)
    print(
        f"aggregate: m={result.model_count} lambda={result.tikhonov:.6g} "
        f"condition={result.condition_estimate:.3e}",
        file=sys.stderr,
    )
    return 0


def cmd_select(args) -> int:
    bundle = load_bundle(args.input)
    weight_source = _resolve_ratio_arg(args, bundle)
    report = selection.compare_methods(bundle, weight_source, args.lam)
    outdir = _ensure_outdir(args.output)
    write_json(os.path.join(outdir, "comparison.json"), report.to_json_dict())
    sys.stdout.write(report.format_table())
    return 0


def cmd_bench(args) -> int:
    doc = read_json(args.config) if args.config else {}
    if not isinstance(doc, dict):
        raise ConfigInvalid("suite config must be a JSON object")
    cfg = synth.SuiteConfig.from_json_dict(doc)
    trials = args.trials if args.trials is not None else doc.get("trials", 100)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    try:
        trials = int(trials)
        seed = int(seed)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad trials/seed: {exc}") from exc
    threads = max(1, args.threads)

    report = synth.run_suite(cfg, trials, seed, threads=threads)
    outdir = _ensure_outdir(args.output)
    doc_out = report.to_json_dict()
    doc_out["seed"] = seed
    write_json(os.path.join(outdir, "suite.json"), doc_out)
    table = report.format_table()
    try:
        with open(
            os.path.join(outdir, "suite.txt"), "w", encoding="utf-8", newline="\n"
        ) as fh:
            fh.write(table)
    except OSError as exc:
        raise IoFailure(f"cannot write suite.txt: {exc}") from exc
    sys.stdout.write(table)

    for i in range(min(args.dump_tasks, trials)):
        rec = report.per_trial[i]
        task = synth.generate_task(replace(cfg.task, seed=rec.task_seed))
        task_dir = os.path.join(outdir, f"task_{i:03d}")
        write_bundle(task.bundle, task_dir)
        ratio.save_ratio_model(
            task.analytic_ratio, os.path.join(task_dir, "analytic_ratio.json")
        )
    return 0


def cmd_probe(args) -> int:
    emb = load_embeddings(args.input)
    report = probe.semantic_distance(emb)
    if args.epsilon is not None:
        report = probe.with_epsilon(report, args.epsilon)
        if args.lipschitz:
            try:
                constants = [float(v) for v in args.lipschitz.split(",") if v != ""]
            except ValueError as exc:
                raise ConfigInvalid(f"bad --lipschitz list: {exc}") from exc
            report = probe.with_lipschitz(report, constants)
    elif args.lipschitz:
        raise ConfigInvalid("--lipschitz requires --epsilon")
    doc = report.to_json_dict()
    if args.output:
        write_json(args.output, doc)
    line = f"probe: d_sem={report.d_sem:.6g} argmin_layer={report.argmin_layer}"
    if report.is_epsilon_close is not None:
        line += f" epsilon_close={report.is_epsilon_close}"
    if report.propagated_bound is not None:
        line += f" propagated_bound={report.propagated_bound:.6g}"
    print(line)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except IoFailure as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
