"""Command line interface.

Subcommands:
  evaluate       run (or resume) a perturbation evaluation
  transfer       score another model on a previously exported image set
  sparsify       fit sparse latent masks over one or more lambda values
  verify-theory  Monte Carlo check of the pooled-estimator proposition
  report         render stored reports as tables and an FMR bar chart

Exit codes: 0 success, 2 configuration problem, 3 adapter failure,
4 integrity failure (corrupt records, checksum mismatch), 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..errors import (
    AdapterError,
    ConfigurationError,
    ContractViolationError,
    IntegrityError,
)
from ..estimators import (
    EstimatorSimConfig,
    GroundTruthDistribution,
    verify_proposition,
)
from ..metrics import EvaluationReport
from ..sparse import collect_latents, fit_l1_logistic, save_selection
from .config import RunConfig, apply_overrides, load_config
from .reporting import (
    fmr_bar_chart,
    per_class_csv,
    per_class_markdown,
    summary_csv,
    summary_markdown,
)
from .runner import prepare_run, run_evaluation, run_outcomes, run_transfer

REPORT_SCHEMA = "fmrbench/evaluation-report/v1"


def _add_eval_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON run configuration file")
    sub.add_argument("--dataset", help="dataset root directory")
    sub.add_argument("--dataset-format", choices=["class-dirs", "index"],
                     dest="dataset_format")
    sub.add_argument("--output-dir", dest="output_dir")
    sub.add_argument("--model", help="registered model name")
    sub.add_argument("--model-checkpoint", dest="model_checkpoint")
    sub.add_argument("--grayscale", action="store_const", const=True,
                     default=None, help="route RGB input through luminance")
    sub.add_argument("--generator", help="registered generator name")
    sub.add_argument("--generator-checkpoint", dest="generator_checkpoint")
    sub.add_argument("--oracle", help="registered oracle name")
    sub.add_argument("--oracle-checkpoint", dest="oracle_checkpoint")
    sub.add_argument("--budget", type=int, help="generator iterations per sample")
    sub.add_argument("--step-size", type=float, dest="step_size")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--fgsm-epsilon", type=float, dest="fgsm_epsilon")
    sub.add_argument("--sparse-mask", dest="sparse_mask",
                     help="mask or sparse-selection JSON file")
    sub.add_argument("--export-images", action="store_const", const=True,
                     default=None, dest="export_images")
    sub.add_argument("--max-samples", type=int, dest="max_samples")


def _config_from_args(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {
        key: getattr(args, key)
        for key in (
            "dataset", "dataset_format", "output_dir",
            "model", "model_checkpoint", "grayscale",
            "generator", "generator_checkpoint",
            "oracle", "oracle_checkpoint",
            "budget", "step_size", "seed",
            "fgsm_epsilon", "sparse_mask", "export_images", "max_samples",
        )
        if getattr(args, key, None) is not None
    }
    return apply_overrides(config, **overrides)


def _print_metrics(rounded: dict) -> None:
    def show(v):
        return "n/a" if v is None else f"{v:.2f}"

    print(f"SA  {show(rounded['standard_accuracy'])}")
    print(f"PA  {show(rounded['perturbed_accuracy'])}")
    print(f"VR  {show(rounded['validation_rate'])}")
    print(f"FMR {show(rounded['fmr'])}")


def cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    report = run_evaluation(config, stop_after=args.stop_after)
    if report is None:
        print(f"stopped after {args.stop_after} new samples; "
              f"re-run to resume from {config.output_dir}/records.jsonl")
        return 0
    print(f"evaluated {report.counts['total']} samples "
          f"({report.counts['perturbed']} perturbed, "
          f"{report.counts['diagnostic_aborts']} aborted)")
    _print_metrics(report.rounded)
    print(f"records: {Path(config.output_dir) / 'records.jsonl'}")
    print(f"report:  {Path(config.output_dir) / 'report.json'}")
    if config.export_images:
        print(f"manifest: {Path(config.output_dir) / 'manifest.json'}")
    return 0


def cmd_transfer(args) -> int:
    report = run_transfer(
        args.manifest,
        model_name=args.model,
        model_checkpoint=args.model_checkpoint,
        grayscale=bool(args.grayscale),
        output_dir=args.output_dir,
        dataset_override=args.dataset,
    )
    print(f"transferred {report['counts']['transferred_images']} images "
          f"onto model {report['model']}")
    _print_metrics(report["rounded"])
    if args.output_dir:
        print(f"report: {Path(args.output_dir) / 'transfer-report.json'}")
    return 0


def cmd_sparsify(args) -> int:
    config = _config_from_args(args)
    try:
        lambdas = [float(v) for v in args.lambdas.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad --lambdas value: {exc}") from exc
    if not lambdas:
        raise ConfigurationError("--lambdas must name at least one value")

    ctx = prepare_run(config)
    outcomes = run_outcomes(ctx)
    data = collect_latents(outcomes, ctx.generator)
    print(f"collected {data.n_pairs} latent pairs of dimension {data.dim}")

    prefix = args.out_prefix or str(Path(config.output_dir) / "sparse")
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    dataset_name = Path(config.dataset).name
    rows = []
    print("lambda      selected  sparsity  heldout")
    for lam in lambdas:
        result = fit_l1_logistic(
            data, lam, max_epochs=args.max_epochs, seed=config.perturbation.seed
        )
        path = f"{prefix}-lambda-{lam:g}.json"
        save_selection(result, path, config.generator, dataset_name)
        rows.append(
            {
                "lambda": lam,
                "n_selected": len(result.mask),
                "sparsity": round(result.sparsity, 2),
                "heldout_score": round(result.heldout_score, 2),
                "converged": result.converged,
                "path": path,
            }
        )
        print(f"{lam:<11g} {len(result.mask):<9d} "
              f"{result.sparsity:<9.2f} {result.heldout_score:.2f}")
    sweep = {
        "schema": "fmrbench/sparse-sweep/v1",
        "dataset": dataset_name,
        "generator": config.generator,
        "rows": rows,
    }
    sweep_path = f"{prefix}-sweep.json"
    with open(sweep_path, "w", encoding="utf-8") as fh:
        json.dump(sweep, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"sweep summary: {sweep_path}")
    return 0


def cmd_verify_theory(args) -> int:
    if args.sizes:
        try:
            sizes = tuple(int(v) for v in args.sizes.split(",") if v.strip())
        except ValueError as exc:
            raise ConfigurationError(f"bad --sizes value: {exc}") from exc
        if len(sizes) != args.m:
            raise ConfigurationError(
                f"--sizes lists {len(sizes)} values but --m is {args.m}"
            )
    else:
        rng = np.random.default_rng(args.seed)
        sizes = tuple(
            int(v) for v in rng.integers(args.n_min, args.n_max + 1, size=args.m)
        )
    sim = EstimatorSimConfig(
        p=args.p, m=args.m, n=sizes, trials=args.trials, seed=args.seed
    )
    mu = np.zeros(args.p)
    sigma = args.sigma_value * np.eye(args.p)
    truth = GroundTruthDistribution(mu=mu, sigma=sigma)
    report = verify_proposition(sim, truth)

    print(f"p={sim.p} m={sim.m} trials={sim.trials} sizes={list(sim.n)}")
    print(f"pooled variance factor (closed form): {sim.pooled_variance_factor:.6f}")
    for name, value in report.all_flags.items():
        mark = "indeterminate" if value is None else ("pass" if value else "FAIL")
        print(f"  {name:<28s} {mark}")
    if not report.sigma_verified:
        print("  sigma branch: skipped (verified only for p = 1)")
    outcome = report.passed
    print("overall: " + (
        "indeterminate" if outcome is None else ("pass" if outcome else "FAIL")
    ))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        print(f"report: {args.out}")
    return 0


def _load_report(path: str) -> tuple[str, EvaluationReport]:
    p = Path(path)
    if p.is_dir():
        name = p.name
        p = p / "report.json"
    else:
        name = p.parent.name or p.stem
    try:
        with open(p, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read report {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"report {p} is not valid JSON: {exc}") from exc
    if payload.get("schema") != REPORT_SCHEMA:
        raise IntegrityError(
            f"report {p} has schema {payload.get('schema')!r}, "
            f"expected {REPORT_SCHEMA!r}"
        )
    return name, EvaluationReport.from_dict(payload)


def cmd_report(args) -> int:
    named = [_load_report(run) for run in args.run]
    if args.names:
        names = [n.strip() for n in args.names.split(",")]
        if len(names) != len(named):
            raise ConfigurationError(
                f"--names lists {len(names)} names for {len(named)} runs"
            )
        named = [(name, report) for name, (_, report) in zip(names, named)]

    pieces = []
    if args.format == "csv":
        pieces.append(summary_csv(named))
        if args.per_class:
            for name, report in named:
                pieces.append(f"\n# per-class: {name}\n")
                pieces.append(per_class_csv(report))
    else:
        pieces.append(summary_markdown(named))
        if args.per_class:
            for name, report in named:
                pieces.append(f"\n**Per-class: {name}**\n\n")
                pieces.append(per_class_markdown(report))
    text = "".join(pieces)

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"table: {args.out}")
    else:
        sys.stdout.write(text)
    if args.chart:
        fmr_bar_chart(named, args.chart)
        print(f"chart: {args.chart}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmrbench",
        description="Oracle-constrained counterfactual robustness evaluation",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_eval = subs.add_parser("evaluate", help="run or resume an evaluation")
    _add_eval_options(p_eval)
    p_eval.add_argument("--stop-after", type=int, dest="stop_after",
                        help="process at most N new samples, then stop")
    p_eval.set_defaults(func=cmd_evaluate)

    p_tr = subs.add_parser("transfer", help="score a model on exported images")
    p_tr.add_argument("--manifest", required=True,
                      help="manifest.json from an --export-images run")
    p_tr.add_argument("--model", required=True)
    p_tr.add_argument("--model-checkpoint", dest="model_checkpoint")
    p_tr.add_argument("--grayscale", action="store_const", const=True,
                      default=None)
    p_tr.add_argument("--output-dir", dest="output_dir")
    p_tr.add_argument("--dataset",
                      help="relocated original dataset root, if it moved")
    p_tr.set_defaults(func=cmd_transfer)

    p_sp = subs.add_parser("sparsify", help="fit sparse latent masks")
    _add_eval_options(p_sp)
    p_sp.add_argument("--lambdas", default="36.36",
                      help="comma-separated L1 strengths")
    p_sp.add_argument("--out-prefix", dest="out_prefix",
                      help="path prefix for selection files")
    p_sp.add_argument("--max-epochs", type=int, default=60, dest="max_epochs")
    p_sp.set_defaults(func=cmd_sparsify)

    p_vt = subs.add_parser("verify-theory",
                           help="Monte Carlo estimator verification")
    p_vt.add_argument("--p", type=int, default=3)
    p_vt.add_argument("--m", type=int, default=10)
    p_vt.add_argument("--sizes", help="comma-separated dataset sizes (m values)")
    p_vt.add_argument("--n-min", type=int, default=1, dest="n_min")
    p_vt.add_argument("--n-max", type=int, default=100, dest="n_max")
    p_vt.add_argument("--trials", type=int, default=10000)
    p_vt.add_argument("--seed", type=int, default=0)
    p_vt.add_argument("--sigma-value", type=float, default=1.0,
                      dest="sigma_value", help="scale of the diagonal truth Sigma")
    p_vt.add_argument("--out", help="write the full JSON report here")
    p_vt.set_defaults(func=cmd_verify_theory)

    p_rp = subs.add_parser("report", help="render stored reports")
    p_rp.add_argument("--run", action="append", required=True,
                      help="run directory or report.json path (repeatable)")
    p_rp.add_argument("--names", help="comma-separated display names")
    p_rp.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p_rp.add_argument("--per-class", action="store_true", dest="per_class")
    p_rp.add_argument("--out", help="write the table here instead of stdout")
    p_rp.add_argument("--chart", help="write an FMR bar chart PNG here")
    p_rp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ContractViolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AdapterError as exc:
        print(f"adapter error: {exc}", file=sys.stderr)
        return 3
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
