"""Command-line front end: ``demo-mbo <command> [--config PATH] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from . import eval_bench, plotting
from .pipeline import STAGES, VARIANTS, ConfigError, PipelineConfig, Runner

log = logging.getLogger("demo_mbo")

ABLATION_METHODS = ("full", "no_pseudo_target", "no_editing", "grad")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("DEMO_MBO_THREADS")
    return max(1, int(env)) if env else 1


def _load_config(args) -> PipelineConfig:
    manifest = Path(args.out) / "manifest.json"
    if args.config:
        cfg = PipelineConfig.from_file(args.config, paper_parity=args.paper_parity)
    elif manifest.exists():
        cfg = PipelineConfig.from_text(json.loads(manifest.read_text())["config"])
    else:
        cfg = PipelineConfig.paper_parity() if args.paper_parity else PipelineConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    return cfg


class Manifest:
    """``manifest.json`` in the output directory: config, seed and per-stage status."""

    def __init__(self, out: Path, cfg: PipelineConfig):
        self.path = out / "manifest.json"
        self.data = {
            "config_hash": cfg.digest(),
            "seed": cfg.run.seed,
            "config": cfg.to_text(),
            "stages": {},
            "failed_stage": None,
            "error": None,
        }
        if self.path.exists():
            old = json.loads(self.path.read_text())
            if old.get("config_hash") == self.data["config_hash"] and old.get("seed") == cfg.run.seed:
                self.data["stages"] = old.get("stages", {})

    def mark(self, stage: str, status: str, runner: Runner, variant: str = "full", error: str | None = None):
        name = stage if variant == "full" else f"{stage}:{variant}"
        self.data["stages"][name] = {
            "status": status,
            "key": runner.key(stage, variant),
            "files": runner.stage_files(stage, variant),
        }
        if status == "failed":
            self.data["failed_stage"] = name
            self.data["error"] = error
        elif self.data["failed_stage"] == name:
            self.data["failed_stage"] = self.data["error"] = None
        self.write()

    def write(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


def _run_stages(args, stages, compute) -> int:
    out = Path(args.out)
    cfg = _load_config(args)
    variant = getattr(args, "variant", "full")
    runner = Runner(cfg, cfg.run.seed, store=out / "artifacts", compute=compute)
    manifest = Manifest(out, cfg)
    for stage in stages:
        try:
            result = runner.run_stage(stage, variant)
        except Exception as exc:  # any stage failure is reported, artifacts so far are kept
            manifest.mark(stage, "failed", runner, variant, error=str(exc))
            print(f"error: stage '{stage}' failed: {exc}", file=sys.stderr)
            return 1
        manifest.mark(stage, "complete", runner, variant)
        if stage == "edit":
            shutil.copyfile(runner.artifact_dir(stage, variant) / "candidates.csv", out / "candidates.csv")
        if stage == "evaluate":
            (out / "metrics.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
            plotting.plot_scores(runner.candidates(variant).y_norm, out / "scores.png")
            print(
                f"{result['task']} seed={result['seed']} variant={variant}: "
                f"max={result['max']:.3f} median={result['median']:.3f} "
                f"above_best={result['proportion_above_best']:.3f}"
            )
    return 0


def cmd_pipeline(args) -> int:
    return _run_stages(args, STAGES, compute=None)


def _stage_cmd(stage):
    def run(args) -> int:
        return _run_stages(args, [stage], compute={stage})

    return run


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    seeds = cfg.run.seeds
    runners = {s: Runner(cfg, s, store=out / "artifacts") for s in seeds}
    results = [
        eval_bench.run_ablation(cfg, v, seeds, runners=runners, threads=_threads(args))
        for v in ABLATION_METHODS
    ]
    report = eval_bench.build_report(results, reference="full")
    rep_dir = out / "ablation"
    eval_bench.write_report(report, results, rep_dir)
    for metric in ("max", "median", "proportion"):
        plotting.plot_methods(report, metric, rep_dir / f"ablation_{metric}.png")
    welch = report["welch_vs_full"]
    for r in results:
        mx = report["methods"][r.method]["max"]
        p = welch.get(r.method, {}).get("p")
        ptxt = "" if r.method == "full" else (f"  welch p={p:.4g}" if p is not None else "  welch p=n/a")
        print(f"{r.method:18s} max={mx['mean']:.3f}+-{mx['stderr']:.3f}{ptxt}")
    return 0


def cmd_sweep_m(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    seeds = cfg.run.seeds
    runners = {s: Runner(cfg, s, store=out / "artifacts") for s in seeds}
    rows = eval_bench.sweep_m(cfg, cfg.run.sweep_m, seeds, runners=runners, threads=_threads(args))
    eval_bench.write_sweep(rows, out / "sweep")
    plotting.plot_sweep(rows, out / "sweep" / "sweep_m.png")
    for r in rows:
        print(f"m={r.m:5d} max={r.mean:.3f}+-{r.stderr:.3f}")
    best = eval_bench.best_sweep_m(rows)
    if not 200 <= best <= 600:
        log.warning("best m=%d lies outside [200, 600]", best)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file (sections per module)")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out", type=Path, default=Path("demo_out"), help="output directory")
    common.add_argument("--paper-parity", action="store_true", help="use the published hyperparameters")
    common.add_argument("--threads", type=int, help="parallel seeds (default: $DEMO_MBO_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="demo-mbo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pipeline", parents=[common], help="run every stage").set_defaults(func=cmd_pipeline)
    for stage in STAGES:
        p = sub.add_parser(stage, parents=[common], help=f"run only the {stage} stage")
        if stage in ("train-diffusion", "edit", "evaluate"):
            p.add_argument("--variant", choices=VARIANTS, default="full")
        p.set_defaults(func=_stage_cmd(stage))
    sub.add_parser("ablate", parents=[common], help="ablation table over [run] seeds").set_defaults(func=cmd_ablate)
    sub.add_parser("sweep-m", parents=[common], help="sweep the noise time m").set_defaults(func=cmd_sweep_m)
    dump = sub.add_parser("config", parents=[common], help="print the effective config")
    dump.set_defaults(func=lambda a: print(_load_config(a).to_text(), end="") or 0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
