"""``himt`` command line: train, eval, synth, ablate.

On failure the last stderr line is ``error: <ErrorClass>: <message>`` and the
exit code is nonzero.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from himt.bags import LEVELS, load_dataset, write_dataset
from himt.config import ExperimentConfig, load_config
from himt.errors import ConfigError, HimtError, PathError
from himt.experiment import cross_validate, evaluate_checkpoints, run_ablation
from himt.metrics import RiskTable, c_index, summarize
from himt.synth import synth_generate

log = logging.getLogger("himt")


def _levels(text: str) -> tuple[str, ...]:
    levels = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [x for x in levels if x not in LEVELS]
    if bad or not levels:
        raise argparse.ArgumentTypeError(f"levels must be drawn from {','.join(LEVELS)}")
    return levels


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "levels", None):
        changes["levels"] = args.levels
    if getattr(args, "data", None):
        changes["data_dir"] = args.data
    return cfg.replace(**changes) if changes else cfg


def _data(cfg: ExperimentConfig):
    if not cfg.data_dir:
        raise ConfigError("no data directory: set data_dir in the config or pass --data")
    return load_dataset(cfg.data_dir)


def cmd_train(args) -> None:
    cfg = _config(args)
    records, signature = _data(cfg)
    _, reports = cross_validate(cfg, records, signature, args.out)
    c_mean, c_std = summarize(reports)["c_index"]
    print(f"c_index {c_mean:.4f} +- {c_std:.4f} over {len(reports)} folds -> {args.out}")


def cmd_eval(args) -> None:
    cfg = _config(args)
    if not Path(args.checkpoint).exists():
        raise PathError(f"checkpoint directory not found: {args.checkpoint}")
    records, signature = _data(cfg)
    reports = evaluate_checkpoints(cfg, records, signature, args.checkpoint, args.out)
    c_mean, c_std = summarize(reports)["c_index"]
    print(f"c_index {c_mean:.4f} +- {c_std:.4f} over {len(reports)} folds -> {args.out}")


def cmd_synth(args) -> None:
    cfg = _config(args)
    ds = synth_generate(cfg.synth_config(), cfg.seed)
    write_dataset(args.out, ds.records, ds.signature)
    unc = [i for i, r in enumerate(ds.records) if r.censor == 0]
    table = RiskTable.build([ds.records[i].patient_id for i in unc], ds.planted_risk[unc],
                            [ds.records[i].surv_time for i in unc], [1] * len(unc))
    c, _ = c_index(table)
    print(f"wrote {len(ds.records)} patients to {args.out}; planted-risk c_index (uncensored) {c:.4f}")


def cmd_ablate(args) -> None:
    cfg = _config(args)
    records, signature = _data(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(cfg, records, signature, out / "ablation.csv")
    for r in rows:
        print(f"{r['setting']:>12}  M={r['mean_instances']:.0f}  C={r['c_mean']:.3f}+-{r['c_std']:.3f}  "
              f"AUC={r['auc_mean']:.3f}+-{r['auc_std']:.3f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="himt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, default=Path(out_default))
        p.add_argument("--data", help="dataset directory (overrides data_dir)")

    p = sub.add_parser("train", help="k-fold training; writes checkpoints and fold metrics")
    common(p, "runs/train")
    p.add_argument("--levels", type=_levels)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score held-out folds from saved checkpoints")
    common(p, "runs/eval")
    p.add_argument("--checkpoint", type=Path, required=True, help="directory written by train")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    common(p, "data/synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="magnification ablation table")
    common(p, "runs/ablation")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except HimtError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
