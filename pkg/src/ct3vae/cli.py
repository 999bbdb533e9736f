"""Command-line front end: train, sample, verify, eval, sweep.

Configuration is a flat key=value text file; command-line flags override
file values, which override defaults.  Every command is deterministic
given (config, seed): repeated runs produce byte-identical CSV outputs.

Exit codes: 0 success, 1 usage/config error, 2 verification failure,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .data import (LabeledDataset, make_longtail, read_dataset, read_tensor,
                   synth_classes, write_dataset, write_tensor)
from .errors import ConfigError, NumericError, VerificationError
from .metrics import FeatureSpace, balance_test_set, default_feature_space, per_class_report
from .models import CONDITIONAL_FAMILIES, FAMILIES, ModelConfig
from .oracle import verify_suite
from .train import (TrainSettings, init_trainer, load_checkpoint, sample_model,
                    save_checkpoint, train_epochs)

DEFAULTS = {
    "family": "ct3vae",
    "m": "4",
    "nu": "10.0",
    "sigma": "1.0",
    "beta": "1.0",
    "tau": "none",
    "epochs": "150",
    "batch_size": "64",
    "lr": "1e-3",
    "weight_decay": "1e-2",
    "hidden": "64",
    "seed": "0",
    "rho": "1.0",
    "dataset": "synth",
    "classes": "5",
    "n": "16",
    "per_class": "500",
    "test_per_class": "100",
    "separation": "4.0",
    "data_family": "student_t",
    "data_dof": "3.0",
    "data_seed": "0",
    "k": "3",
    "feature_space": "auto",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def read_config_file(path):
    values = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def resolve_config(args, cli_keys):
    """Defaults < config file < command-line flags."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key in cli_keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = str(value)
    return merged


def _model_config(cfg) -> ModelConfig:
    family = cfg["family"]
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r} (choose from {FAMILIES})")
    tau = None if cfg["tau"] in ("none", "") else float(cfg["tau"])
    try:
        return ModelConfig(n=int(cfg["n"]), m=int(cfg["m"]), K=int(cfg["classes"]),
                           nu=float(cfg["nu"]), sigma=float(cfg["sigma"]),
                           beta=float(cfg["beta"]), family=family, tau=tau)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _settings(cfg) -> TrainSettings:
    return TrainSettings(epochs=int(cfg["epochs"]), batch_size=int(cfg["batch_size"]),
                         lr=float(cfg["lr"]), weight_decay=float(cfg["weight_decay"]),
                         hidden=int(cfg["hidden"]), seed=int(cfg["seed"]))


def load_train_dataset(cfg):
    """Dataset named by the config: a manifest path, or synthetic clusters."""
    rho = float(cfg["rho"])
    if cfg["dataset"] == "synth":
        balanced = synth_classes(K=int(cfg["classes"]), n=int(cfg["n"]),
                                 per_class=int(cfg["per_class"]),
                                 family=cfg["data_family"], dof=float(cfg["data_dof"]),
                                 separation=float(cfg["separation"]),
                                 seed=int(cfg["data_seed"]))
    else:
        balanced = read_dataset(cfg["dataset"])
        cfg = dict(cfg)
        cfg["n"] = str(balanced.n)
        cfg["classes"] = str(balanced.K)
    if rho != 1.0:
        counts = balanced.class_counts
        if counts.min() != counts.max():
            raise ConfigError("imbalance can only be imposed on a balanced dataset")
        balanced = make_longtail(balanced, rho, seed=int(cfg["data_seed"]) + 1)
    return balanced


def load_test_dataset(cfg):
    if cfg["dataset"] == "synth":
        return synth_classes(K=int(cfg["classes"]), n=int(cfg["n"]),
                             per_class=int(cfg["test_per_class"]),
                             family=cfg["data_family"], dof=float(cfg["data_dof"]),
                             separation=float(cfg["separation"]),
                             seed=int(cfg["data_seed"]) + 1000)
    raise ConfigError("external datasets need an explicit test manifest for eval")


def _feature_space(cfg, n):
    kind = cfg["feature_space"]
    if kind == "auto":
        return default_feature_space(n)
    if kind not in ("raw", "random_projection"):
        raise ConfigError(f"unknown feature space {kind!r}")
    return FeatureSpace(kind, projection_seed=int(cfg["seed"]))


def write_csv(path, fieldnames, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in fieldnames})
    return path


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


# -- subcommands ---------------------------------------------------------------------


def cmd_train(args):
    cfg = resolve_config(args, ("family", "seed", "beta", "nu", "tau", "rho", "n"))
    out_dir = Path(args.out_dir)
    settings = _settings(cfg)
    dataset = load_train_dataset(cfg)
    cfg["n"] = str(dataset.n)
    cfg["classes"] = str(dataset.K)
    config = _model_config(cfg)

    if args.resume:
        state, saved = load_checkpoint(args.resume)
        if state.model.config != config and args.config:
            raise ConfigError("resume checkpoint disagrees with the config file")
        config = state.model.config
        # optimizer/architecture settings come from the checkpoint; only the
        # epoch target is taken from this invocation
        settings = TrainSettings(epochs=settings.epochs, batch_size=saved.batch_size,
                                 lr=saved.lr, weight_decay=saved.weight_decay,
                                 hidden=saved.hidden, seed=saved.seed)
    else:
        state = init_trainer(config, settings)

    remaining = settings.epochs - state.epochs_done
    if remaining <= 0:
        raise ConfigError(f"checkpoint already trained for {state.epochs_done} epochs")
    rows = train_epochs(state, dataset, settings, remaining)
    save_checkpoint(state, settings, out_dir / "checkpoint")
    write_dataset(dataset, out_dir / "train_data")
    if cfg["dataset"] == "synth":
        write_dataset(load_test_dataset(cfg), out_dir / "test_data")
    log_path = out_dir / "training_log.csv"
    mode_rows = rows
    if args.resume and log_path.exists():
        # append to the previous run's log so the full history stays in one file
        with open(log_path) as fh:
            prior = list(csv.DictReader(fh))
        mode_rows = prior + rows
    write_csv(log_path, ("epoch", "reconstruction", "latent_mean", "trace",
                         "logdet", "total"), mode_rows)
    print(f"trained {config.family} for {remaining} epochs; "
          f"final total loss {rows[-1]['total']:.6f}")
    print(f"checkpoint: {out_dir / 'checkpoint'}")
    return 0


def cmd_sample(args):
    state, _ = load_checkpoint(args.checkpoint)
    alpha = None
    if args.alpha:
        alpha = [float(v) for v in args.alpha.split(",")]
    rng = np.random.default_rng(args.seed)
    samples, labels = sample_model(state.model, args.count, rng, tau=args.tau,
                                   alpha=alpha,
                                   log_det_sigma_phi=state.log_det_sigma_phi_mean)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(out_dir / "samples.htvt", samples)
    if labels is not None:
        write_tensor(out_dir / "labels.htvt", labels)
    print(f"wrote {samples.shape[0]} samples to {out_dir / 'samples.htvt'}")
    return 0


def cmd_verify(args):
    rows = verify_suite(level=args.level, seed=args.seed)
    out_dir = Path(args.out_dir)
    path = write_csv(out_dir / "verify_report.csv",
                     ("check", "status", "statistic", "threshold", "detail"), rows)
    failures = [r for r in rows if r["status"] != "pass"]
    for row in rows:
        print(f"{row['status']:4s}  {row['check']}  "
              f"(stat {row['statistic']:.4g}, threshold {row['threshold']:.4g})")
    print(f"report: {path}")
    if failures:
        raise VerificationError(f"{len(failures)} oracle check(s) failed")
    return 0


def _evaluate(real_test, samples, labels, feature_space, k):
    balanced = real_test if real_test.class_counts.min() == real_test.class_counts.max() \
        else balance_test_set(real_test, seed=0)
    if labels is None:
        balanced = LabeledDataset(balanced.samples,
                                  np.zeros(balanced.size, dtype=np.int64))
        labels = np.zeros(samples.shape[0], dtype=np.int64)
    return per_class_report(balanced, samples, labels, feature_space, k=k), balanced


def _report_rows(report):
    rows = []
    for r in report.rows:
        rows.append({
            "class": str(r.label), "real_count": r.real_count,
            "gen_count": r.gen_count, "precision": r.precision, "recall": r.recall,
            "f1": r.f1, "frechet": r.frechet, "collapsed": int(r.collapsed),
        })
    rows.append({
        "class": "macro",
        "real_count": sum(r.real_count for r in report.rows),
        "gen_count": sum(r.gen_count for r in report.rows),
        "precision": report.macro_precision, "recall": report.macro_recall,
        "f1": report.macro_f1, "frechet": report.pooled_frechet,
        "collapsed": len(report.collapsed_classes),
    })
    return rows


def cmd_eval(args):
    cfg = resolve_config(args, ("seed", "k", "feature_space"))
    if bool(args.checkpoint) == bool(args.samples):
        raise ConfigError("pass exactly one of --checkpoint or --samples")
    try:
        test = read_dataset(args.test)
    except FileNotFoundError as exc:
        raise ConfigError(f"test manifest not found: {args.test}") from exc

    if args.checkpoint:
        state, _ = load_checkpoint(args.checkpoint)
        rng = np.random.default_rng(int(cfg["seed"]))
        count = balance_test_set(test, seed=0).size
        samples, labels = sample_model(state.model, count, rng,
                                       log_det_sigma_phi=state.log_det_sigma_phi_mean)
    else:
        samples = read_tensor(args.samples)
        labels = read_tensor(args.labels) if args.labels else None

    feature_space = _feature_space(cfg, test.n)
    report, _ = _evaluate(test, samples, labels, feature_space, int(cfg["k"]))
    out_dir = Path(args.out_dir)
    path = write_csv(out_dir / "report.csv",
                     ("class", "real_count", "gen_count", "precision", "recall",
                      "f1", "frechet", "collapsed"), _report_rows(report))
    if args.f1_svg:
        from .plots import bar_plot
        bar_plot(out_dir / "f1_per_class.svg",
                 [r.label for r in report.rows], {"f1": [r.f1 for r in report.rows]},
                 "class", "F1", title="per-class F1")
    print(f"macro F1 {report.macro_f1:.4f}, pooled distance {report.pooled_frechet:.4f}")
    print(f"report: {path}")
    return 0


def _train_eval_once(cfg, out_dir, checkpoint=None):
    """Train (or reuse) one model under cfg and evaluate on the held-out set."""
    settings = _settings(cfg)
    dataset = load_train_dataset(cfg)
    cfg = dict(cfg)
    cfg["n"] = str(dataset.n)
    cfg["classes"] = str(dataset.K)
    config = _model_config(cfg)
    if checkpoint is None:
        state = init_trainer(config, settings)
        train_epochs(state, dataset, settings, settings.epochs)
    else:
        state = checkpoint
    test = load_test_dataset(cfg)
    rng = np.random.default_rng(int(cfg["seed"]) + 99)
    tau = None if cfg["tau"] in ("none", "") else float(cfg["tau"])
    samples, labels = sample_model(state.model, test.size, rng, tau=tau,
                                   log_det_sigma_phi=state.log_det_sigma_phi_mean)
    report, _ = _evaluate(test, samples, labels, _feature_space(cfg, test.n),
                          int(cfg["k"]))
    return state, report


def cmd_sweep(args):
    cfg = resolve_config(args, ("family", "seed", "beta", "nu", "tau", "rho"))
    if args.parameter not in ("beta", "nu", "tau", "rho"):
        raise ConfigError(f"cannot sweep {args.parameter!r}")
    grid = [float(v) for v in args.grid.split(",") if v.strip()]
    if not grid:
        raise ConfigError("empty sweep grid")
    families = (args.family.split(",") if args.family else [cfg["family"]])
    out_dir = Path(args.out_dir)
    rows = []
    for family in families:
        if family not in FAMILIES:
            raise ConfigError(f"unknown family {family!r}")
        fam_cfg = dict(cfg)
        fam_cfg["family"] = family
        reusable = None
        if args.parameter == "tau":
            if family in ("vae", "cvae"):
                raise ConfigError("gaussian families have no sampler scale to sweep")
            # the sampler scale only matters at generation time: train once
            reusable, _ = _train_eval_once(fam_cfg, out_dir)
        for value in grid:
            point_cfg = dict(fam_cfg)
            point_cfg[args.parameter] = repr(value)
            _, report = _train_eval_once(point_cfg, out_dir, checkpoint=reusable)
            tail = report.rows[-1]
            rows.append({
                "family": family, "parameter": args.parameter, "value": value,
                "macro_f1": report.macro_f1, "macro_precision": report.macro_precision,
                "macro_recall": report.macro_recall, "tail_recall": tail.recall,
                "tail_f1": tail.f1, "frechet": report.pooled_frechet,
            })
    path = write_csv(out_dir / "sweep.csv",
                     ("family", "parameter", "value", "macro_f1", "macro_precision",
                      "macro_recall", "tail_recall", "tail_f1", "frechet"), rows)
    from .plots import line_plot
    series = {}
    for family in families:
        series[family] = [r["macro_f1"] for r in rows if r["family"] == family]
    line_plot(out_dir / "sweep.svg", grid, series, args.parameter, "macro F1",
              title=f"{args.parameter} sweep", logx=args.parameter == "rho")
    print(f"swept {args.parameter} over {len(grid)} values x {len(families)} families")
    print(f"results: {path}")
    return 0


# -- entry point ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="ct3vae",
                     description="heavy-tailed conditional VAEs at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a config file")
    train.add_argument("--config", help="flat key=value config file")
    train.add_argument("--out-dir", required=True)
    train.add_argument("--resume", help="checkpoint directory to continue from")
    train.add_argument("--seed", type=int)
    train.add_argument("--family", choices=FAMILIES)
    train.add_argument("--beta", type=float)
    train.add_argument("--nu", type=float)
    train.add_argument("--tau", type=float)
    train.add_argument("--rho", type=float)
    train.add_argument("--n", type=int)
    train.set_defaults(fn=cmd_train)

    sample = sub.add_parser("sample", help="draw samples from a checkpoint")
    sample.add_argument("--checkpoint", required=True)
    sample.add_argument("--count", type=int, required=True)
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--tau", type=float)
    sample.add_argument("--alpha", help="comma-separated class weights")
    sample.add_argument("--out-dir", required=True)
    sample.set_defaults(fn=cmd_sample)

    verify = sub.add_parser("verify", help="run the numerical oracle suite")
    verify.add_argument("--level", choices=("quick", "full"), default="quick")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out-dir", required=True)
    verify.set_defaults(fn=cmd_verify)

    evaluate = sub.add_parser("eval", help="score generated samples per class")
    evaluate.add_argument("--config")
    evaluate.add_argument("--checkpoint")
    evaluate.add_argument("--samples", help="tensor file of generated samples")
    evaluate.add_argument("--labels", help="tensor file of generated labels")
    evaluate.add_argument("--test", required=True, help="test dataset manifest")
    evaluate.add_argument("--k", type=int)
    evaluate.add_argument("--feature-space", dest="feature_space",
                          choices=("auto", "raw", "random_projection"))
    evaluate.add_argument("--seed", type=int)
    evaluate.add_argument("--f1-svg", action="store_true",
                          help="also render a per-class F1 bar chart")
    evaluate.add_argument("--out-dir", required=True)
    evaluate.set_defaults(fn=cmd_eval)

    sweep = sub.add_parser("sweep", help="train/evaluate along a parameter grid")
    sweep.add_argument("--config")
    sweep.add_argument("--parameter", required=True)
    sweep.add_argument("--grid", required=True, help="comma-separated values")
    sweep.add_argument("--family", help="comma-separated family list")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--beta", type=float)
    sweep.add_argument("--nu", type=float)
    sweep.add_argument("--tau", type=float)
    sweep.add_argument("--rho", type=float)
    sweep.add_argument("--out-dir", required=True)
    sweep.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
