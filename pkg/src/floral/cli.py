"""Command-line entry points: gen-data, train, sample, eval.

Exit codes: 0 success, 2 configuration error, 3 data generation failure,
4 training failure, 5 sampling/integration failure.  Every command that
takes ``--seed`` is byte-for-byte reproducible on one platform.  The
environment variable ``FLORAL_THREADS`` caps the number of worker threads
used by the numerical backends.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .config import ConfigError, RunConfig, TrainConfig, get_preset, load_run_config
from .flow import (DEFAULT_PRIOR, FlowMode, IntegrationError, PathConfig,
                   generate_ensemble)
from .grid import GridFunction, resample
from .metrics import evaluate_set
from .model import FilmFnoConfig, VectorFieldModel
from .problems import Dataset, FieldSet, SolverError, generate_dataset
from .train import TrainingError, train


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATAGEN = 3
EXIT_TRAIN = 4
EXIT_SAMPLE = 5


def _apply_thread_cap() -> None:
    cap = os.environ.get("FLORAL_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _load_config(arg: str | None, default_preset: str | None = None) -> RunConfig:
    if arg is None:
        if default_preset is None:
            raise ConfigError("--config is required")
        return get_preset(default_preset)
    if Path(arg).exists():
        return load_run_config(arg)
    return get_preset(arg)


# ---------------------------------------------------------------------------
# gen-data

def cmd_gen_data(args) -> int:
    try:
        if args.config:
            config = _load_config(args.config).problem
            if args.problem and args.problem != config.problem:
                raise ConfigError(
                    f"--problem {args.problem!r} conflicts with config "
                    f"problem {config.problem!r}")
        else:
            from .problems import default_problem_config

            if not args.problem:
                raise ConfigError("either --problem or --config is required")
            config = default_problem_config(args.problem)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        dataset = generate_dataset(config, args.count, args.seed)
    except SolverError as exc:
        print(f"data generation failed: {exc}", file=sys.stderr)
        return EXIT_DATAGEN
    path = dataio.write_dataset(dataset, args.out)
    print(f"wrote {dataset.count} samples to {path.parent}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def _subset(dataset: Dataset, lo: int, hi: int) -> Dataset:
    hi = min(hi, dataset.count)
    fields = {
        name: FieldSet(f.name, f.role, f.domain, f.shape, f.channels,
                       f.values[lo:hi])
        for name, f in dataset.fields.items()
    }
    return Dataset(dataset.problem, dataset.config, hi - lo, dataset.seed, fields)


def _restrict_resolution(dataset: Dataset, resolution: int) -> Dataset:
    """Resample every field of the dataset to `resolution` points per axis."""
    fields = {}
    for name, f in dataset.fields.items():
        shape = tuple(resolution for _ in f.shape)
        rows = [
            resample(GridFunction(f.domain, f.shape, f.channels, f.values[i]),
                     shape).values
            for i in range(f.values.shape[0])
        ]
        fields[name] = FieldSet(f.name, f.role, f.domain, shape, f.channels,
                                np.stack(rows))
    return Dataset(dataset.problem, dataset.config, dataset.count, dataset.seed,
                   fields)


def _build_model(train_cfg: TrainConfig, dataset: Dataset,
                 rng_seed: int) -> VectorFieldModel:
    hf = dataset.fields["hf_solution"]
    ndim = len(hf.shape)
    model_cfg = FilmFnoConfig(
        n_layers=train_cfg.n_layers,
        hidden_channels=train_cfg.hidden_channels,
        modes_per_axis=(train_cfg.modes_per_axis,) * ndim,
    )
    a_channels = dataset.fields["input"].channels
    return VectorFieldModel(model_cfg, hf.channels, a_channels, ndim,
                            rng_seed=rng_seed, periodic=hf.domain.periodic)


def _checkpoint_config(run: RunConfig, model: VectorFieldModel,
                       dataset: Dataset) -> dict:
    hf = dataset.fields["hf_solution"]
    return {
        "model": model.config.to_dict(),
        "w_channels": model.w_channels,
        "a_channels": model.a_channels,
        "mode": run.train.mode.value,
        "sigma_min": run.train.sigma_min,
        "domain": dataio.domain_to_dict(hf.domain),
        "train_shape": list(hf.shape),
        "problem": dataio.problem_config_to_dict(run.problem),
        "train": run.train.to_dict(),
    }


def cmd_train(args) -> int:
    try:
        run = _load_config(args.config)
        mode = FlowMode(args.mode)
        run = RunConfig(run.problem,
                        TrainConfig.from_dict({**run.train.to_dict(),
                                               "mode": mode.value,
                                               "seed": args.seed}))
        dataset = dataio.read_dataset(args.data)
        if mode == FlowMode.FLORAL and not any(
                f.role == "lf_solution" for f in dataset.fields.values()):
            raise ConfigError(
                "residual mode requires a dataset with low-fidelity solutions")
        total_needed = run.train.train_size + run.train.validation_size
        if dataset.count < total_needed:
            raise ConfigError(
                f"dataset has {dataset.count} samples; config needs {total_needed}")
    except (ConfigError, dataio.FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if run.train.resolution is not None:
        dataset = _restrict_resolution(dataset, run.train.resolution)
    train_set = _subset(dataset, 0, run.train.train_size)
    validation = None
    if run.train.validation_size:
        validation = _subset(dataset, run.train.train_size, total_needed)
    model = _build_model(run.train, dataset, rng_seed=args.seed)
    path_cfg = PathConfig(sigma_min=run.train.sigma_min)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = train(model, train_set, run.train.mode, run.train.epochs,
                       run.train.batch_size, args.seed, lr=run.train.lr,
                       weight_decay=run.train.weight_decay,
                       lr_decay=run.train.lr_decay, path=path_cfg,
                       validation=validation, log=print)
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    ckpt_config = _checkpoint_config(run, model, dataset)
    dataio.save_checkpoint(out / "final.ckpt", ckpt_config, model.state_arrays())
    dataio.save_checkpoint(out / "best.ckpt", ckpt_config, result.best_state)
    dataio.write_loss_csv(out / "loss.csv", result.train_losses,
                          result.validation_losses or None)
    print(f"wrote checkpoints and loss curve to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample / eval

def _load_model(ckpt_path):
    config, params = dataio.load_checkpoint(ckpt_path)
    model_cfg = FilmFnoConfig.from_dict(config["model"])
    ndim = len(model_cfg.modes_per_axis)
    domain = dataio.domain_from_dict(config["domain"])
    model = VectorFieldModel(model_cfg, int(config["w_channels"]),
                             int(config["a_channels"]), ndim,
                             periodic=domain.periodic)
    model.load_state(params)
    return config, model


def _ensembles_for_indices(config, model, dataset, indices, n_ensembles,
                           eval_shape, seed):
    mode = FlowMode(config["mode"])
    domain = dataio.domain_from_dict(config["domain"])
    root = np.random.SeedSequence(entropy=seed)
    out = []
    for j, i in enumerate(indices):
        a = dataset.fields["input"].sample(i)
        lf = dataset.lf_on_hf_grid(i) if mode == FlowMode.FLORAL else None
        member_seed = np.random.SeedSequence(entropy=seed, spawn_key=(int(i),))
        members = generate_ensemble(
            model, a, n_ensembles, mode, lf, eval_shape, domain,
            DEFAULT_PRIOR, member_seed, w_channels=model.w_channels)
        out.append(members)
    return out, root


def cmd_sample(args) -> int:
    try:
        config, model = _load_model(args.ckpt)
        dataset = dataio.read_dataset(args.data)
        indices = [int(s) for s in args.indices.split(",")] if args.indices \
            else list(range(dataset.count))
        bad = [i for i in indices if not 0 <= i < dataset.count]
        if bad:
            raise ConfigError(f"sample indices out of range: {bad}")
        if args.resolution is not None and args.resolution < 2:
            raise ConfigError("--resolution must be >= 2")
    except (ConfigError, dataio.FormatError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ndim = len(config["train_shape"])
    eval_shape = (tuple([args.resolution] * ndim) if args.resolution
                  else tuple(config["train_shape"]))
    domain = dataio.domain_from_dict(config["domain"])
    try:
        ensembles, _ = _ensembles_for_indices(
            config, model, dataset, indices, args.ensembles, eval_shape,
            args.seed)
    except IntegrationError as exc:
        print(f"sampling failed: {exc}", file=sys.stderr)
        return EXIT_SAMPLE
    fields = {}
    for i, members in zip(indices, ensembles):
        values = np.stack([m.values for m in members])
        fields[f"sample{i}"] = FieldSet(
            name=f"sample{i}", role="hf_solution", domain=domain,
            shape=eval_shape, channels=model.w_channels, values=values)
    out_set = Dataset(problem=dataset.problem, config=dataset.config,
                      count=args.ensembles, seed=args.seed, fields=fields)
    path = dataio.write_dataset(out_set, args.out)
    print(f"wrote {len(indices)} ensembles of {args.ensembles} to {path.parent}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        config, model = _load_model(args.ckpt)
        dataset = dataio.read_dataset(args.data)
        if "hf_solution" not in dataset.fields:
            raise ConfigError("evaluation dataset lacks high-fidelity solutions")
    except (ConfigError, dataio.FormatError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    hf = dataset.fields["hf_solution"]
    indices = list(range(dataset.count))
    try:
        ensembles, _ = _ensembles_for_indices(
            config, model, dataset, indices, args.ensembles, hf.shape,
            args.seed)
    except IntegrationError as exc:
        print(f"sampling failed: {exc}", file=sys.stderr)
        return EXIT_SAMPLE
    references = [hf.sample(i) for i in indices]
    report = evaluate_set(ensembles, references)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_metrics_csv(out / "metrics.csv", report)
    summary = {
        "rmse": report.rmse,
        "nrmse": report.nrmse,
        "crmse": report.crmse,
        "mean_l2_error": report.mean_l2_error,
        "mean_predictive_std": report.mean_predictive_std,
        "samples": dataset.count,
        "ensembles": args.ensembles,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2,
                                                 sort_keys=True) + "\n")
    if args.pareto:
        pareto = Path(args.pareto)
        line = (f"{config['train'].get('train_size', '')},"
                f"{report.mean_l2_error:.17g},{report.mean_predictive_std:.17g}\n")
        if not pareto.exists():
            pareto.write_text("train_size,mean_l2_error,mean_predictive_std\n")
        with open(pareto, "a") as fh:
            fh.write(line)
    print(f"mean_l2_error={report.mean_l2_error:.6e} "
          f"mean_predictive_std={report.mean_predictive_std:.6e}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="floral",
        description="Probabilistic PDE surrogates via flow matching with "
                    "low-fidelity residual augmentation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a paired LF/HF dataset")
    p.add_argument("--problem", choices=["benchmark1", "advection", "burgers",
                                         "darcy"])
    p.add_argument("--config", help="run config file or preset name")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a flow-matching surrogate")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=[m.value for m in FlowMode], required=True)
    p.add_argument("--config", required=True,
                   help="run config file or preset name")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate solution ensembles")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--indices", help="comma-separated sample indices")
    p.add_argument("--ensembles", type=int, default=50)
    p.add_argument("--resolution", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ensembles", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--pareto", help="append aggregate point to this CSV")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
