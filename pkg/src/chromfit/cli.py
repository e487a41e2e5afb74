"""Command line front end tying the simulation, data, model, and fitting
modules together.

Commands
--------
generate         simulate a labeled synthetic dataset
train            split a dataset, fit the network, store model + reports
evaluate         score a stored model on a dataset's test split
predict          estimate isotherm parameters for one chromatogram
fit-variational  least-squares fit of observed chromatograms
cross-validate   k-fold stability report for one hyperparameter setting

All commands accept a JSON config file; unknown keys anywhere in it are
rejected.  Randomness flows from one master seed through named streams,
so a rerun with the same config and inputs reproduces every output file
byte for byte.  Exit codes: 0 success, 2 invalid configuration or
arguments, 3 numerical failure, 4 file system trouble.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import datagen, figures, fnn, seeds, variational
from .column import (ColumnConfig, DetectorSpec, InjectionProfile, Chromatogram,
                     read_chromatogram, simulate, total_response,
                     write_chromatogram)
from .datagen import NoiseSpec, SplitSpec
from .errors import ChromfitError, ConfigError, SolverError
from .fnn import TrainConfig
from .isotherm import PARAM_NAMES, IsothermParams
from .variational import Observation, VariationalConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


@dataclasses.dataclass(frozen=True)
class ModelSpec:
    """Network shape between the feature and parameter layers."""

    hidden_layers: tuple = (64, 48)
    activation: str = "sigmoid"

    def __post_init__(self):
        layers = tuple(self.hidden_layers)
        if not layers:
            raise ConfigError("model needs at least one hidden layer")
        for size in layers:
            if not isinstance(size, int) or isinstance(size, bool) or size < 1:
                raise ConfigError(f"hidden layer sizes must be positive integers, got {size!r}")
        object.__setattr__(self, "hidden_layers", layers)
        if self.activation not in fnn.ACTIVATIONS:
            raise ConfigError(f"activation must be one of {fnn.ACTIVATIONS}")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated bundle of every per-run setting the commands consume."""

    master_seed: int = 0
    column: ColumnConfig = ColumnConfig()
    detector: DetectorSpec = DetectorSpec()
    model: ModelSpec = ModelSpec()
    training: TrainConfig = TrainConfig()
    split: SplitSpec = SplitSpec()
    variational: VariationalConfig = VariationalConfig()


def _check_keys(data: dict, allowed, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _build(cls, data: dict, where: str, transform=None):
    fields = {f.name for f in dataclasses.fields(cls)}
    _check_keys(data, fields, where)
    kwargs = dict(data)
    if transform:
        transform(kwargs)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _detector_keys(kwargs: dict) -> None:
    # JSON cannot hold infinity; an absent or null r_max means unclipped
    if kwargs.get("r_max") is None:
        kwargs.pop("r_max", None)


def _variational_keys(kwargs: dict) -> None:
    if "upper_bounds" in kwargs:
        bounds = kwargs["upper_bounds"]
        if not isinstance(bounds, (list, tuple)):
            raise ConfigError("variational.upper_bounds must be a list")
        kwargs["upper_bounds"] = tuple(float(b) for b in bounds)
    if "initial_guess" in kwargs:
        guess = kwargs["initial_guess"]
        if not isinstance(guess, (list, tuple)) or len(guess) != 8:
            raise ConfigError("variational.initial_guess must be a list of 8 numbers")
        kwargs["initial_guess"] = IsothermParams(*(float(v) for v in guess))


def _model_keys(kwargs: dict) -> None:
    if "hidden_layers" in kwargs:
        layers = kwargs["hidden_layers"]
        if not isinstance(layers, (list, tuple)):
            raise ConfigError("model.hidden_layers must be a list")
        kwargs["hidden_layers"] = tuple(layers)


_SECTIONS = {
    "column": (ColumnConfig, None),
    "detector": (DetectorSpec, _detector_keys),
    "model": (ModelSpec, _model_keys),
    "training": (TrainConfig, None),
    "split": (SplitSpec, None),
    "variational": (VariationalConfig, _variational_keys),
}


def load_config(path: str | None, seed_override: int | None = None) -> RunConfig:
    """Parse and validate a JSON config file; None yields the defaults.

    The training and split seeds are not independent settings: both are
    filled from the master seed so one number pins the whole pipeline.
    A `--seed` on the command line wins over the file's master_seed.
    """
    if path is None:
        data = {}
    else:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    _check_keys(data, set(_SECTIONS) | {"master_seed"}, "config")

    master_seed = data.get("master_seed", 0)
    if seed_override is not None:
        master_seed = seed_override
    if not isinstance(master_seed, int) or isinstance(master_seed, bool):
        raise ConfigError(f"master_seed must be an integer, got {master_seed!r}")

    parts = {"master_seed": master_seed}
    for name, (cls, transform) in _SECTIONS.items():
        section = data.get(name, {})
        if name in ("training", "split"):
            _check_keys(section, {f.name for f in dataclasses.fields(cls)} - {"seed"},
                        name)
            section = dict(section, seed=master_seed)
        try:
            parts[name] = _build(cls, section, name, transform)
        except (ValueError,) as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    return RunConfig(**parts)


def _json_value(value):
    if isinstance(value, IsothermParams):
        return [float(v) for v in value.as_array()]
    if isinstance(value, float) and math.isinf(value):
        return None
    if isinstance(value, tuple):
        return [_json_value(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _config_to_json(config: RunConfig) -> dict:
    out = {"master_seed": config.master_seed}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(config, name))
        section.pop("seed", None)
        out[name] = {k: _json_value(v) for k, v in section.items()}
    return out


def _write_run_echo(out_dir: str, command: str, config: RunConfig,
                    options: dict) -> None:
    payload = {
        "command": command,
        "options": {k: _json_value(v) for k, v in sorted(options.items())},
        "config": _config_to_json(config),
    }
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _time_grid(column: ColumnConfig) -> np.ndarray:
    nt = column.n_time_points_NT
    return np.arange(1, nt + 1) * (column.horizon_T / nt)


def _matrices(samples, stats):
    x = datagen.normalize_matrix(np.stack([s.features() for s in samples]), stats)
    y = np.stack([s.target.as_array() for s in samples])
    return x, y


def _load_model_dir(model_dir: str):
    model = fnn.read_model(os.path.join(model_dir, "model.json"))
    stats = datagen.read_norm_stats(os.path.join(model_dir, "norm_stats.json"))
    return model, stats


def cmd_generate(args) -> int:
    config = load_config(args.config, args.seed)
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    out = _ensure_out(args.out)
    dataset = datagen.generate(args.n, column=config.column,
                               detector=config.detector,
                               master_seed=config.master_seed,
                               n_workers=args.threads)
    datagen.write_dataset(os.path.join(out, "dataset"), dataset)
    if args.plot_data:
        rng = seeds.stream(config.master_seed, "plot")
        count = min(4, args.n)
        chosen = sorted(rng.choice(args.n, size=count, replace=False).tolist())
        grid = _time_grid(dataset.column)
        chroms, labels = [], []
        for index in chosen:
            chrom = Chromatogram(time_grid=grid,
                                 response=dataset.samples[index].response)
            write_chromatogram(os.path.join(out, f"sample_{index:05d}.csv"), chrom)
            chroms.append(chrom)
            labels.append(f"sample {index}")
        figures.save_chromatograms(os.path.join(out, "samples.png"), chroms, labels)
    _write_run_echo(out, "generate", config,
                    {"n": args.n, "out": args.out, "plot_data": args.plot_data,
                     "threads": args.threads})
    print(f"generated {args.n} samples at horizon {dataset.column.horizon_T:g} s "
          f"into {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config, args.seed)
    dataset = datagen.read_dataset(args.dataset)
    out = _ensure_out(args.out)
    parts = datagen.split(dataset, spec=config.split)
    train_samples = parts.train
    if args.augment_shift:
        train_samples = datagen.augment_shift(train_samples, args.augment_shift,
                                              config.master_seed)
    stats = datagen.fit_norm(train_samples)
    x_train, y_train = _matrices(train_samples, stats)
    x_val, y_val = _matrices(parts.validation, stats)
    model = fnn.FnnModel.init(
        (x_train.shape[1], *config.model.hidden_layers, y_train.shape[1]),
        config.model.activation, seeds.stream(config.master_seed, "init"))
    model.norm_fingerprint = stats.fingerprint()
    result = fnn.train(model, (x_train, y_train), (x_val, y_val), config.training)

    fnn.write_model(os.path.join(out, "model.json"), result.model)
    datagen.write_norm_stats(os.path.join(out, "norm_stats.json"), stats)
    fnn.write_history(os.path.join(out, "history.csv"), result.history)
    figures.save_history(os.path.join(out, "history.png"), result.history)
    percentiles = fnn.weight_percentiles(result.model)
    with open(os.path.join(out, "weight_percentiles.csv"), "w") as fh:
        fh.write("layer,percentile,value\n")
        for layer, q, value in percentiles:
            fh.write(f"{layer},{q:g},{value:.12g}\n")
    manifest = {
        "n_samples": len(dataset.samples),
        "counts": {"train": len(parts.train),
                   "validation": len(parts.validation),
                   "test": len(parts.test)},
        "train_indices": parts.train_indices.tolist(),
        "validation_indices": parts.validation_indices.tolist(),
        "test_indices": parts.test_indices.tolist(),
    }
    with open(os.path.join(out, "split.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_echo(out, "train", config,
                    {"dataset": args.dataset, "out": args.out,
                     "augment_shift": args.augment_shift, "threads": args.threads})
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs (best {result.best_epoch}); "
          f"final train R2 {last.train_r2:.4f}, validation R2 {last.val_r2:.4f}")
    return EXIT_OK


def _regrid_samples(samples, source_column: ColumnConfig, n_points: int):
    """Resample responses onto an n_points grid spanning the same horizon."""
    source_grid = _time_grid(source_column)
    target_grid = np.arange(1, n_points + 1) * (source_column.horizon_T / n_points)
    out = []
    for sample in samples:
        chrom = Chromatogram(time_grid=source_grid, response=sample.response)
        resampled = datagen.regrid(chrom, target_grid)
        out.append(datagen.Sample(response=resampled.response,
                                  injection=sample.injection,
                                  target=sample.target, origin=sample.origin))
    return out


def cmd_evaluate(args) -> int:
    config = load_config(args.config, args.seed)
    model, stats = _load_model_dir(args.model_dir)
    dataset = datagen.read_dataset(args.dataset)
    out = _ensure_out(args.out)
    parts = datagen.split(dataset, spec=config.split)
    samples = parts.test
    if args.noise:
        spec = NoiseSpec.parse(args.noise)
        samples = datagen.corrupt_dataset(samples, spec, config.master_seed,
                                          "evaluate-noise")
    expected = model.input_size - 2
    if len(samples[0].response) != expected:
        if not args.regrid:
            raise ConfigError(
                f"dataset has {len(samples[0].response)} time points, model "
                f"expects {expected}; pass --regrid to resample")
        samples = _regrid_samples(samples, dataset.column, expected)
    x, y = _matrices(samples, stats)
    predictions = fnn.forward(model, x)
    overall = fnn.r_squared(predictions, y)
    per_entry = fnn.r_squared_per_entry(predictions, y)
    with open(os.path.join(out, "evaluation.csv"), "w") as fh:
        fh.write("entry,r2\n")
        fh.write(f"overall,{overall:.12g}\n")
        for name, score in zip(PARAM_NAMES, per_entry):
            fh.write(f"{name},{score:.12g}\n")
    figures.save_entry_r2(os.path.join(out, "evaluation.png"), PARAM_NAMES,
                          per_entry, overall)
    _write_run_echo(out, "evaluate", config,
                    {"dataset": args.dataset, "model_dir": args.model_dir,
                     "out": args.out, "noise": args.noise,
                     "regrid": args.regrid, "threads": args.threads})
    scenario = args.noise if args.noise else "error-free"
    print(f"test R2 [{scenario}]: {overall:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, stats = _load_model_dir(args.model_dir)
    chrom = read_chromatogram(args.chromatogram)
    try:
        h1_text, h2_text = args.injection.split(",")
        h1, h2 = float(h1_text), float(h2_text)
    except ValueError as exc:
        raise ConfigError(
            f"--injection must be 'h1,h2' with numeric heights, got {args.injection!r}"
        ) from exc
    if h1 < 0 or h2 < 0 or not np.isfinite([h1, h2]).all():
        raise ConfigError("injection heights must be finite and >= 0")
    expected = model.input_size - 2
    response = chrom.response
    if response.size != expected:
        horizon = float(chrom.time_grid[-1])
        target_grid = np.arange(1, expected + 1) * (horizon / expected)
        response = datagen.regrid(chrom, target_grid).response
    sample = datagen.Sample(response=response, injection=np.array([h1, h2]))
    params = fnn.predict(model, stats, sample)
    for name, value in zip(PARAM_NAMES, params.as_array()):
        print(f"{name} {value:.6g}")
    if args.out:
        out = _ensure_out(args.out)
        payload = {name: float(value)
                   for name, value in zip(PARAM_NAMES, params.as_array())}
        with open(os.path.join(out, "prediction.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def _parse_observation(text: str, duration: float) -> Observation:
    parts = text.rsplit(":", 2)
    if len(parts) != 3:
        raise ConfigError(
            f"--observation must be 'path:h1:h2', got {text!r}")
    path, h1_text, h2_text = parts
    try:
        h1, h2 = float(h1_text), float(h2_text)
    except ValueError as exc:
        raise ConfigError(f"injection heights in {text!r} must be numeric") from exc
    chrom = read_chromatogram(path)
    return Observation(chromatogram=chrom,
                       injection=InjectionProfile(h1, h2, duration))


def cmd_fit_variational(args) -> int:
    config = load_config(args.config, args.seed)
    out = _ensure_out(args.out)
    duration = config.column.injection_duration
    observations = [_parse_observation(text, duration)
                    for text in args.observation]
    result = variational.fit(observations, config.column, config.detector,
                             config.variational)
    variational.write_fit_report(os.path.join(out, "fit.json"), result,
                                 config.variational)
    variational.write_trace(os.path.join(out, "trace.csv"), result)
    figures.save_trace(os.path.join(out, "trace.png"), result.trace)

    grid = observations[0].chromatogram.time_grid
    fit_column = dataclasses.replace(
        config.column, horizon_T=float(grid[-1]), n_time_points_NT=grid.size)
    observed, fitted, labels = [], [], []
    for k, obs in enumerate(observations):
        sim = simulate(fit_column, result.params, obs.injection)
        response = total_response(sim, config.detector)
        observed.append(obs.chromatogram.response)
        fitted.append(np.interp(grid, response.time_grid, response.response))
        labels.append(f"injection ({obs.injection.hbar1:g}, {obs.injection.hbar2:g})")
    figures.save_fit_overlay(os.path.join(out, "overlay.png"), grid,
                             observed, fitted, labels)

    if args.alpha_sweep:
        try:
            alphas = [float(a) for a in args.alpha_sweep.split(",")]
        except ValueError as exc:
            raise ConfigError(
                f"--alpha-sweep must be comma-separated numbers, got "
                f"{args.alpha_sweep!r}") from exc
        rows = variational.alpha_sweep(observations, config.column,
                                       config.detector, config.variational,
                                       alphas)
        with open(os.path.join(out, "alpha_sweep.csv"), "w") as fh:
            fh.write("alpha,data_term,moment_term,objective,converged\n")
            for row in rows:
                fh.write(f"{row['alpha']:.12g},{row['data_term']:.12g},"
                         f"{row['moment_term']:.12g},{row['objective']:.12g},"
                         f"{int(row['converged'])}\n")
    _write_run_echo(out, "fit-variational", config,
                    {"observation": list(args.observation), "out": args.out,
                     "alpha_sweep": args.alpha_sweep, "threads": args.threads})
    flag = "converged" if result.converged else "stopped at iteration cap"
    print(f"fit {flag}: objective {result.objective:.6g} after "
          f"{result.n_evaluations} evaluations")
    return EXIT_OK


def cmd_cross_validate(args) -> int:
    config = load_config(args.config, args.seed)
    dataset = datagen.read_dataset(args.dataset)
    out = _ensure_out(args.out)
    report = fnn.cross_validate(dataset, config.training,
                                config.model.hidden_layers,
                                activation=config.model.activation,
                                k=args.folds)
    fnn.write_cv_report(os.path.join(out, "cv.csv"), report)
    figures.save_cv(os.path.join(out, "cv.png"), report)
    _write_run_echo(out, "cross-validate", config,
                    {"dataset": args.dataset, "out": args.out,
                     "folds": args.folds, "threads": args.threads})
    print(f"{report.k}-fold validation R2 average {report.average_r2:.4f}")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; defaults when absent")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed; wins over the config file")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for dataset simulation; other stages "
                             "run single-threaded")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chromfit",
        description="Simulation, learning, and fitting tools for "
                    "two-component column chromatography.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a labeled dataset")
    _add_common(p)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plot-data", action="store_true",
                   help="write four sample chromatograms as CSV and PNG")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit the network on a stored dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--augment-shift", type=int, default=0, metavar="M",
                   help="shift training responses by a draw from {-M..M}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model on the test split")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--model-dir", required=True,
                   help="directory holding model.json and norm_stats.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--noise", help="corruption spec, e.g. normal:0.04:0.1")
    p.add_argument("--regrid", action="store_true",
                   help="resample responses when grids mismatch")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="estimate parameters for one chromatogram")
    _add_common(p)
    p.add_argument("--model-dir", required=True,
                   help="directory holding model.json and norm_stats.json")
    p.add_argument("--chromatogram", required=True, help="CSV file (t,response)")
    p.add_argument("--injection", required=True, metavar="H1,H2",
                   help="injection heights of the two components")
    p.add_argument("--out", help="optional directory for prediction.json")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fit-variational",
                       help="least-squares fit of observed chromatograms")
    _add_common(p)
    p.add_argument("--observation", action="append", required=True,
                   metavar="PATH:H1:H2",
                   help="chromatogram CSV with its injection heights; repeatable")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--alpha-sweep", metavar="A1,A2,...",
                   help="additionally fit once per regularization weight")
    p.set_defaults(func=cmd_fit_variational)

    p = sub.add_parser("cross-validate", help="k-fold stability report")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--folds", type=int, default=5, help="fold count")
    p.set_defaults(func=cmd_cross_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ChromfitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
