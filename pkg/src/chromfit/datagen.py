"""Synthetic training-data generation for the isotherm estimation network.

Builds supervised pairs (x, y) where y is an 8-coefficient isotherm vector
drawn from Uniform(0,100), the injection pair from Uniform(0,30), and x is
the simulated detector response concatenated with the injection heights.
Also provides the four corruption scenarios (multiplicative normal, uniform
and scaled-Poisson noise plus integer time shifts with zero fill), shift
augmentation, monotone Hermite regridding for foreign time grids, feature
standardization fitted on training data only, and the train/validation/test
split with optional duplication-weighted real samples.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import column as column_sim
from . import seeds
from .column import Chromatogram, ColumnConfig, DetectorSpec, InjectionProfile
from .errors import ConfigError, SolverError
from .isotherm import IsothermParams

TARGET_HIGH = 100.0
INJECTION_HIGH = 30.0

# number of leading samples probed to fix a shared simulation horizon
HORIZON_PROBE_COUNT = 8

DATASET_FORMAT = "chromfit-dataset"
NORM_FORMAT = "chromfit-normstats"


@dataclass(eq=False)
class Sample:
    """One supervised pair: the feature vector is (response, h1, h2)."""

    response: np.ndarray
    injection: np.ndarray
    target: IsothermParams | None = None
    origin: str = "synthetic"

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=float)
        self.injection = np.asarray(self.injection, dtype=float)
        if self.response.ndim != 1:
            raise ConfigError("response must be a 1-d array")
        if self.injection.shape != (2,):
            raise ConfigError("injection must hold exactly two heights")
        if np.any(self.injection < 0) or not np.all(np.isfinite(self.injection)):
            raise ConfigError("injection heights must be finite and >= 0")
        if self.origin not in ("synthetic", "real"):
            raise ConfigError(f"origin must be synthetic or real, got {self.origin!r}")

    def features(self) -> np.ndarray:
        return np.concatenate([self.response, self.injection])


@dataclass(eq=False)
class Dataset:
    samples: list
    column: ColumnConfig
    detector: DetectorSpec
    master_seed: int | None = None
    origin: str = "synthetic"

    @property
    def n_time_points(self) -> int:
        return self.column.n_time_points_NT

    def feature_matrix(self) -> np.ndarray:
        return np.stack([s.features() for s in self.samples])

    def target_matrix(self) -> np.ndarray:
        rows = []
        for i, s in enumerate(self.samples):
            if s.target is None:
                raise ConfigError(f"sample {i} has no target")
            rows.append(s.target.as_array())
        return np.stack(rows)


@dataclass(eq=False)
class NormStats:
    """Per-feature mean and population standard deviation of training data."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ConfigError("mean and std must be 1-d arrays of equal length")
        if np.any(self.std < 0):
            raise ConfigError("std entries must be >= 0")

    def fingerprint(self) -> str:
        import hashlib

        payload = self.mean.tobytes() + self.std.tobytes()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class NoiseSpec:
    """One corruption scenario; build via the named constructors or parse().

    kinds and their (a, b) readings:
      normal     - multiplier 1 + eps, eps ~ N(a, b^2)
      uniform    - multiplier 1 + eps, eps ~ Uniform(a, b)
      poisson    - multiplier 1 + Poisson(a)/b
      time_shift - integer shift tau ~ Uniform{-a..a}, zero fill
    """

    kind: str
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("normal", "uniform", "poisson", "time_shift"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ConfigError("noise parameters must be finite")
        if self.kind == "normal" and self.b < 0:
            raise ConfigError("normal noise needs sigma >= 0")
        if self.kind == "uniform" and self.a > self.b:
            raise ConfigError("uniform noise needs lo <= hi")
        if self.kind == "poisson" and (self.a <= 0 or self.b <= 0):
            raise ConfigError("poisson noise needs rate > 0 and divisor > 0")
        if self.kind == "time_shift":
            if self.a < 0 or self.a != int(self.a):
                raise ConfigError("time_shift needs a nonnegative integer max shift")

    @classmethod
    def normal(cls, mu: float, sigma: float) -> "NoiseSpec":
        return cls("normal", mu, sigma)

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "NoiseSpec":
        return cls("uniform", lo, hi)

    @classmethod
    def poisson(cls, rate: float, divisor: float) -> "NoiseSpec":
        return cls("poisson", rate, divisor)

    @classmethod
    def time_shift(cls, max_shift: int) -> "NoiseSpec":
        return cls("time_shift", float(max_shift))

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """Parse CLI notation: normal:0.04:0.1, uniform:-0.2:0.1,
        poisson:5:100, shift:1."""
        parts = text.split(":")
        kind = parts[0].strip().lower()
        try:
            args = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise ConfigError(f"bad noise parameters in {text!r}") from exc
        if kind in ("shift", "time_shift"):
            if len(args) != 1:
                raise ConfigError(f"shift noise takes one parameter, got {text!r}")
            return cls.time_shift(int(args[0]))
        if kind in ("normal", "uniform", "poisson"):
            if len(args) != 2:
                raise ConfigError(f"{kind} noise takes two parameters, got {text!r}")
            return cls(kind, args[0], args[1])
        raise ConfigError(f"unknown noise kind in {text!r}")

    def describe(self) -> str:
        if self.kind == "time_shift":
            return f"shift{int(self.a)}"
        return f"{self.kind}_{self.a:g}_{self.b:g}"


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.20
    train_fraction_of_rest: float = 0.75
    real_duplication_ratio: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("test_fraction", "train_fraction_of_rest"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if self.real_duplication_ratio < 1:
            raise ConfigError("real_duplication_ratio must be >= 1")


@dataclass(eq=False)
class Splits:
    train: list
    validation: list
    test: list
    train_indices: np.ndarray
    validation_indices: np.ndarray
    test_indices: np.ndarray


def sample_target(rng: np.random.Generator) -> IsothermParams:
    """Draw the 8 isotherm coefficients i.i.d. from Uniform(0, 100)."""
    return IsothermParams.from_array(rng.uniform(0.0, TARGET_HIGH, size=8))


def sample_injection(rng: np.random.Generator) -> np.ndarray:
    """Draw the two injection heights i.i.d. from Uniform(0, 30) mM."""
    return rng.uniform(0.0, INJECTION_HIGH, size=2)


def _draw_inputs(master_seed: int, n: int):
    targets = [sample_target(seeds.stream(master_seed, "target", i)) for i in range(n)]
    injections = [sample_injection(seeds.stream(master_seed, "injection", i))
                  for i in range(n)]
    return targets, injections


def generate(n: int, column: ColumnConfig = ColumnConfig(),
             detector: DetectorSpec = DetectorSpec(), master_seed: int = 0,
             n_workers: int = 1) -> Dataset:
    """Simulate n supervised samples with per-sample seed streams.

    Targets and injections come from streams derived from the master seed
    and the sample index, so the dataset is reproducible bit-for-bit and
    independent of the worker count.  When the column config leaves the
    horizon open, the first few samples are probed with the automatic
    elution horizon and the largest probe result becomes the shared grid
    horizon of the whole dataset.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if n_workers < 1:
        raise ConfigError(f"n_workers must be >= 1, got {n_workers}")
    targets, injections = _draw_inputs(master_seed, n)
    duration = column.injection_duration

    if column.horizon_T is None:
        horizon = 0.0
        for i in range(min(HORIZON_PROBE_COUNT, n)):
            try:
                probe = column_sim.simulate(
                    column, targets[i],
                    InjectionProfile(injections[i][0], injections[i][1], duration))
            except SolverError as exc:
                raise SolverError(f"sample {i}: {exc}") from exc
            horizon = max(horizon, probe.horizon_T)
        column = dataclasses.replace(column, horizon_T=horizon)

    responses = [None] * n

    def run(i):
        profile = InjectionProfile(injections[i][0], injections[i][1], duration)
        try:
            result = column_sim.simulate(column, targets[i], profile)
        except SolverError as exc:
            raise SolverError(f"sample {i}: {exc}") from exc
        responses[i] = column_sim.total_response(result, detector).response

    if n_workers == 1:
        for i in range(n):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run, range(n)))

    samples = [Sample(response=responses[i], injection=injections[i],
                      target=targets[i]) for i in range(n)]
    return Dataset(samples=samples, column=column, detector=detector,
                   master_seed=master_seed)


def regrid(series: Chromatogram, target_grid) -> Chromatogram:
    """Resample a chromatogram onto a new grid by monotone cubic Hermite
    interpolation (shape preserving, no overshoot); points outside the
    source span evaluate to 0."""
    target = np.asarray(target_grid, dtype=float)
    if target.ndim != 1 or target.size < 2:
        raise ConfigError("target grid must be a 1-d array with >= 2 points")
    if not np.all(np.isfinite(target)) or np.any(np.diff(target) <= 0):
        raise ConfigError("target grid must be finite and strictly increasing")
    interp = PchipInterpolator(series.time_grid, series.response, extrapolate=False)
    values = interp(target)
    values = np.where(np.isnan(values), 0.0, values)
    return Chromatogram(time_grid=target, response=values)


def corrupt(sample: Sample, spec: NoiseSpec, rng: np.random.Generator) -> Sample:
    """Apply one corruption draw to the response; injections are untouched."""
    r = sample.response
    if spec.kind == "time_shift":
        shifted = shift_response(r, int(rng.integers(-int(spec.a), int(spec.a) + 1)))
        return Sample(response=shifted, injection=sample.injection.copy(),
                      target=sample.target, origin=sample.origin)
    if spec.kind == "normal":
        eps = rng.normal(spec.a, spec.b, size=r.size)
    elif spec.kind == "uniform":
        eps = rng.uniform(spec.a, spec.b, size=r.size)
    else:
        eps = rng.poisson(spec.a, size=r.size) / spec.b
    return Sample(response=r * (1.0 + eps), injection=sample.injection.copy(),
                  target=sample.target, origin=sample.origin)


def shift_response(r: np.ndarray, tau: int) -> np.ndarray:
    """Shift a response series by tau grid points, filling vacated entries
    with zero: tau = +2 maps (r_1, ..., r_N) to (0, 0, r_1, ..., r_{N-2})."""
    out = np.zeros_like(r)
    if tau == 0:
        out[:] = r
    elif tau > 0:
        if tau < r.size:
            out[tau:] = r[:-tau]
    else:
        if -tau < r.size:
            out[:tau] = r[-tau:]
    return out


def corrupt_dataset(samples: list, spec: NoiseSpec, master_seed: int,
                    stream_name: str = "noise") -> list:
    """Corrupt every sample with an independent per-index seed stream."""
    return [corrupt(s, spec, seeds.stream(master_seed, stream_name, i))
            for i, s in enumerate(samples)]


def augment_shift(samples: list, m: int, master_seed: int) -> list:
    """Shift every synthetic sample once by its own uniform draw from
    {-m..m}; real samples pass through unchanged."""
    if m < 0:
        raise ConfigError(f"max shift must be >= 0, got {m}")
    if m == 0:
        return list(samples)
    spec = NoiseSpec.time_shift(m)
    out = []
    for i, s in enumerate(samples):
        if s.origin != "synthetic":
            out.append(s)
            continue
        out.append(corrupt(s, spec, seeds.stream(master_seed, "augment", i)))
    return out


def fit_norm(training_samples: list) -> NormStats:
    """Per-feature mean and population (denominator N) standard deviation."""
    if not training_samples:
        raise ConfigError("cannot fit normalization on an empty training set")
    X = np.stack([s.features() for s in training_samples])
    return NormStats(mean=X.mean(axis=0), std=X.std(axis=0, ddof=0))


def normalize_matrix(X: np.ndarray, stats: NormStats) -> np.ndarray:
    """Standardize feature rows; constant features are centered only."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != stats.mean.size:
        raise ConfigError(
            f"feature length {X.shape[-1]} does not match stats ({stats.mean.size})")
    denom = np.where(stats.std == 0.0, 1.0, stats.std)
    return (X - stats.mean) / denom


def normalize(sample: Sample, stats: NormStats) -> Sample:
    x = normalize_matrix(sample.features(), stats)
    nt = sample.response.size
    return Sample(response=x[:nt], injection=sample.injection.copy(),
                  target=sample.target, origin=sample.origin)


def split(dataset: Dataset, real_samples: list | None = None,
          spec: SplitSpec = SplitSpec()) -> Splits:
    """Shuffle-split the synthetic data and weave in duplicated real samples.

    The test set is drawn from synthetic data only.  Real samples (at least
    5 when present) contribute the first three to training and the next two
    to validation, each duplicated until the real portion of its set is
    1:real_duplication_ratio against the synthetic part.
    """
    n = len(dataset.samples)
    if n < 5:
        raise ConfigError(f"need at least 5 samples to split, got {n}")
    rng = seeds.stream(spec.seed, "split")
    order = rng.permutation(n)
    n_test = round(n * spec.test_fraction)
    n_train = round((n - n_test) * spec.train_fraction_of_rest)
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:n_test + n_train])
    val_idx = np.sort(order[n_test + n_train:])

    train = [dataset.samples[i] for i in train_idx]
    validation = [dataset.samples[i] for i in val_idx]
    test = [dataset.samples[i] for i in test_idx]

    if real_samples:
        weave_real(train, validation, real_samples, spec.real_duplication_ratio)

    return Splits(train=train, validation=validation, test=test,
                  train_indices=train_idx, validation_indices=val_idx,
                  test_indices=test_idx)


def weave_real(train: list, validation: list, real_samples: list, ratio: int) -> None:
    """Append duplicated real samples in place: three cycle through the
    training slots, the next two through validation, sized so each set holds
    one real sample per `ratio` synthetic ones."""
    if len(real_samples) < 5:
        raise ConfigError(
            f"real-data mode needs at least 5 real samples, got {len(real_samples)}")
    for body, reals in ((train, real_samples[:3]), (validation, real_samples[3:5])):
        slots = round(len(body) / ratio)
        for k in range(slots):
            body.append(reals[k % len(reals)])


def _detector_to_json(detector: DetectorSpec) -> dict:
    r_max = None if math.isinf(detector.r_max) else detector.r_max
    return {"gain1": detector.gain1, "gain2": detector.gain2, "r_max": r_max}


def _detector_from_json(obj: dict) -> DetectorSpec:
    r_max = obj.get("r_max")
    return DetectorSpec(gain1=obj["gain1"], gain2=obj["gain2"],
                        r_max=math.inf if r_max is None else r_max)


def _column_to_json(config: ColumnConfig) -> dict:
    return {
        "length_L": config.length_L, "velocity_u": config.velocity_u,
        "phase_ratio_F": config.phase_ratio_F, "diffusion_Da": config.diffusion_Da,
        "plate_count": config.plate_count, "n_cells": config.n_cells,
        "horizon_T": config.horizon_T, "n_time_points_NT": config.n_time_points_NT,
        "injection_duration": config.injection_duration,
    }


def write_dataset(directory, dataset: Dataset) -> None:
    """Store a dataset as meta.json plus a samples.csv matrix whose row
    layout is (r_1..r_NT, h1, h2, y_1..y_8)."""
    os.makedirs(directory, exist_ok=True)
    nt = dataset.n_time_points
    meta = {
        "format": DATASET_FORMAT,
        "version": 1,
        "n_samples": len(dataset.samples),
        "n_time_points": nt,
        "origin": dataset.origin,
        "master_seed": dataset.master_seed,
        "column": _column_to_json(dataset.column),
        "detector": _detector_to_json(dataset.detector),
    }
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows = np.empty((len(dataset.samples), nt + 2 + 8))
    for i, s in enumerate(dataset.samples):
        if s.response.size != nt:
            raise ConfigError(
                f"sample {i} has {s.response.size} points, dataset expects {nt}")
        if s.target is None:
            raise ConfigError(f"sample {i} has no target; cannot store")
        rows[i, :nt] = s.response
        rows[i, nt:nt + 2] = s.injection
        rows[i, nt + 2:] = s.target.as_array()
    np.savetxt(os.path.join(directory, "samples.csv"), rows,
               delimiter=",", fmt="%.9g")


def read_dataset(directory) -> Dataset:
    meta_path = os.path.join(directory, "meta.json")
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("format") != DATASET_FORMAT:
        raise ConfigError(f"{meta_path} is not a dataset metadata file")
    nt = meta["n_time_points"]
    config = ColumnConfig(**meta["column"])
    detector = _detector_from_json(meta["detector"])
    data = np.loadtxt(os.path.join(directory, "samples.csv"),
                      delimiter=",", ndmin=2)
    if data.shape[1] != nt + 10:
        raise ConfigError(
            f"samples.csv has {data.shape[1]} columns, expected {nt + 10}")
    if data.shape[0] != meta["n_samples"]:
        raise ConfigError(
            f"samples.csv has {data.shape[0]} rows, metadata says {meta['n_samples']}")
    origin = meta.get("origin", "synthetic")
    samples = [Sample(response=row[:nt], injection=row[nt:nt + 2],
                      target=IsothermParams.from_array(row[nt + 2:]),
                      origin=origin)
               for row in data]
    return Dataset(samples=samples, column=config, detector=detector,
                   master_seed=meta.get("master_seed"), origin=origin)


def write_norm_stats(path, stats: NormStats) -> None:
    payload = {
        "format": NORM_FORMAT,
        "n_features": int(stats.mean.size),
        "mean": stats.mean.tolist(),
        "std": stats.std.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def read_norm_stats(path) -> NormStats:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != NORM_FORMAT:
        raise ConfigError(f"{path} is not a normalization stats file")
    stats = NormStats(mean=np.array(payload["mean"]), std=np.array(payload["std"]))
    if stats.mean.size != payload.get("n_features"):
        raise ConfigError(f"{path} has inconsistent feature count")
    return stats
