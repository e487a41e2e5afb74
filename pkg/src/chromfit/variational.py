"""Injection-weighted least-squares estimation of isotherm parameters.

The traditional baseline the network is compared against: a weighted
least-squares misfit between observed and simulated chromatograms over one
or more injection profiles, optionally regularized by the squared first
moment of the residual, minimized derivative-free under a nonnegativity
box.  Weights normalize each observation's energy so profiles of different
magnitude contribute equally.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .column import (
    Chromatogram,
    ColumnConfig,
    DetectorSpec,
    InjectionProfile,
    simulate,
    total_response,
)
from .errors import ConfigError
from .isotherm import PARAM_NAMES, IsothermParams

GRID_MATCH_RTOL = 1e-9
REPORT_FORMAT = "chromfit-variational-fit"


@dataclass(frozen=True)
class Observation:
    """One measured chromatogram with the injection that produced it.

    The weight is computed from the data by `weight_normalize`, not chosen
    by the user; None means not yet assigned.
    """

    chromatogram: Chromatogram
    injection: InjectionProfile
    weight: float | None = None

    def __post_init__(self):
        if self.weight is not None:
            if not np.isfinite(self.weight) or self.weight <= 0:
                raise ConfigError(f"weight must be positive, got {self.weight}")

    def sum_of_squares(self) -> float:
        return float(np.sum(self.chromatogram.response ** 2))


@dataclass(frozen=True)
class VariationalConfig:
    alpha: float = 0.0
    upper_bounds: tuple = (100.0,) * 8
    initial_guess: IsothermParams = IsothermParams(
        1.0, 0.1, 1.0, 0.1, 1.0, 0.1, 1.0, 0.1)
    max_iterations: int = 2000
    tolerance: float = 1e-10
    param_tolerance: float = 1e-8
    # coarser fitting resolution; None keeps the column's own cell count
    n_cells: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if len(self.upper_bounds) != 8:
            raise ConfigError("upper_bounds needs one entry per parameter")
        if any(not u > 0 for u in self.upper_bounds):
            raise ConfigError("upper bounds must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not self.tolerance > 0 or not self.param_tolerance > 0:
            raise ConfigError("tolerances must be positive")
        if self.n_cells is not None and self.n_cells < 3:
            raise ConfigError("fitting resolution needs at least 3 cells")
        guess = self.initial_guess.as_array()
        if np.any(guess > np.asarray(self.upper_bounds)):
            raise ConfigError("initial guess lies outside the bounds box")


@dataclass
class FitResult:
    params: IsothermParams
    objective: float
    data_term: float
    moment_term: float
    iterations: int
    n_evaluations: int
    converged: bool
    trace: np.ndarray
    residuals: np.ndarray


def weight_normalize(observations) -> np.ndarray:
    """Weights w = 1/sum(r^2) per observation, equalizing w * energy at 1."""
    if not observations:
        raise ConfigError("need at least one observation")
    weights = np.empty(len(observations))
    for k, obs in enumerate(observations):
        energy = obs.sum_of_squares()
        if energy <= 0:
            raise ConfigError(f"observation {k} is all zero; cannot weight it")
        weights[k] = 1.0 / energy
    return weights


def _shared_grid(observations) -> np.ndarray:
    grid = observations[0].chromatogram.time_grid
    for k, obs in enumerate(observations[1:], start=1):
        other = obs.chromatogram.time_grid
        if other.shape != grid.shape or not np.allclose(
                other, grid, rtol=GRID_MATCH_RTOL, atol=0.0):
            raise ConfigError(
                f"observation {k} is not on the shared time grid")
    return grid


def _resolve_weights(observations) -> np.ndarray:
    given = [obs.weight for obs in observations]
    if all(w is not None for w in given):
        return np.asarray(given, dtype=float)
    return weight_normalize(observations)


def _fit_column(column: ColumnConfig, grid, cfg: VariationalConfig) -> ColumnConfig:
    changes = {"horizon_T": float(grid[-1]), "n_time_points_NT": grid.size}
    if cfg.n_cells is not None:
        changes["n_cells"] = cfg.n_cells
    return dataclasses.replace(column, **changes)


def _simulated_responses(params, observations, column, detector, grid):
    responses = []
    for obs in observations:
        result = simulate(column, params, obs.injection)
        sim = total_response(result, detector)
        responses.append(np.interp(grid, sim.time_grid, sim.response))
    return responses


def objective_terms(params: IsothermParams, observations, column: ColumnConfig,
                    detector: DetectorSpec, cfg: VariationalConfig = None):
    """(data, moment) pieces of the objective; the total is data + alpha*moment.

    data   = sum_s w_s * sum_i (r_sim_i - r_obs_i)^2
    moment = sum_s w_s * (sum_i t_i * (r_sim_i - r_obs_i))^2
    """
    cfg = cfg if cfg is not None else VariationalConfig()
    observations = list(observations)
    grid = _shared_grid(observations)
    weights = _resolve_weights(observations)
    fit_col = _fit_column(column, grid, cfg)
    data = 0.0
    moment = 0.0
    sims = _simulated_responses(params, observations, fit_col, detector, grid)
    for obs, w, sim in zip(observations, weights, sims):
        residual = sim - obs.chromatogram.response
        data += w * float(np.sum(residual ** 2))
        moment += w * float(np.sum(grid * residual)) ** 2
    return data, moment


def objective(params: IsothermParams, observations, column: ColumnConfig,
              detector: DetectorSpec, alpha: float = 0.0,
              cfg: VariationalConfig = None) -> float:
    """Weighted least-squares misfit plus alpha times the first-moment term."""
    if not np.isfinite(alpha) or alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    base = cfg if cfg is not None else VariationalConfig()
    data, moment = objective_terms(params, observations, column, detector, base)
    return data + alpha * moment


def fit(observations, column: ColumnConfig, detector: DetectorSpec,
        cfg: VariationalConfig) -> FitResult:
    """Minimize the objective over the nonnegativity box by Nelder-Mead.

    Simplex vertices are projected onto the box, so every evaluated point
    is feasible.  Returns the best point with the best-so-far objective
    trace (non-increasing by construction); hitting the iteration cap
    clears the `converged` flag instead of raising.
    """
    observations = list(observations)
    if not observations:
        raise ConfigError("need at least one observation")
    grid = _shared_grid(observations)
    weights = _resolve_weights(observations)
    weighted = [dataclasses.replace(obs, weight=float(w))
                for obs, w in zip(observations, weights)]
    fit_col = _fit_column(column, grid, cfg)

    trace = []

    def evaluate(theta):
        params = IsothermParams.from_array(np.maximum(theta, 0.0))
        sims = _simulated_responses(params, weighted, fit_col, detector, grid)
        data = 0.0
        moment = 0.0
        for obs, sim in zip(weighted, sims):
            residual = sim - obs.chromatogram.response
            data += obs.weight * float(np.sum(residual ** 2))
            moment += obs.weight * float(np.sum(grid * residual)) ** 2
        value = data + cfg.alpha * moment
        trace.append(value if not trace else min(trace[-1], value))
        return value

    result = minimize(
        evaluate, cfg.initial_guess.as_array(), method="Nelder-Mead",
        bounds=[(0.0, float(u)) for u in cfg.upper_bounds],
        options={"maxiter": cfg.max_iterations, "maxfev": 40 * cfg.max_iterations,
                 "fatol": cfg.tolerance, "xatol": cfg.param_tolerance})

    best = IsothermParams.from_array(np.clip(result.x, 0.0, cfg.upper_bounds))
    data, moment = objective_terms(best, weighted, column, detector, cfg)
    residuals = np.empty(len(weighted))
    sims = _simulated_responses(best, weighted, fit_col, detector, grid)
    for k, (obs, sim) in enumerate(zip(weighted, sims)):
        residuals[k] = obs.weight * float(
            np.sum((sim - obs.chromatogram.response) ** 2))
    return FitResult(params=best, objective=data + cfg.alpha * moment,
                     data_term=data, moment_term=moment,
                     iterations=int(result.nit), n_evaluations=len(trace),
                     converged=bool(result.success), trace=np.asarray(trace),
                     residuals=residuals)


def alpha_sweep(observations, column: ColumnConfig, detector: DetectorSpec,
                cfg: VariationalConfig, alphas) -> list:
    """Fit once per alpha; rows of (alpha, data, moment, objective, converged)."""
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ConfigError("alpha sweep needs at least one value")
    rows = []
    for alpha in alphas:
        swept = dataclasses.replace(cfg, alpha=alpha)
        result = fit(observations, column, detector, swept)
        rows.append({"alpha": alpha, "data_term": result.data_term,
                     "moment_term": result.moment_term,
                     "objective": result.objective,
                     "converged": result.converged})
    return rows


def write_fit_report(path, result: FitResult, cfg: VariationalConfig) -> None:
    payload = {
        "format": REPORT_FORMAT,
        "version": 1,
        "params": {name: value for name, value in
                   zip(PARAM_NAMES, result.params.as_array())},
        "objective": result.objective,
        "data_term": result.data_term,
        "moment_term": result.moment_term,
        "iterations": result.iterations,
        "n_evaluations": result.n_evaluations,
        "converged": result.converged,
        "per_observation_residuals": result.residuals.tolist(),
        "config": {
            "alpha": cfg.alpha,
            "upper_bounds": list(cfg.upper_bounds),
            "initial_guess": list(cfg.initial_guess.as_array()),
            "max_iterations": cfg.max_iterations,
            "tolerance": cfg.tolerance,
            "param_tolerance": cfg.param_tolerance,
            "n_cells": cfg.n_cells,
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_trace(path, result: FitResult) -> None:
    lines = ["evaluation,best_objective"]
    for k, value in enumerate(result.trace, start=1):
        lines.append(f"{k},{value:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")
