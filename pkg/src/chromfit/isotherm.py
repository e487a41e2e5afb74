"""Two-component competitive Bi-Langmuir adsorption isotherm.

The stationary-phase load of component mu is the sum of two competitive
Langmuir terms, one per adsorption site:

    q_mu = a_site1_mu * c_mu / (1 + b_site1_1*c1 + b_site1_2*c2)
         + a_site2_mu * c_mu / (1 + b_site2_1*c1 + b_site2_2*c2)

The a coefficients are dimensionless retention factors, the b coefficients
association constants in 1/mM.  The 8-vector ordering is fixed:

    [a1_site1, b1_site1, a1_site2, b1_site2,
     a2_site1, b2_site1, a2_site2, b2_site2]

(component-1 block first, within a block site 1 then site 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# Solver undershoot tolerance: concentrations in [-UNDERSHOOT_TOL, 0) are
# treated as exact zeros, anything more negative is rejected.
UNDERSHOOT_TOL = 1e-12

PARAM_NAMES = (
    "a1_site1", "b1_site1", "a1_site2", "b1_site2",
    "a2_site1", "b2_site1", "a2_site2", "b2_site2",
)


@dataclass(frozen=True)
class IsothermParams:
    """The eight adsorption-isotherm coefficients, all >= 0."""

    a1_site1: float
    b1_site1: float
    a1_site2: float
    b1_site2: float
    a2_site1: float
    b2_site1: float
    a2_site2: float
    b2_site2: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ConfigError(f"isotherm coefficient {name} must be finite, got {value}")
            if value < 0:
                raise ConfigError(f"isotherm coefficient {name} must be >= 0, got {value}")

    @classmethod
    def from_array(cls, values) -> "IsothermParams":
        arr = np.asarray(values, dtype=float).reshape(-1)
        if arr.shape != (8,):
            raise ConfigError(f"expected 8 coefficients, got shape {arr.shape}")
        return cls(*arr.tolist())

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES], dtype=float)

    def component_swapped(self) -> "IsothermParams":
        """Exchange the roles of components 1 and 2."""
        return IsothermParams(
            self.a2_site1, self.b2_site1, self.a2_site2, self.b2_site2,
            self.a1_site1, self.b1_site1, self.a1_site2, self.b1_site2,
        )

    def site_swapped(self) -> "IsothermParams":
        """Exchange the labels of the two adsorption sites.

        The isotherm is invariant under this relabeling: both orderings
        produce identical stationary-phase loads for every concentration.
        """
        return IsothermParams(
            self.a1_site2, self.b1_site2, self.a1_site1, self.b1_site1,
            self.a2_site2, self.b2_site2, self.a2_site1, self.b2_site1,
        )


def _clean_concentrations(c) -> np.ndarray:
    """Validate a concentration pair (or batch), clamping tiny undershoot."""
    arr = np.asarray(c, dtype=float)
    if arr.shape[0] != 2:
        raise ConfigError(f"expected concentrations with leading dimension 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError("concentrations must be finite")
    if np.any(arr < -UNDERSHOOT_TOL):
        raise ConfigError(f"concentrations must be >= -{UNDERSHOOT_TOL}, got min {arr.min()}")
    return np.maximum(arr, 0.0)


def eval(params: IsothermParams, c) -> np.ndarray:
    """Stationary-phase loads q = (q1, q2) at mobile-phase concentrations c.

    `c` is (c1, c2) or a batch of shape (2, n); the result has the same
    shape.  Both outputs are >= 0 for valid inputs.
    """
    c = _clean_concentrations(c)
    c1, c2 = c[0], c[1]
    den1 = 1.0 + (params.b1_site1 * c1 + params.b2_site1 * c2)
    den2 = 1.0 + (params.b1_site2 * c1 + params.b2_site2 * c2)
    q1 = params.a1_site1 * c1 / den1 + params.a1_site2 * c1 / den2
    q2 = params.a2_site1 * c2 / den1 + params.a2_site2 * c2 / den2
    return np.stack([q1, q2])


def jacobian(params: IsothermParams, c) -> np.ndarray:
    """Partial derivatives dq_mu/dc_j of the isotherm, shape (2, 2) (+ batch).

    For batched input (2, n) the result is (2, 2, n).  The diagonal holds
    the self-sensitivities, the off-diagonal the competitive cross terms
    (non-positive: raising one component displaces the other).
    """
    c = _clean_concentrations(c)
    c1, c2 = c[0], c[1]
    den1 = 1.0 + (params.b1_site1 * c1 + params.b2_site1 * c2)
    den2 = 1.0 + (params.b1_site2 * c1 + params.b2_site2 * c2)
    den1_sq = den1 * den1
    den2_sq = den2 * den2
    dq1_dc1 = (params.a1_site1 * (den1 - params.b1_site1 * c1) / den1_sq
               + params.a1_site2 * (den2 - params.b1_site2 * c1) / den2_sq)
    dq1_dc2 = -(params.a1_site1 * c1 * params.b2_site1 / den1_sq
                + params.a1_site2 * c1 * params.b2_site2 / den2_sq)
    dq2_dc1 = -(params.a2_site1 * c2 * params.b1_site1 / den1_sq
                + params.a2_site2 * c2 * params.b1_site2 / den2_sq)
    dq2_dc2 = (params.a2_site1 * (den1 - params.b2_site1 * c2) / den1_sq
               + params.a2_site2 * (den2 - params.b2_site2 * c2) / den2_sq)
    return np.stack([np.stack([dq1_dc1, dq1_dc2]), np.stack([dq2_dc1, dq2_dc2])])


def saturation_capacity(params: IsothermParams, component: int) -> float:
    """Upper bound a_site1/b_site1 + a_site2/b_site2 for one component.

    Only defined when both b terms of that component are positive
    (otherwise the isotherm is unbounded in that direction).
    """
    if component == 1:
        a1, b1, a2, b2 = params.a1_site1, params.b1_site1, params.a1_site2, params.b1_site2
    elif component == 2:
        a1, b1, a2, b2 = params.a2_site1, params.b2_site1, params.a2_site2, params.b2_site2
    else:
        raise ConfigError("component must be 1 or 2")
    if b1 <= 0 or b2 <= 0:
        raise ConfigError("saturation capacity requires positive b coefficients")
    return a1 / b1 + a2 / b2
