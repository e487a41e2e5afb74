import numpy as np
import pytest

from chromfit import isotherm
from chromfit.errors import ConfigError
from chromfit.isotherm import IsothermParams

# Reference coefficient set used across the test suite (a traditionally
# fitted cycloheptanone/cyclopentanone system).
REFERENCE = IsothermParams(9.54, 0.91, 9.53, 1.00, 2.74, 0.43, 1.80, 0.08)


def scalar_oracle(y, c1, c2):
    """Independent scalar evaluation of the two-site competitive isotherm."""
    a11, b11, a12, b12, a21, b21, a22, b22 = y
    den_site1 = 1.0 + b11 * c1 + b21 * c2
    den_site2 = 1.0 + b12 * c1 + b22 * c2
    q1 = a11 * c1 / den_site1 + a12 * c1 / den_site2
    q2 = a21 * c2 / den_site1 + a22 * c2 / den_site2
    return q1, q2


def test_zero_concentration_gives_zero_load():
    q = isotherm.eval(REFERENCE, (0.0, 0.0))
    assert q.shape == (2,)
    assert q[0] == 0.0 and q[1] == 0.0


def test_reference_point_frozen_values():
    # Denominators at c = (1, 1) are 2.34 and 2.08; loads follow directly.
    q = isotherm.eval(REFERENCE, (1.0, 1.0))
    assert q[0] == pytest.approx(8.658653846153845, rel=1e-12)
    assert q[1] == pytest.approx(2.036324786324786, rel=1e-12)


def test_linear_degeneration_all_b_zero():
    params = IsothermParams(2.0, 0.0, 3.0, 0.0, 4.0, 0.0, 0.5, 0.0)
    q = isotherm.eval(params, (2.0, 3.0))
    assert q[0] == pytest.approx(5.0 * 2.0, rel=1e-14)
    assert q[1] == pytest.approx(4.5 * 3.0, rel=1e-14)


def test_matches_scalar_oracle_at_random_points():
    rng = np.random.default_rng(20240817)
    for _ in range(25):
        y = rng.uniform(0.0, 100.0, size=8)
        c1, c2 = rng.uniform(0.0, 30.0, size=2)
        params = IsothermParams.from_array(y)
        q = isotherm.eval(params, (c1, c2))
        q1_ref, q2_ref = scalar_oracle(y, c1, c2)
        assert q[0] == pytest.approx(q1_ref, rel=1e-12)
        assert q[1] == pytest.approx(q2_ref, rel=1e-12)


def test_batched_eval_matches_pointwise():
    rng = np.random.default_rng(3)
    c = rng.uniform(0.0, 20.0, size=(2, 40))
    batched = isotherm.eval(REFERENCE, c)
    assert batched.shape == (2, 40)
    for k in range(40):
        single = isotherm.eval(REFERENCE, c[:, k])
        assert np.array_equal(batched[:, k], single)


def test_nonnegativity_property():
    rng = np.random.default_rng(11)
    for _ in range(50):
        params = IsothermParams.from_array(rng.uniform(0.0, 100.0, size=8))
        c = rng.uniform(0.0, 50.0, size=2)
        q = isotherm.eval(params, c)
        assert np.all(q >= 0.0)


def test_monotone_increase_and_saturation_bound():
    rng = np.random.default_rng(7)
    for _ in range(20):
        y = rng.uniform(0.1, 100.0, size=8)
        params = IsothermParams.from_array(y)
        c2 = rng.uniform(0.0, 10.0)
        grid = np.linspace(0.0, 500.0, 200)
        q1 = isotherm.eval(params, np.stack([grid, np.full_like(grid, c2)]))[0]
        assert np.all(np.diff(q1) > 0.0)
        bound = isotherm.saturation_capacity(params, 1)
        assert np.all(q1 <= bound)


def test_competition_decreases_load():
    rng = np.random.default_rng(13)
    for _ in range(20):
        params = IsothermParams.from_array(rng.uniform(0.1, 100.0, size=8))
        c1 = rng.uniform(0.5, 10.0)
        grid = np.linspace(0.0, 50.0, 100)
        q1 = isotherm.eval(params, np.stack([np.full_like(grid, c1), grid]))[0]
        assert np.all(np.diff(q1) <= 1e-14)


def test_jacobian_at_zero_is_diagonal_of_slopes():
    jac = isotherm.jacobian(REFERENCE, (0.0, 0.0))
    expected = np.diag([9.54 + 9.53, 2.74 + 1.80])
    assert np.allclose(jac, expected, rtol=0, atol=1e-14)


def test_jacobian_linear_case_constant():
    params = IsothermParams(2.0, 0.0, 3.0, 0.0, 4.0, 0.0, 0.5, 0.0)
    for c in [(0.0, 0.0), (1.5, 2.5), (30.0, 0.1)]:
        jac = isotherm.jacobian(params, c)
        assert np.allclose(jac, np.diag([5.0, 4.5]), rtol=0, atol=1e-14)


def central_difference_jacobian(params, c, step=1e-5):
    c = np.asarray(c, dtype=float)
    jac = np.empty((2, 2))
    for j in range(2):
        bump = np.zeros(2)
        bump[j] = step
        hi = isotherm.eval(params, c + bump)
        lo = isotherm.eval(params, np.maximum(c - bump, 0.0))
        denom = (c + bump)[j] - np.maximum(c - bump, 0.0)[j]
        jac[:, j] = (hi - lo) / denom
    return jac


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(99)
    cases = [(REFERENCE, np.array([1.0, 1.0]))]
    for _ in range(20):
        params = IsothermParams.from_array(rng.uniform(0.0, 100.0, size=8))
        cases.append((params, rng.uniform(0.1, 20.0, size=2)))
    for params, c in cases:
        analytic = isotherm.jacobian(params, c)
        numeric = central_difference_jacobian(params, c)
        scale = np.maximum(np.abs(numeric), 1e-8)
        assert np.all(np.abs(analytic - numeric) / scale < 1e-6)


def test_jacobian_cross_terms_nonpositive():
    rng = np.random.default_rng(5)
    for _ in range(20):
        params = IsothermParams.from_array(rng.uniform(0.0, 100.0, size=8))
        jac = isotherm.jacobian(params, rng.uniform(0.0, 30.0, size=2))
        assert jac[0, 1] <= 0.0
        assert jac[1, 0] <= 0.0


def test_undershoot_clamped_to_zero():
    q = isotherm.eval(REFERENCE, (-1e-13, 0.0))
    assert q[0] == 0.0 and q[1] == 0.0
    jac = isotherm.jacobian(REFERENCE, (-1e-12, -1e-12))
    assert np.allclose(jac, isotherm.jacobian(REFERENCE, (0.0, 0.0)))


def test_rejects_truly_negative_concentration():
    with pytest.raises(ConfigError):
        isotherm.eval(REFERENCE, (-1e-6, 0.0))


def test_rejects_non_finite_concentration():
    with pytest.raises(ConfigError):
        isotherm.eval(REFERENCE, (np.nan, 0.0))
    with pytest.raises(ConfigError):
        isotherm.eval(REFERENCE, (np.inf, 1.0))


def test_rejects_negative_coefficients():
    with pytest.raises(ConfigError):
        IsothermParams(-0.1, 0.91, 9.53, 1.00, 2.74, 0.43, 1.80, 0.08)
    with pytest.raises(ConfigError):
        IsothermParams.from_array([1, 2, 3, np.nan, 5, 6, 7, 8])


def test_array_round_trip_preserves_ordering():
    arr = REFERENCE.as_array()
    assert arr.tolist() == [9.54, 0.91, 9.53, 1.00, 2.74, 0.43, 1.80, 0.08]
    assert IsothermParams.from_array(arr) == REFERENCE


def test_site_swap_leaves_loads_identical():
    rng = np.random.default_rng(42)
    for _ in range(20):
        params = IsothermParams.from_array(rng.uniform(0.0, 100.0, size=8))
        swapped = params.site_swapped()
        c = rng.uniform(0.0, 30.0, size=2)
        assert np.array_equal(isotherm.eval(params, c), isotherm.eval(swapped, c))
        assert np.array_equal(isotherm.jacobian(params, c), isotherm.jacobian(swapped, c))


def test_component_swap_mirrors_loads_bitwise():
    rng = np.random.default_rng(17)
    for _ in range(20):
        params = IsothermParams.from_array(rng.uniform(0.0, 100.0, size=8))
        c = rng.uniform(0.0, 30.0, size=2)
        q = isotherm.eval(params, c)
        q_swapped = isotherm.eval(params.component_swapped(), c[::-1])
        assert q[0] == q_swapped[1] and q[1] == q_swapped[0]
