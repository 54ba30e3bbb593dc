from __future__ import annotations

import numpy as np
import pytest

from app.core.errors import DomainError
from app.domain.model import SDParams
from app.domain.shrinkage import (GDPoly, Rational, Ridge, SDChain, Tabulated, check_admissible, eval_shrinkage,
                                  make_rational, make_ridge, sd_recursion, smoothstep)

from conftest import make_model

X = np.linspace(0.05, 12.0, 301)


@pytest.mark.parametrize("params", [
    SDParams((0.5,)),
    SDParams((0.5, 2.0), (0.3,)),
    SDParams((-13.0, 0.4, 3.0), (-0.7, 1.8)),
    SDParams((1.0, 1.0, 1.0, 1.0), (0.2, 0.5, 0.9)),
])
def test_sd_chain_matches_recursion(params: SDParams) -> None:
    np.testing.assert_allclose(SDChain(params)(X), sd_recursion(params, X), rtol=1e-10, atol=1e-12)


def test_sd_chain_zero_weights_is_last_ridge() -> None:
    params = SDParams((0.1, 0.7, 2.5), (0.0, 0.0))
    np.testing.assert_allclose(SDChain(params)(X), Ridge(2.5)(X), rtol=1e-14)


def test_ridge_pseudoinverse_convention() -> None:
    f = Ridge(-1.0)
    np.testing.assert_array_equal(f(np.array([1.0, 3.0])), [0.0, 0.5])


def test_gd_polynomial() -> None:
    np.testing.assert_allclose(GDPoly(0.1, 1)(X), 0.1)
    x = np.array([0.0, 0.5, 2.0])
    expected = 0.1 * sum((1 - 0.1 * x) ** k for k in range(25))
    np.testing.assert_allclose(GDPoly(0.1, 25)(x), expected, rtol=1e-12)
    with pytest.raises(DomainError):
        GDPoly(0.0, 3)


def test_rational_and_poles() -> None:
    f = Rational((1.0,), (2.0, 1.0))
    np.testing.assert_allclose(f(X), 1.0 / (X + 2.0))
    assert f.poles() == pytest.approx((-2.0,))
    with pytest.raises(DomainError):
        Rational((1.0,), (0.0, 0.0))


def test_admissibility() -> None:
    model = make_model(c=2.0, spikes=((6.0, 1.0),))
    check_admissible(model, Ridge(0.5))
    # 1 is inside the bulk
    with pytest.raises(DomainError):
        make_ridge(-1.0, model)
    # zero atom for c > 1
    with pytest.raises(DomainError):
        make_ridge(0.0, model)
    # the outlier x⋆ = 28/3
    with pytest.raises(DomainError):
        make_rational((1.0,), (-28.0 / 3.0, 1.0), model)
    make_ridge(0.0, make_model(c=0.5))


def test_smoothstep_is_c1_ramp() -> None:
    u = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(smoothstep(u), [0.0, 0.0, 0.5, 1.0, 1.0])


def test_tabulated_rejects_off_table_points() -> None:
    pts = np.array([0.0, 1.0, 2.5])
    f = Tabulated(pts, np.array([3.0, 2.0, 1.0]))
    np.testing.assert_array_equal(f(np.array([2.5, 0.0])), [1.0, 3.0])
    with pytest.raises(DomainError):
        f(np.array([1.5]))


def test_eval_on_negative_axis_rejected() -> None:
    with pytest.raises(DomainError):
        eval_shrinkage(Ridge(1.0), np.array([-0.1]))
