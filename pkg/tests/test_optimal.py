from __future__ import annotations

import numpy as np
import pytest

from app.core.errors import SynthesisError, UnsupportedError
from app.domain import spectra
from app.domain.measures import mixture_weights, spectral_grid
from app.domain.model import SpikedModel
from app.domain.optimal import (RationalRule, coprimality_check, fixed_point_residual, isotropic_optimal,
                                optimal_est_rule, optimal_pred_rule, ridge_ensemble, round_trip_error,
                                synthesize_sd_params)
from app.domain.shrinkage import Rational, Ridge, SDChain

from conftest import make_model, random_model

MODELS = ["one_spike", "two_spikes", "three_spikes"]


def test_b0_is_exact(two_spikes: SpikedModel) -> None:
    # σ₀²r²ω₀ = 25 · 0.39
    _, coeffs = optimal_pred_rule(two_spikes)
    assert coeffs.b[0] == pytest.approx(9.75, rel=1e-12)


@pytest.mark.parametrize("name", MODELS)
def test_root_structure(name: str, request: pytest.FixtureRequest) -> None:
    model = request.getfixturevalue(name)
    rule, _ = optimal_pred_rule(model)
    roots = np.asarray(rule.roots)
    assert roots.size == model.s + 1
    assert np.sum(roots < 0) == 1
    xstars = np.sort([spectra.outlier_location(model, d) for d in model.deltas])
    # one root per gap between consecutive x⋆, one above the largest
    positive = roots[roots > 0]
    assert np.all(positive > xstars)
    assert np.all(positive[:-1] < xstars[1:])
    powers = np.abs(roots)[:, None] ** np.arange(rule.P.coef.size)
    scale = powers @ np.abs(rule.P.coef)
    assert np.all(np.abs(rule.P(roots)) <= 1e-10 * scale)
    assert rule.P.coef[-1] == 1.0


@pytest.mark.parametrize("name", MODELS)
def test_fixed_point_and_round_trip(name: str, request: pytest.FixtureRequest) -> None:
    model = request.getfixturevalue(name)
    rule, coeffs = optimal_pred_rule(model)
    assert coeffs.fixed_point_residual < 1e-8
    assert fixed_point_residual(model, rule) == pytest.approx(coeffs.fixed_point_residual, abs=1e-12)

    params = synthesize_sd_params(rule)
    assert params.k == model.s
    assert round_trip_error(rule, params, spectral_grid(model)) < 1e-9
    # exactly s of the s+1 penalties are negative
    assert sum(lam < 0 for lam in params.lambdas) == model.s


@pytest.mark.parametrize("ordering", ["outlier_first", "max_residual"])
def test_orderings_realise_the_same_rule(two_spikes: SpikedModel, ordering: str) -> None:
    rule, _ = optimal_pred_rule(two_spikes)
    params = synthesize_sd_params(rule, ordering)
    x = spectral_grid(two_spikes).x
    np.testing.assert_allclose(SDChain(params)(x), rule(x), atol=1e-8)


def test_est_rule_shares_denominator(two_spikes: SpikedModel) -> None:
    pred, _ = optimal_pred_rule(two_spikes)
    est = optimal_est_rule(two_spikes)
    np.testing.assert_allclose(est.den_coeffs, pred.den_coeffs)
    assert est.Q.coef[-1] == pytest.approx(1.0, abs=1e-12)
    assert coprimality_check(est)
    params = synthesize_sd_params(est)
    assert round_trip_error(est, params, spectral_grid(two_spikes)) < 1e-9


def test_coprimality_detects_common_factor() -> None:
    common = RationalRule((2.0, 1.0), (2.0, 3.0, 1.0), (-2.0, -1.0))
    assert not coprimality_check(common)
    assert coprimality_check(Rational((1.0,), (2.0, 1.0)))


def test_ridge_ensemble_reconstructs_rule(three_spikes: SpikedModel) -> None:
    rule, _ = optimal_pred_rule(three_spikes)
    weights, lambdas = ridge_ensemble(rule)
    x = spectral_grid(three_spikes).x[::50]
    mix = sum(w / (x + lam) for w, lam in zip(weights, lambdas))
    np.testing.assert_allclose(mix, rule(x), rtol=1e-9, atol=1e-12)


def test_isotropic_optimum_is_ridge(isotropic: SpikedModel) -> None:
    assert isotropic_optimal(isotropic) == Ridge(0.5)
    rule, coeffs = optimal_pred_rule(isotropic)
    x = spectral_grid(isotropic).x
    np.testing.assert_allclose(rule(x), Ridge(0.5)(x), rtol=1e-12)
    assert rule.roots == pytest.approx((-0.5,))
    assert coeffs.b.size == 1
    with pytest.raises(UnsupportedError):
        isotropic_optimal(make_model(spikes=((6.0, 1.0),)))


def test_weak_spike_tends_to_isotropic_ridge() -> None:
    model = make_model(c=2.0, spikes=((1e-3, 1.0),), r=2.0, sigma_eps_sq=1.0)
    rule, _ = optimal_pred_rule(model)
    a, b = spectra.mp_support(model)
    x = np.linspace(a, b, 200)
    np.testing.assert_allclose(rule(x), Ridge(0.5)(x), atol=1e-2)


def test_noiseless_model_is_rejected() -> None:
    with pytest.raises(UnsupportedError, match="sigma_eps_sq > 0"):
        optimal_pred_rule(make_model(spikes=((6.0, 1.0),), sigma_eps_sq=0.0))


def test_synthesis_needs_unit_leading_coefficient(one_spike: SpikedModel) -> None:
    rule, _ = optimal_pred_rule(one_spike)
    with pytest.raises(SynthesisError):
        synthesize_sd_params(rule.scaled(2.0))


@pytest.mark.slow
def test_outlier_penalty_is_negative_across_spike_strengths() -> None:
    base = make_model(c=3.0, spikes=((1.0, 6.0),), r=8.0, sigma_eps_sq=16.0)
    for delta in np.concatenate([np.linspace(0.05, 1.6, 12), np.linspace(1.9, 20.0, 20)]):
        model = base.with_delta(0, float(delta))
        rule, _ = optimal_pred_rule(model)
        params = synthesize_sd_params(rule)
        xstar = spectra.outlier_location(model, float(delta))
        assert params.lambdas[0] < 0
        # λ₀ = −γ with γ the root above x⋆
        assert -params.lambdas[0] > xstar


@pytest.mark.parametrize("seed", range(30))
def test_random_models_root_structure_and_synthesis(seed: int) -> None:
    rng = np.random.default_rng(100 + seed)
    model = random_model(rng, int(rng.integers(1, 4)))
    rule, coeffs = optimal_pred_rule(model)
    roots = np.sort(rule.roots)
    assert roots.size == model.s + 1
    assert np.all(np.diff(roots) > 0)
    assert np.sum(roots < 0) == 1
    xstars = np.sort([spectra.outlier_location(model, d) for d in model.deltas])
    positive = roots[roots > 0]
    assert np.all(positive > xstars)
    assert np.all(positive[:-1] < xstars[1:])
    assert coeffs.fixed_point_residual < 1e-8
    b0 = model.sigma0_sq * model.r ** 2 * mixture_weights(model).omega0
    assert coeffs.b[0] == pytest.approx(b0, rel=1e-12)

    grid = spectral_grid(model)
    for f in (rule, optimal_est_rule(model)):
        params = synthesize_sd_params(f)
        assert round_trip_error(f, params, grid) < 1e-9
        assert sum(lam < 0 for lam in params.lambdas) == model.s


def test_vanishing_spike_needs_almost_no_mixing() -> None:
    model = make_model(c=3.0, spikes=((0.01, 6.0),), r=8.0, sigma_eps_sq=16.0)
    rule, _ = optimal_pred_rule(model)
    params = synthesize_sd_params(rule)
    assert params.k == 1
    assert abs(params.xis[0]) < 0.05
    assert params.lambdas[0] < 0
