from __future__ import annotations

import numpy as np
import pytest

from app.core.errors import DomainError, UnsupportedError
from app.domain.model import SDParams, SpikedModel
from app.domain.optimal import optimal_est_rule, optimal_pred_rule, synthesize_sd_params
from app.domain.risk import (gd_grid_search, limiting_est_risk, limiting_pred_risk, limiting_risk, min_norm_surrogate,
                             named_surrogates, optimal_xi, pcr_components_fn, pcr_surrogate, relative_gain,
                             ridge_grid_search, safe_total, tune_ridge)
from app.domain.shrinkage import Ridge, SDChain, zero_rule

from conftest import make_model, random_model


def test_zero_rule_risk_is_signal_power(two_spikes: SpikedModel) -> None:
    pred = limiting_pred_risk(two_spikes, zero_rule())
    assert pred.variance == 0.0
    assert pred.total == pytest.approx(two_spikes.signal_power, rel=1e-8)
    assert limiting_est_risk(two_spikes, zero_rule()).total == pytest.approx(two_spikes.r ** 2, rel=1e-8)


def test_breakdown_sums_to_total(one_spike: SpikedModel) -> None:
    risk = limiting_pred_risk(one_spike, Ridge(0.7))
    assert risk.total == pytest.approx(risk.bias_bulk + sum(risk.bias_spikes) + risk.variance)
    assert min(risk.bias_bulk, risk.variance, *risk.bias_spikes) >= 0.0
    assert risk.to_dict()["total"] == risk.total


def test_isotropic_tuned_ridge(isotropic: SpikedModel) -> None:
    # λ* = cσ_ε²/r² = 0.5
    best = tune_ridge(isotropic)
    assert best.rule.lam == pytest.approx(0.5, rel=1e-4)
    coarse = ridge_grid_search(isotropic, grid=np.linspace(0.1, 1.0, 91))
    assert coarse.rule.lam == pytest.approx(0.5, abs=0.011)
    assert best.risk <= coarse.risk + 1e-12


def test_isotropic_grid_optimum_on_random_models() -> None:
    rng = np.random.default_rng(2024)
    grid = np.logspace(-3, 3, 2000)
    step = np.log(grid[1] / grid[0])
    for _ in range(20):
        c = float(rng.uniform(0.2, 0.85) if rng.random() < 0.5 else rng.uniform(1.2, 4.0))
        model = make_model(c=c, r=float(rng.uniform(0.5, 3.0)),
                           sigma_eps_sq=float(rng.uniform(0.2, 3.0)), sigma0_sq=float(rng.uniform(0.3, 3.0)))
        expected = model.c * model.sigma_eps_sq / model.r ** 2
        found = ridge_grid_search(model, grid=grid).rule.lam
        assert abs(np.log(found / expected)) <= step * (1.0 + 1e-9), model


def test_inadmissible_rules_score_infinite(one_spike: SpikedModel) -> None:
    assert safe_total(one_spike, Ridge(-1.0)) == float("inf")
    with pytest.raises(DomainError):
        limiting_pred_risk(one_spike, Ridge(-1.0))


def comparator_risks(model: SpikedModel, kind: str) -> dict[str, float]:
    """Best risk of every baseline family the optimal rule has to beat."""
    risks = {name: safe_total(model, rule, kind) for name, rule in named_surrogates(model).items()}
    risks["ridge_grid"] = ridge_grid_search(model, kind).risk
    risks["ridge_tuned"] = tune_ridge(model, kind).risk
    risks["gd"] = gd_grid_search(model, etas=(0.01, 0.1), steps=(10, 100, 1000), kind=kind).risk
    return risks


@pytest.mark.parametrize("seed", range(12))
def test_optimal_rules_strictly_dominate(seed: int) -> None:
    rng = np.random.default_rng(seed)
    model = random_model(rng, int(rng.integers(1, 4)))
    pred, _ = optimal_pred_rule(model)
    est = optimal_est_rule(model)
    for kind, rule in (("pred", pred), ("est", est)):
        best = limiting_risk(model, rule, kind).total
        for name, risk in comparator_risks(model, kind).items():
            assert best <= risk - 1e-6, (kind, name, best, risk)


def test_relative_gain_over_tuned_ridge(one_spike: SpikedModel) -> None:
    pred, _ = optimal_pred_rule(one_spike)
    assert relative_gain(one_spike, pred, tune_ridge(one_spike).rule) > 0.0


def test_sd_realisation_has_the_rule_risk(two_spikes: SpikedModel) -> None:
    pred, _ = optimal_pred_rule(two_spikes)
    chain = SDChain(synthesize_sd_params(pred))
    assert limiting_pred_risk(two_spikes, chain).total == pytest.approx(limiting_pred_risk(two_spikes, pred).total,
                                                                         rel=1e-8)


def test_optimal_xi_is_a_minimum(one_spike: SpikedModel) -> None:
    xi, risk = optimal_xi(one_spike, 0.3, 1.2)

    def at(v: float) -> float:
        return limiting_pred_risk(one_spike, SDChain(SDParams((0.3, 1.2), (v,)))).total

    assert risk == pytest.approx(at(xi), rel=1e-9)
    assert risk <= at(xi - 0.1)
    assert risk <= at(xi + 0.1)


def test_surrogate_edges() -> None:
    with pytest.raises(UnsupportedError):
        min_norm_surrogate(make_model(c=1.0))
    with pytest.raises(DomainError):
        pcr_surrogate(make_model(c=2.0), 0.6)
    model = make_model(c=2.0, spikes=((6.0, 1.0),))
    assert pcr_components_fn(model, 0).num_coeffs == (0.0,)
    with pytest.raises(DomainError):
        pcr_components_fn(model, 2)


def test_min_norm_surrogate_matches_interpolator_off_zero() -> None:
    model = make_model(c=2.0)
    f = min_norm_surrogate(model)
    assert f.cut < 0.25 * 0.2
    x = np.array([0.2, 1.0, 5.0])
    np.testing.assert_allclose(f(x), 1.0 / x)
    assert f(np.array([0.0]))[0] == 0.0


def test_gd_grid_search_picks_the_smallest_risk(isotropic: SpikedModel) -> None:
    best = gd_grid_search(isotropic, etas=(0.05, 0.1), steps=(5, 50))
    assert best.risk == pytest.approx(safe_total(isotropic, best.rule))
    assert best.risk >= limiting_pred_risk(isotropic, Ridge(0.5)).total - 1e-10
    assert best.risk < isotropic.signal_power
