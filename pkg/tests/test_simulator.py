from __future__ import annotations

import numpy as np
import pytest

from app.core.errors import ArgumentError
from app.domain.federated import federated_optimum, federated_risk, product_form_limit
from app.domain.model import SDParams, SpikedModel
from app.domain.optimal import optimal_pred_rule, synthesize_sd_params
from app.domain.risk import limiting_pred_risk, min_norm_surrogate, tune_ridge
from app.domain.shrinkage import Rational, Ridge, SDChain
from app.infrastructure.simulator import (Role, SimConfig, apply_spectral, converge_harness, fit_aggregated, fit_gd,
                                          fit_minnorm, fit_pcr, fit_sd, fit_shrinkage, fresh_sample_risk, gen_data,
                                          gen_problem, product_form_empirical, run_replicates, sample_spectrum,
                                          sigma_risk, stream)
from app.use_cases.simulation_services import pcr_limit

from conftest import make_model


def small_config(model: SpikedModel, n: int = 60, seed: int = 7, **kw) -> SimConfig:
    return SimConfig(model=model, n=n, p=int(round(model.c * n)), seed=seed, **kw)


def ridge_direct(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    n, p = X.shape
    return np.linalg.solve(X.T @ X / n + lam * np.eye(p), X.T @ y / n)


def test_problem_geometry(two_spikes: SpikedModel) -> None:
    cfg = small_config(two_spikes)
    problem = gen_problem(cfg, replicate=3)
    assert np.linalg.norm(problem.beta0) == pytest.approx(5.0, rel=1e-12)
    np.testing.assert_allclose(problem.V.T @ problem.beta0, [3.0, 2.5], rtol=1e-12)
    np.testing.assert_allclose(problem.V.T @ problem.V, np.eye(2), atol=1e-12)


def test_streams_are_keyed() -> None:
    a = stream(11, 2, Role.DESIGN).standard_normal(5)
    np.testing.assert_array_equal(a, stream(11, 2, Role.DESIGN).standard_normal(5))
    assert not np.array_equal(a, stream(11, 2, Role.NOISE).standard_normal(5))
    assert not np.array_equal(a, stream(11, 3, Role.DESIGN).standard_normal(5))
    assert not np.array_equal(a, stream(11, 2, Role.DESIGN, client=1).standard_normal(5))


def test_data_is_reproducible(one_spike: SpikedModel) -> None:
    cfg = small_config(one_spike, entry_dist="rademacher")
    first, again = gen_data(cfg, 4), gen_data(cfg, 4)
    np.testing.assert_array_equal(first.X, again.X)
    np.testing.assert_array_equal(first.y, again.y)
    assert not np.array_equal(first.X, gen_data(cfg, 5).X)
    assert first.X.shape == (60, 120)


def test_config_rejects_bad_directions(one_spike: SpikedModel) -> None:
    with pytest.raises(ValueError):
        SimConfig(model=one_spike, n=10, p=20, spike_directions=((1.0,),) * 20)
    with pytest.raises(ValueError):
        SimConfig(model=one_spike, n=10, p=20, df=5.0)
    with pytest.raises(ValueError, match="must exceed the number of spikes"):
        SimConfig(model=one_spike, n=1, p=1)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_ridge_matches_direct_solve(c: float) -> None:
    data = gen_data(small_config(make_model(c=c, spikes=((6.0, 1.0),))))
    coef = fit_shrinkage(data.X, data.y, Ridge(0.3)).coefficients
    np.testing.assert_allclose(coef, ridge_direct(data.X, data.y, 0.3), rtol=1e-8, atol=1e-10)


def test_sample_spectrum_lifts_gram_for_wide_designs() -> None:
    data = gen_data(small_config(make_model(c=2.0)))
    d, W = sample_spectrum(data.X)
    assert d.size == data.n
    np.testing.assert_allclose(W.T @ W, np.eye(d.size), atol=1e-8)
    S = data.X.T @ data.X / data.n
    np.testing.assert_allclose(S @ W, W * d, atol=1e-8)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_fit_sd_matches_spectral_chain(c: float) -> None:
    data = gen_data(small_config(make_model(c=c, spikes=((6.0, 1.0),))))
    params = SDParams((0.2, 0.9, 2.0), (0.4, -0.3))
    expected = fit_shrinkage(data.X, data.y, SDChain(params)).coefficients
    np.testing.assert_allclose(fit_sd(data.X, data.y, params).coefficients, expected, rtol=1e-8, atol=1e-10)


def test_fit_sd_one_stage_is_ridge() -> None:
    data = gen_data(small_config(make_model(c=0.5)))
    coef = fit_sd(data.X, data.y, SDParams((0.7,))).coefficients
    np.testing.assert_allclose(coef, ridge_direct(data.X, data.y, 0.7), rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_full_pcr_is_min_norm(c: float) -> None:
    data = gen_data(small_config(make_model(c=c)))
    m = min(data.n, data.p)
    np.testing.assert_allclose(fit_pcr(data.X, data.y, m).coefficients,
                               fit_minnorm(data.X, data.y).coefficients, rtol=1e-7, atol=1e-9)
    with pytest.raises(ArgumentError):
        fit_pcr(data.X, data.y, m + 1)


def test_min_norm_surrogate_equals_interpolator() -> None:
    model = make_model(c=2.0)
    data = gen_data(SimConfig(model=model, n=200, p=400, seed=3))
    coef = fit_shrinkage(data.X, data.y, min_norm_surrogate(model)).coefficients
    np.testing.assert_allclose(coef, fit_minnorm(data.X, data.y).coefficients, rtol=1e-7, atol=1e-9)


def test_gd_single_step() -> None:
    data = gen_data(small_config(make_model(c=0.5)))
    coef = fit_gd(data.X, data.y, 0.05, 1).coefficients
    np.testing.assert_allclose(coef, 0.05 * data.X.T @ data.y / data.n, rtol=1e-8, atol=1e-12)
    with pytest.raises(ArgumentError):
        fit_gd(data.X, data.y, 0.05, 0)


def test_sigma_risk(one_spike: SpikedModel) -> None:
    problem = gen_problem(small_config(one_spike))
    b, V = problem.beta0, problem.V
    assert sigma_risk(b, b, one_spike, V) == 0.0
    assert sigma_risk(np.zeros_like(b), b, one_spike, V) == pytest.approx(one_spike.signal_power, rel=1e-12)


def test_apply_spectral_matches_resolvent() -> None:
    data = gen_data(small_config(make_model(c=2.0)))
    v = np.arange(data.p, dtype=float)
    S = data.X.T @ data.X / data.n
    np.testing.assert_allclose(apply_spectral(data.X, Ridge(0.5), v), np.linalg.solve(S + 0.5 * np.eye(data.p), v),
                               rtol=1e-8)
    one = Rational((1.0,), (1.0,))
    np.testing.assert_allclose(apply_spectral(data.X, one, v), v, rtol=1e-12)


def test_aggregation_of_one_client(one_spike: SpikedModel) -> None:
    data = gen_data(small_config(one_spike))
    single = fit_shrinkage(data.X, data.y, Ridge(1.0)).coefficients
    np.testing.assert_allclose(fit_aggregated([data], [Ridge(1.0)], [0.5]).coefficients, 0.5 * single)
    with pytest.raises(ArgumentError):
        fit_aggregated([data], [Ridge(1.0)], [0.5, 0.5])


def test_replicates_do_not_depend_on_threads(one_spike: SpikedModel) -> None:
    cfg = small_config(one_spike, n=40, n_replicates=6)
    estimators = {"ridge": lambda d: fit_shrinkage(d.X, d.y, Ridge(0.5)).coefficients}
    serial = run_replicates(cfg, estimators, threads=1)
    pooled = run_replicates(cfg, estimators, threads=3)
    np.testing.assert_array_equal(serial["ridge"], pooled["ridge"])
    assert serial["ridge"].shape == (6,)
    with pytest.raises(ArgumentError):
        converge_harness(cfg, estimators, {})


@pytest.mark.slow
def test_empirical_risks_converge(one_spike: SpikedModel) -> None:
    cfg = SimConfig(model=one_spike, n=1000, p=2000, seed=2024, n_replicates=20)
    pred, _ = optimal_pred_rule(one_spike)
    params = synthesize_sd_params(pred)
    ridge = tune_ridge(one_spike).rule
    wide = int(np.floor(0.3 * cfg.p))
    estimators = {
        "tuned_ridge": lambda d: fit_shrinkage(d.X, d.y, ridge).coefficients,
        "optimal_sd": lambda d: fit_sd(d.X, d.y, params).coefficients,
        "pcr_1": lambda d: fit_pcr(d.X, d.y, 1).coefficients,
        f"pcr_{wide}": lambda d: fit_pcr(d.X, d.y, wide).coefficients,
    }
    targets = {"tuned_ridge": limiting_pred_risk(one_spike, ridge).total,
               "optimal_sd": limiting_pred_risk(one_spike, pred).total,
               "pcr_1": limiting_pred_risk(one_spike, pcr_limit(one_spike, 1, cfg.p)).total,
               f"pcr_{wide}": limiting_pred_risk(one_spike, pcr_limit(one_spike, wide, cfg.p)).total}
    reports = {r.estimator: r for r in converge_harness(cfg, estimators, targets, threads=2)}
    for report in reports.values():
        assert report.rel_gap < 0.05, report.to_dict()

    # same datasets for both arms: compare the paired differences
    diff = reports["tuned_ridge"].risks - reports["optimal_sd"].risks
    stderr = np.std(diff, ddof=1) / np.sqrt(diff.size)
    assert diff.mean() > 2.0 * stderr


def test_fresh_sample_risk_estimates_sigma_risk(one_spike: SpikedModel) -> None:
    cfg = small_config(one_spike, n=40)
    data = gen_data(cfg)
    beta_hat = fit_shrinkage(data.X, data.y, Ridge(1.0)).coefficients
    exact = sigma_risk(beta_hat, data.beta0, one_spike, data.V)
    assert fresh_sample_risk(cfg, data, beta_hat, n_test=20000) == pytest.approx(exact, rel=0.05)


@pytest.mark.slow
def test_product_form_matches_its_limit(one_spike: SpikedModel) -> None:
    cfg_l = SimConfig(model=one_spike.replace(c=0.5), n=1600, p=800, seed=9)
    cfg_k = SimConfig(model=one_spike.replace(c=2.0), n=400, p=800, seed=9)
    phi, psi = Ridge(1.0), Ridge(2.0)
    empirical = product_form_empirical(cfg_l, cfg_k, phi, psi)
    assert empirical == pytest.approx(product_form_limit(one_spike, phi, psi, 0.5, 2.0), rel=0.05)


@pytest.mark.slow
def test_aggregated_risk_matches_federated_limit(one_spike: SpikedModel) -> None:
    K = 3
    cfg = SimConfig(model=one_spike, n=800, p=1600, seed=31)
    fed = federated_optimum(one_spike, K)
    risks = []
    for rep in range(4):
        problem = gen_problem(cfg, rep)
        clients = [gen_data(cfg, rep, client=k, problem=problem) for k in range(K)]
        coef = fit_aggregated(clients, [fed.local_rule] * K, [fed.rho_star] * K).coefficients
        risks.append(sigma_risk(coef, problem.beta0, one_spike, problem.V))
    limit = federated_risk(one_spike, K, [fed.local_rule] * K, [fed.rho_star] * K)
    assert np.mean(risks) == pytest.approx(limit, rel=0.05)
