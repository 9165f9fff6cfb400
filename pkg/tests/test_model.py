import json

import numpy as np
import pytest

from mfglab.model import (ConfigError, EllipticityError, GaussianLaw,
                          GridDensity, ParticleCloud, Grid1D, Scenario,
                          check_smallness, constant_diffusion,
                          double_well_scenario, hamiltonian, linear_drift,
                          load_scenario, lq_mean_scenario, lq_scenario,
                          mean_interaction, no_interaction, ou_scenario,
                          policy, policy_gap_bound, probe_assumptions,
                          quadratic_cost, sigma_bar, varying_diffusion,
                          zero_terminal)


def test_sigma_bar_constant_isotropic():
    diff = constant_diffusion(np.sqrt(2.0))
    # sigma = sqrt(2) sigma0 => reduced factor equals sigma0
    assert sigma_bar(diff, 0.3) == pytest.approx(diff.sigma0)
    xs = np.linspace(-2, 2, 7)
    assert np.allclose(diff.sigma_bar_scalar(xs), diff.sigma0)


def test_sigma_bar_scalar_formula():
    diff = varying_diffusion(lambda x: np.sqrt(2.0 + np.tanh(x) ** 2),
                             sigma0=1.0, Sigma=np.sqrt(1.5),
                             C_x_sigma=0.5)
    x = 0.7
    s = np.sqrt(2.0 + np.tanh(x) ** 2)
    assert sigma_bar(diff, x) == pytest.approx(np.sqrt(s * s - 1.0))


def test_sigma_bar_matrix_reconstruction():
    rng = np.random.default_rng(4)
    diff = constant_diffusion(np.sqrt(2.0), dim=2)
    for _ in range(20):
        q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        eig = rng.uniform(2.0 * diff.sigma0 ** 2 * 1.05, 3.5, size=2)
        a = (q * eig) @ q.T
        sig = np.linalg.cholesky(a)
        sb = sigma_bar(diff, sig)
        recon = sb @ sb.T + diff.sigma0 ** 2 * np.eye(2)
        assert np.max(np.abs(recon - a)) < 1e-10


def test_sigma_bar_ellipticity_violation():
    diff = constant_diffusion(np.sqrt(2.0), dim=2)
    bad = 0.5 * diff.sigma0 * np.eye(2)
    with pytest.raises(EllipticityError):
        sigma_bar(diff, bad)


def test_policy_closed_form_and_hamiltonian():
    cost = quadratic_cost(rho_uu=1.0)
    drift = linear_drift(1.0)
    x, p = 0.4, 3.0
    assert policy(cost, x, p) == pytest.approx(-3.0)
    h = hamiltonian(drift, cost, x, p)
    assert h == pytest.approx(0.5 * 9.0 + (-0.4 - 3.0) * 3.0)


def test_policy_bounds_on_probes():
    # magnitude and costate-Lipschitz estimates hold on random draws
    rng = np.random.default_rng(9)
    cost = quadratic_cost(rho_uu=1.3, lin_u=0.2)
    xs = rng.uniform(-4, 4, 1000)
    ps = rng.uniform(-6, 6, 1000)
    qs = rng.uniform(-6, 6, 1000)
    w = policy(cost, xs, ps)
    assert np.all(np.abs(w) <= (cost.C_u_L0 + np.abs(ps)) / cost.rho_uu + 1e-12)
    wq = policy(cost, xs, qs)
    assert np.all(np.abs(w - wq) <= np.abs(ps - qs) / cost.rho_uu + 1e-12)


def test_policy_newton_matches_closed_form():
    quad = quadratic_cost(rho_uu=2.0)
    custom = quadratic_cost(rho_uu=2.0)
    object.__setattr__(custom, "closed_form", None)
    rng = np.random.default_rng(2)
    xs, ps = rng.uniform(-3, 3, 50), rng.uniform(-5, 5, 50)
    assert np.allclose(policy(custom, xs, ps), policy(quad, xs, ps), atol=1e-10)


def test_policy_gap_identical_and_shift():
    cost = quadratic_cost(rho_uu=1.0)
    same = policy_gap_bound(cost, quadratic_cost(rho_uu=1.0),
                            np.linspace(-2, 2, 11), np.linspace(-2, 2, 11),
                            C_u_delta_l=0.0)
    assert same["pass"] and np.max(same["gap"]) == 0.0

    shifted = quadratic_cost(rho_uu=1.0, lin_u=0.3)  # L + c u: gap = |c|/rho
    rng = np.random.default_rng(1)
    out = policy_gap_bound(cost, shifted, rng.uniform(-3, 3, 200),
                           rng.uniform(-3, 3, 200), C_u_delta_l=0.3)
    assert out["pass"]
    assert np.max(out["gap"]) == pytest.approx(0.3, abs=1e-12)


def test_policy_gap_tanh_perturbation():
    # L_hat = L + eps * u * tanh(x): control-gradient gap eps, bound eps/rho
    eps = 0.05
    base = quadratic_cost(rho_uu=1.0)
    from mfglab.model import RunningCostSpec
    pert = RunningCostSpec(
        L=lambda x, u: 0.5 * u ** 2 + eps * u * np.tanh(x),
        dLu=lambda x, u: u + eps * np.tanh(x),
        d2Luu=lambda x, u: np.ones_like(np.asarray(u, dtype=float)),
        rho_uu=1.0, C_u_L0=eps,
        closed_form=lambda x, p: -(p + eps * np.tanh(x)))
    rng = np.random.default_rng(12)
    out = policy_gap_bound(base, pert, rng.uniform(-3, 3, 1000),
                           rng.uniform(-3, 3, 1000), C_u_delta_l=eps)
    assert out["pass"]


def test_smallness_no_interaction_full_margin():
    rep = check_smallness(ou_scenario(n_paths=10))
    assert rep.passes and rep.margin == np.inf
    assert rep.lambda_star == pytest.approx(rep.tm_bar.lam)


def test_smallness_lq_mean_passes():
    rep = check_smallness(lq_mean_scenario())
    assert rep.passes
    assert rep.margin > 2.0
    assert 0.0 < rep.lambda_star < rep.tm_bar.lam
    lam = 0.9 * rep.lambda_star
    assert rep.epsilon(lam) < 1.0
    # root property and monotonicity of the contraction factor curve
    assert rep.epsilon(rep.lambda_star) == pytest.approx(1.0, abs=1e-8)
    lams = np.linspace(0.0, rep.lambda_star, 20)
    vals = [rep.epsilon(l) for l in lams]
    assert np.all(np.diff(vals) > 0.0)


def test_smallness_boundary_is_a_failure():
    sc = lq_mean_scenario()
    rep = check_smallness(sc)
    from mfglab.model import InteractionSpec
    boundary = InteractionSpec(kind="mean", value=sc.interaction.value,
                               C_x_F=sc.interaction.C_x_F,
                               C_xmu_F=rep.threshold)
    sc2 = Scenario(name="boundary", drift=sc.drift, diffusion=sc.diffusion,
                   running_cost=sc.running_cost, interaction=boundary,
                   terminal_cost=sc.terminal_cost, mu0=sc.mu0, T=sc.T,
                   regime="high", grid=sc.grid, mc=sc.mc)
    rep2 = check_smallness(sc2)
    assert rep2.margin == pytest.approx(1.0)
    assert not rep2.passes


def test_smallness_double_well_catalog_fails():
    rep = check_smallness(double_well_scenario())
    assert not rep.passes
    assert rep.lambda_star == 0.0


def test_probes_pass_on_catalog():
    for sc in (ou_scenario(n_paths=10), lq_scenario(), lq_mean_scenario(),
               double_well_scenario(c=0.001)):
        report = probe_assumptions(sc, n=1000, seed=0)
        bad = {k: v for k, v in report.items() if not v["pass"]}
        assert not bad, (sc.name, bad)


def test_probes_nonconstant_sigma():
    diff = varying_diffusion(lambda x: np.sqrt(2.0) * (1.0 + 0.2 * np.tanh(x)),
                             sigma0=np.sqrt(2.0) * 0.8 / np.sqrt(2.0),
                             Sigma=np.sqrt(2.0) * 1.2 / np.sqrt(2.0),
                             C_x_sigma=np.sqrt(2.0) * 0.2)
    sc = Scenario(name="vs", drift=linear_drift(1.0), diffusion=diff,
                  running_cost=quadratic_cost(C_x_L=0.0),
                  interaction=no_interaction(), terminal_cost=zero_terminal(),
                  mu0=GaussianLaw(0.0, 1.0), T=1.0, regime="high",
                  grid=Grid1D(-6.0, 6.0, 301, 1e-3))
    report = probe_assumptions(sc, n=800, seed=5)
    bad = {k: v for k, v in report.items() if not v["pass"]}
    assert not bad, bad


def test_interaction_accepts_both_representations():
    inter = mean_interaction(0.1)
    xs = np.linspace(-5, 5, 101)
    law = GaussianLaw(0.8, 0.5)
    grid_val = inter.value(GridDensity(xs, law.density(xs)), xs)
    cloud_val = inter.value(
        ParticleCloud(law.sample(200_000, np.random.default_rng(0))), xs)
    assert np.allclose(grid_val, 0.1 * xs * 0.8, atol=1e-3)
    assert np.allclose(cloud_val, grid_val, atol=2e-3)


def test_grid_span_guard():
    with pytest.raises(ConfigError):
        Scenario(name="narrow", drift=linear_drift(1.0),
                 diffusion=constant_diffusion(np.sqrt(2.0)),
                 running_cost=quadratic_cost(C_x_L=0.0),
                 interaction=no_interaction(), terminal_cost=zero_terminal(),
                 mu0=GaussianLaw(0.0, 1.0), T=1.0, regime="high",
                 grid=Grid1D(-2.0, 2.0, 101, 1e-3))


def test_regime_constant_validation():
    with pytest.raises(ConfigError):
        Scenario(name="bad", drift=linear_drift(1.0),
                 diffusion=constant_diffusion(np.sqrt(2.0)),
                 running_cost=quadratic_cost(C_x_L=0.0),
                 interaction=mean_interaction(0.1),  # lacks TV constants
                 terminal_cost=zero_terminal(), mu0=GaussianLaw(0.0, 1.0),
                 T=1.0, regime="low", grid=Grid1D(-6.0, 6.0, 301, 1e-3))


SCENARIO_JSON = {
    "name": "file_ou",
    "drift": {"kind": "linear", "beta": 1.0},
    "diffusion": {"kind": "constant", "sigma": 1.4142135623730951},
    "running_cost": {"kind": "quadratic", "rho_uu": 1.0, "q": 0.0},
    "interaction": {"kind": "none"},
    "terminal_cost": {"kind": "zero"},
    "mu0": {"mean": 0.0, "var": 1.0},
    "horizon": 4.0,
    "regime": "high",
    "grid": {"x_min": -6.0, "x_max": 6.0, "n_x": 301, "dt": 1e-3},
    "mc": {"n_paths": 1000, "dt": 1e-3, "master_seed": 7, "t_grid": [1.0]},
}


def test_scenario_file_roundtrip(tmp_path):
    path = tmp_path / "ou.json"
    path.write_text(json.dumps(SCENARIO_JSON))
    sc = load_scenario(path)
    assert sc.name == "file_ou"
    assert sc.mc.master_seed == 7
    assert sc.drift.profile(1.0) == pytest.approx(1.0)


def test_scenario_file_rejects_unknown_keys(tmp_path):
    bad = dict(SCENARIO_JSON)
    bad["unknown_section"] = 1
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(ConfigError, match="unknown top-level key"):
        load_scenario(path)
    bad2 = json.loads(json.dumps(SCENARIO_JSON))
    bad2["grid"]["typo_key"] = 3
    path2 = tmp_path / "bad2.json"
    path2.write_text(json.dumps(bad2))
    with pytest.raises(ConfigError, match="grid.typo_key"):
        load_scenario(path2)


def low_regime_scenario(c=0.001):
    from mfglab.model import conv_tanh_interaction
    return Scenario(name="ou_low", drift=linear_drift(1.0),
                    diffusion=constant_diffusion(np.sqrt(2.0)),
                    running_cost=quadratic_cost(rho_uu=1.0, C_x_L=0.0,
                                                C_L_osc=0.0),
                    interaction=conv_tanh_interaction(c),
                    terminal_cost=zero_terminal(), mu0=GaussianLaw(0.5, 0.5),
                    T=4.0, regime="low",
                    grid=Grid1D(-6.0, 6.0, 601, 1e-3))


def test_smallness_low_regime():
    rep = check_smallness(low_regime_scenario())
    assert rep.regime == "low"
    assert rep.passes and rep.margin > 2.0
    # the low-regularity machinery pins the rate at half the certified one
    assert rep.lambda_star == pytest.approx(0.5 * rep.tm_bar.lam)
    assert rep.epsilon(0.1) == rep.epsilon(0.3)  # constant factor
    strong = check_smallness(low_regime_scenario(c=0.1))
    assert not strong.passes


def test_smallness_relaxed_condition():
    base = lq_mean_scenario()
    sc = Scenario(name="relaxed", drift=base.drift, diffusion=base.diffusion,
                  running_cost=base.running_cost,
                  interaction=base.interaction,
                  terminal_cost=base.terminal_cost, mu0=base.mu0, T=base.T,
                  regime="high", grid=base.grid, C_xx_psi=0.05)
    rep = check_smallness(sc)
    assert rep.relaxed is not None
    # the capped shift keeps more of the base rate: weaker condition
    assert rep.relaxed["dominates_base"]
    assert rep.relaxed["threshold"] >= rep.threshold
    assert rep.relaxed["passes"]
