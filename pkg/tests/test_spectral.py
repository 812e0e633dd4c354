"""Learning-rate spectrum: the EM operator, its Jacobian, and rates."""

import json

import numpy as np
import pytest

from bnfit.estimation import FitConfig, expected_stats, fit, is_fixpoint
from bnfit.harness import MissingnessSpec, forward_sample, obscure
from bnfit.model import (
    NumericalError,
    ParameterVector,
    ValidationError,
    random_init,
)
from bnfit.networks import chain3
from bnfit.spectral import (
    NotAFixpointError,
    build_report,
    contraction_rate,
    empirical_rate,
    eta_star,
    eigen_range,
    jacobian,
    phi_apply,
    report_to_json,
)

from util import random_network


def converged_chain3(n=400, hidden=("M",), seed=0, init_seed=5):
    """A deeply converged EM(1) fixpoint on obscured chain3 data."""
    net = chain3()
    data = obscure(forward_sample(net, n, seed=seed), MissingnessSpec(hidden, 0.2, seed=seed + 1))
    cfg = FitConfig("em", 1.0, 4000, tol_ll=None, tol_param=1e-10, init="random", seed=init_seed)
    result = fit(net, data, cfg)
    return net.with_theta(result.theta), data


class TestPhiApply:
    def test_eta_zero_identity(self):
        net = chain3()
        data = forward_sample(net, 50, seed=1)
        out = phi_apply(net, data, 0.0)
        for a, b in zip(out.tables, net.theta.tables):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_complete_data_closed_form(self):
        """With complete data the statistics do not depend on theta, so
        the map is an exact convex combination with the frequency vector."""
        rng = np.random.default_rng(2)
        net = random_network(rng, 5)
        data = forward_sample(net, 200, seed=3)
        stats = expected_stats(net, data)
        for eta in (0.5, 1.0, 1.7):
            out = phi_apply(net, data, eta, clamp=False)
            for i, t in enumerate(out.tables):
                mask = stats.parent[i] > 1e-12
                freq = stats.joint[i][mask] / stats.parent[i][mask, None]
                expected = eta * freq + (1 - eta) * net.theta.tables[i][mask]
                np.testing.assert_allclose(t[mask], expected, atol=1e-12)

    def test_fixpoint_invariant_for_all_eta(self):
        net, data = converged_chain3()
        for eta in (0.5, 1.0, 1.7):
            out = phi_apply(net, data, eta)
            for a, b in zip(out.tables, net.theta.tables):
                np.testing.assert_allclose(a, b, atol=1e-9)


class TestJacobian:
    def test_complete_data_gives_identity(self):
        """Complete data: the statistics are constant in theta, so M is
        the identity on every visited row's coordinates.  Rows never hit
        by the data are frozen, contribute zero eigenvalues, and are
        filtered by the cutoff."""
        rng = np.random.default_rng(4)
        net = random_network(rng, 5)
        data = forward_sample(net, 300, seed=5)
        res = fit(net, data, FitConfig("em", 1.0, 5, tol_ll=1e-13, init="random", seed=6))
        at_fix = net.with_theta(res.theta)
        stats = expected_stats(at_fix, data)
        m = jacobian(at_fix, data)
        coords = []
        for i in range(net.structure.n_vars):
            q, r = net.structure.table_shape(i)
            for j in range(q):
                visited = stats.parent[i][j] > 1e-12
                coords.extend([visited] * (r - 1))
        coords = np.array(coords)
        sub = m[np.ix_(coords, coords)]
        np.testing.assert_allclose(sub, np.eye(int(coords.sum())), atol=1e-6)
        assert np.all(np.abs(m[np.ix_(~coords, ~coords)]) < 1e-9)
        lmin, lmax, _ = eigen_range(m)
        assert lmin == pytest.approx(1.0, abs=1e-6)
        assert lmax == pytest.approx(1.0, abs=1e-6)

    def test_duplicated_dataset_same_jacobian(self):
        net, data = converged_chain3(n=200)
        m1 = jacobian(net, data)
        doubled = type(data)(data.structure, np.vstack([data.values, data.values]))
        m2 = jacobian(net, doubled)
        np.testing.assert_allclose(m1, m2, atol=1e-10)

    def test_hidden_middle_eigenvalues_in_unit_interval(self):
        net, data = converged_chain3()
        m = jacobian(net, data)
        eigs = np.linalg.eigvals(m)
        assert np.all(np.abs(eigs.imag) < 1e-8)
        assert eigs.real.min() > -1e-6
        assert eigs.real.max() < 1.0 + 1e-6

    def test_not_a_fixpoint_rejected(self):
        net = chain3()
        data = forward_sample(net, 100, seed=7)
        shifted = net.with_theta(random_init(net.structure, 99))
        with pytest.raises(NotAFixpointError):
            jacobian(shifted, data)


class TestEigenRange:
    def test_identity_matrix(self):
        assert eigen_range(np.eye(4)) == (1.0, 1.0, False)

    def test_diagonal(self):
        lmin, lmax, deficient = eigen_range(np.diag([0.5, 1.0]))
        assert (lmin, lmax, deficient) == (0.5, 1.0, False)

    def test_zero_filtered_and_flagged(self):
        lmin, lmax, deficient = eigen_range(np.diag([0.0, 0.5, 1.0]), cutoff=1e-8)
        assert (lmin, lmax) == (0.5, 1.0)
        assert deficient

    def test_all_below_cutoff_rejected(self):
        with pytest.raises(NumericalError):
            eigen_range(np.zeros((3, 3)))


class TestRateFormulas:
    def test_eta_star_values(self):
        assert eta_star(1.0, 1.0) == pytest.approx(1.0)
        assert eta_star(0.5, 1.0) == pytest.approx(4.0 / 3.0)
        assert eta_star(0.1, 0.4) == pytest.approx(4.0)

    def test_eta_star_rejects_nonpositive(self):
        with pytest.raises(ValidationError):
            eta_star(0.0, 0.5)
        with pytest.raises(ValidationError):
            eta_star(-0.1, 0.5)
        with pytest.raises(ValidationError):
            eta_star(0.6, 0.5)

    def test_contraction_rate_values(self):
        assert contraction_rate(1.0, 0.2, 1.0) == pytest.approx(0.8)
        assert contraction_rate(4.0 / 3.0, 0.5, 1.0) == pytest.approx(1.0 / 3.0)
        assert contraction_rate(2.0, 0.5, 1.0) == pytest.approx(1.0)

    def test_eta_star_minimizes_rate(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            lmin = rng.uniform(0.01, 1.0)
            lmax = rng.uniform(lmin, 1.0)
            star = eta_star(lmin, lmax)
            best = contraction_rate(star, lmin, lmax)
            for eta in np.linspace(0.05, 3.0, 100):
                assert best <= contraction_rate(eta, lmin, lmax) + 1e-12


class TestEmpiricalRate:
    def test_exact_synthetic_contraction(self):
        net = chain3()
        star = net.theta
        direction = [np.array([[0.02, -0.02]]),
                     np.array([[0.01, -0.01], [-0.02, 0.02]]),
                     np.array([[0.0, 0.0], [0.015, -0.015]])]
        thetas = []
        for s in range(10):
            scale = 0.7**s
            thetas.append(
                ParameterVector(
                    [t + scale * d for t, d in zip(star.tables, direction)],
                    _validate=False,
                )
            )
        assert empirical_rate(thetas, star) == pytest.approx(0.7, abs=1e-9)

    def test_too_few_iterates_rejected(self):
        net = chain3()
        with pytest.raises(NumericalError):
            empirical_rate([net.theta] * 3, net.theta)

    def test_noise_floor_rejected(self):
        net = chain3()
        star = net.theta
        thetas = [star] * 6  # all distances are exactly zero
        with pytest.raises(NumericalError):
            empirical_rate(thetas, star)


class TestEndToEnd:
    def test_em1_empirical_rate_matches_prediction(self):
        """Cross-module consistency on the hidden-middle chain."""
        net, data = converged_chain3(n=500, seed=11, init_seed=3)
        report = build_report(net, data, [1.0])
        predicted = report.rho[0].predicted
        rng = np.random.default_rng(12)
        tables = []
        for t in net.theta.tables:
            d = rng.normal(size=t.shape)
            d -= d.mean(axis=1, keepdims=True)
            tables.append(t + 3e-3 * d)
        start = net.with_theta(ParameterVector(tables, _validate=False))
        run = fit(start, data,
                  FitConfig("em", 1.0, 60, tol_ll=None, tol_param=1e-11,
                            init="network", record_thetas=True))
        limit = fit(net.with_theta(run.theta), data,
                    FitConfig("em", 1.0, 4000, tol_ll=None, tol_param=1e-12,
                              init="network"))
        measured = empirical_rate(list(run.thetas), limit.theta)
        assert abs(measured - predicted) / predicted <= 0.15

    def test_optimal_rate_contracts_faster_than_em1(self):
        """Runs at eta* shrink toward the fixpoint faster than EM(1)."""
        net, data = converged_chain3(n=500, seed=11, init_seed=3)
        m = jacobian(net, data)
        lmin, lmax, _ = eigen_range(m)
        star = eta_star(lmin, lmax)
        rng = np.random.default_rng(21)
        tables = []
        for t in net.theta.tables:
            d = rng.normal(size=t.shape)
            d -= d.mean(axis=1, keepdims=True)
            tables.append(t + 3e-3 * d)
        start = net.with_theta(ParameterVector(tables, _validate=False))
        rates = {}
        for eta in (1.0, star):
            run = fit(start, data,
                      FitConfig("em", eta, 60, tol_ll=None, tol_param=1e-11,
                                init="network", record_thetas=True))
            limit = fit(net.with_theta(run.theta), data,
                        FitConfig("em", eta, 4000, tol_ll=None, tol_param=1e-12,
                                  init="network"))
            rates[eta] = empirical_rate(list(run.thetas), limit.theta)
        assert rates[star] < rates[1.0]

    def test_report_json_schema(self):
        net, data = converged_chain3(n=300, seed=13, init_seed=4)
        report = build_report(net, data, [0.5, 1.0, 1.5], empirical={1.0: 0.8})
        doc = json.loads(report_to_json(report))
        assert set(doc) == {
            "lambda_min", "lambda_max", "eta_star", "rank_deficient",
            "theta_residual", "rho",
        }
        assert doc["eta_star"] >= 1.0 - 1e-6
        assert len(doc["rho"]) == 3
        assert "empirical" in doc["rho"][1] and "empirical" not in doc["rho"][0]
        assert doc["theta_residual"] < 1e-6
