import json
import math

import numpy as np
import pytest

from sparse_eoc.activations import ActivationSpec, Kind, expected_sparsity
from sparse_eoc.errors import DomainError, EocInfeasibleError, NoSolutionError, PreconditionError
from sparse_eoc.meanfield import (
    EocSolution,
    MeanFieldParams,
    Stability,
    chi1,
    chi1_gap,
    classify,
    correlation_curve,
    correlation_map,
    eoc_sigma_w2,
    eoc_solve,
    find_fixed_points,
    iterate_correlation,
    iterate_from,
    iterate_variance,
    second_moment,
    solve_m_for_vprime,
    variance_curve,
    variance_map,
    variance_map_d1,
    variance_map_d2,
    variance_map_quadrature,
)

from reference_values import cells

TAUS = [0.0, 0.25, 0.52, 0.84, 1.04, 1.44]
MS = [0.5, 1.0, 2.0]
QS = [0.25, 1.0, 4.0]


def grid_specs():
    for tau in TAUS:
        yield ActivationSpec(Kind.SHIFTED_RELU, tau)
        yield ActivationSpec(Kind.SOFT_THRESHOLD, tau)
        for m in MS:
            yield ActivationSpec(Kind.CLIPPED_RELU, tau, m)
            yield ActivationSpec(Kind.CLIPPED_SOFT_THRESHOLD, tau, m)


GRID = list(grid_specs())
PARAMS = MeanFieldParams(1.7, 0.1)


def crelu_eoc(s=0.7, vprime=0.5, kind=Kind.CLIPPED_RELU):
    return eoc_solve(kind, s, solve_m_for_vprime(kind, s, 1.0, vprime))


class TestParams:
    @pytest.mark.parametrize("w, b", [(0.0, 0.0), (-1.0, 0.0), (1.0, -0.1)])
    def test_invalid(self, w, b):
        with pytest.raises(DomainError):
            MeanFieldParams(w, b)

    def test_round_trip(self):
        p = MeanFieldParams(2.5, 0.3)
        assert MeanFieldParams.from_dict(json.loads(json.dumps(p.to_dict()))) == p
        assert p.scaled(1.2).sigma_w2 == pytest.approx(3.0)

    def test_classify(self):
        assert classify(0.5) is Stability.STABLE
        assert classify(1.0 + 1e-7) is Stability.MARGINAL
        assert classify(1.1) is Stability.UNSTABLE


class TestVarianceMap:
    def test_relu_examples(self):
        relu = ActivationSpec(Kind.SHIFTED_RELU, 0.0)
        assert variance_map(relu, MeanFieldParams(2.0, 0.1), 1.0) == pytest.approx(1.1, abs=1e-14)
        for q in (0.1, 1.0, 7.0):
            assert variance_map_d1(relu, MeanFieldParams(2.0), q) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("spec", GRID[::5], ids=str)
    def test_small_q_limit(self, spec):
        assert abs(variance_map(spec, PARAMS, 1e-14) - PARAMS.sigma_b2) < 1e-12

    def test_crelu_fixed_point(self, backend):
        sol = crelu_eoc(0.7, 0.7)
        assert abs(sol.m - 1.45) <= 0.01
        assert abs(variance_map(sol.activation, sol.params, 1.0) - 1.0) <= 1e-8

    def test_closed_form_against_quadrature(self, backend):
        worst = 0.0
        for spec in GRID:
            for q in QS:
                worst = max(worst, abs(variance_map(spec, PARAMS, q) - variance_map_quadrature(spec, PARAMS, q)))
        assert worst <= 1e-8

    @pytest.mark.parametrize("spec", GRID, ids=str)
    def test_d1_finite_difference(self, spec, backend):
        h = 1e-5
        for q in QS:
            fd = (variance_map(spec, PARAMS, q + h) - variance_map(spec, PARAMS, q - h)) / (2 * h)
            assert abs(variance_map_d1(spec, PARAMS, q) - fd) <= 1e-6 * max(1.0, abs(fd))

    @pytest.mark.parametrize("spec", GRID, ids=str)
    def test_d2_finite_difference(self, spec, backend):
        h = 1e-5
        for q in QS:
            fd = (variance_map_d1(spec, PARAMS, q + h) - variance_map_d1(spec, PARAMS, q - h)) / (2 * h)
            assert abs(variance_map_d2(spec, PARAMS, q) - fd) <= 1e-6 * max(1.0, abs(fd))

    @pytest.mark.parametrize("kind", [Kind.SHIFTED_RELU, Kind.SOFT_THRESHOLD])
    def test_unclipped_convex(self, kind):
        spec = ActivationSpec(kind, 0.52)
        qs = np.geomspace(1e-3, 100, 200)
        assert all(variance_map_d2(spec, PARAMS, q) > 0.0 for q in qs)

    @pytest.mark.parametrize("q", [0.0, -1.0])
    def test_domain(self, q):
        spec = GRID[0]
        for f in (variance_map, variance_map_d1, variance_map_d2, chi1):
            with pytest.raises(DomainError):
                f(spec, PARAMS, q)

    def test_curve(self):
        rows = variance_curve(GRID[3], PARAMS, [0.0, 0.5, 1.0])
        assert rows.shape == (3, 4)
        assert rows[0, 1] == PARAMS.sigma_b2 and math.isnan(rows[0, 2])
        assert rows[2, 1] == variance_map(GRID[3], PARAMS, 1.0)


class TestIdentities:
    @pytest.mark.parametrize("tau", TAUS)
    @pytest.mark.parametrize("q", QS)
    def test_doubling(self, tau, q, backend):
        relu, st = ActivationSpec(Kind.SHIFTED_RELU, tau), ActivationSpec(Kind.SOFT_THRESHOLD, tau)
        assert abs(chi1(st, PARAMS, q) - 2 * chi1(relu, PARAMS, q)) <= 1e-12
        for m in MS:
            cr = ActivationSpec(Kind.CLIPPED_RELU, tau, m)
            cs = ActivationSpec(Kind.CLIPPED_SOFT_THRESHOLD, tau, m)
            b = PARAMS.sigma_b2
            assert abs(variance_map(cs, PARAMS, q) - (2 * variance_map(cr, PARAMS, q) - b)) <= 1e-12
            assert abs(variance_map_d1(cs, PARAMS, q) - 2 * variance_map_d1(cr, PARAMS, q)) <= 1e-12

    @pytest.mark.parametrize("spec", [s for s in GRID if s.m is not None], ids=str)
    def test_gap(self, spec, backend):
        for q in QS:
            gap = chi1(spec, PARAMS, q) - variance_map_d1(spec, PARAMS, q)
            assert abs(gap - chi1_gap(spec, PARAMS, q)) <= 1e-10
            assert gap > 0.0

    @pytest.mark.parametrize("spec", [s for s in GRID if s.m is None], ids=str)
    def test_no_gap_unclipped(self, spec):
        for q in QS:
            assert abs(chi1(spec, PARAMS, q) - variance_map_d1(spec, PARAMS, q)) <= 1e-12


class TestEoc:
    def test_relu_half(self):
        sol = eoc_solve(Kind.SHIFTED_RELU, 0.5)
        assert sol.params.sigma_w2 == 2.0 and sol.tau == 0.0

    @pytest.mark.parametrize("kind", [Kind.SHIFTED_RELU, Kind.SOFT_THRESHOLD])
    @pytest.mark.parametrize("s", [0.5, 0.6, 0.7, 0.8])
    @pytest.mark.parametrize("q_star", QS)
    def test_unclipped_sigma_w2(self, kind, s, q_star):
        sol = eoc_solve(kind, s, q_star=q_star)
        assert abs(sol.params.sigma_w2 - 1.0 / (1.0 - s)) <= 1e-12
        assert abs(sol.chi1 - 1.0) <= 1e-9
        assert abs(variance_map(sol.activation, sol.params, q_star) - q_star) <= 1e-9 * q_star

    def test_st_chi1_example(self):
        sol = eoc_solve(Kind.SOFT_THRESHOLD, 0.6)
        assert sol.params.sigma_w2 == pytest.approx(2.5, abs=1e-12)
        assert abs(sol.chi1 - 1.0) <= 1e-9

    def test_crelu_chi1_example(self):
        spec = ActivationSpec(Kind.CLIPPED_RELU, 1.04, 1.17)
        s = expected_sparsity(spec, 1.0)
        sw2 = eoc_sigma_w2(Kind.CLIPPED_RELU, s, 1.0, 1.17)
        assert abs(chi1(spec, MeanFieldParams(sw2), 1.0) - 1.0) <= 1e-9

    @pytest.mark.parametrize("kind", [Kind.CLIPPED_RELU, Kind.CLIPPED_SOFT_THRESHOLD])
    @pytest.mark.parametrize("s", [0.5, 0.7, 0.9])
    def test_large_clip_limit(self, kind, s):
        assert abs(eoc_sigma_w2(kind, s, 1.0, 50.0) - 1.0 / (1.0 - s)) <= 1e-6

    @pytest.mark.parametrize("kind", [Kind.CLIPPED_RELU, Kind.CLIPPED_SOFT_THRESHOLD])
    @pytest.mark.parametrize("s", [0.6, 0.8])
    @pytest.mark.parametrize("m", [0.5, 1.5])
    @pytest.mark.parametrize("q_star", [0.5, 2.0])
    def test_clipped_invariants(self, kind, s, m, q_star, backend):
        sol = eoc_solve(kind, s, m, q_star)
        assert abs(sol.chi1 - 1.0) <= 1e-9
        assert abs(variance_map(sol.activation, sol.params, q_star) - q_star) <= 1e-9
        assert sol.vprime_at_qstar < 1.0

    def test_cst_example(self):
        sol = eoc_solve(Kind.CLIPPED_SOFT_THRESHOLD, 0.85, 1.0)
        assert abs(sol.vprime_at_qstar - 0.7) <= 0.01

    def test_tiny_clip_never_crashes(self):
        try:
            sol = eoc_solve(Kind.CLIPPED_SOFT_THRESHOLD, 0.99, 0.01)
        except EocInfeasibleError:
            return
        assert sol.params.sigma_b2 >= 0.0 and abs(sol.chi1 - 1.0) <= 1e-9

    def test_infeasible(self, monkeypatch):
        # the bias is feasible across the whole (s, m) domain, so force the branch
        import sparse_eoc.meanfield as mf

        monkeypatch.setattr(mf, "second_moment", lambda spec, q: 10.0 * q)
        with pytest.raises(EocInfeasibleError, match="EoC infeasible: bias variance negative") as err:
            mf.eoc_solve(Kind.CLIPPED_SOFT_THRESHOLD, 0.99, 0.01)
        assert err.value.s == 0.99 and err.value.m == 0.01 and err.value.q_star == 1.0
        assert err.value.sigma_b2 < 0.0

    def test_rounding_clamp(self, monkeypatch):
        import sparse_eoc.meanfield as mf

        sw2 = mf.eoc_sigma_w2(Kind.SHIFTED_RELU, 0.6, 1.0)
        monkeypatch.setattr(mf, "second_moment", lambda spec, q: (1.0 + 1e-14) / sw2)
        assert mf.eoc_solve(Kind.SHIFTED_RELU, 0.6).params.sigma_b2 == 0.0

    @pytest.mark.parametrize(
        "args", [(Kind.CLIPPED_RELU, 0.7, None), (Kind.SHIFTED_RELU, 0.0, None), (Kind.SHIFTED_RELU, 0.3, None)]
    )
    def test_domain(self, args):
        with pytest.raises(DomainError):
            eoc_solve(*args)

    def test_json_round_trip(self):
        sol = crelu_eoc()
        assert EocSolution.from_dict(json.loads(json.dumps(sol.to_dict()))) == sol


class TestSolveM:
    @pytest.mark.parametrize(
        "kind, s, target, expected",
        [
            (Kind.CLIPPED_RELU, 0.7, 0.5, 1.05),
            (Kind.CLIPPED_RELU, 0.85, 0.9, 1.74),
            (Kind.CLIPPED_SOFT_THRESHOLD, 0.8, 0.9, 1.61),
        ],
    )
    def test_examples(self, kind, s, target, expected):
        assert abs(solve_m_for_vprime(kind, s, 1.0, target) - expected) <= 0.01

    @pytest.mark.parametrize("kind, s, tau, m, vprime, vsecond", [c for c in cells() if c[3] is not None])
    def test_reference_cells(self, kind, s, tau, m, vprime, vsecond):
        m_hat = solve_m_for_vprime(kind, s, 1.0, vprime)
        sol = eoc_solve(kind, s, m_hat)
        assert abs(sol.tau - tau) <= 0.01
        assert abs(m_hat - m) <= 0.01
        assert abs(sol.vprime_at_qstar - vprime) <= 1e-9
        assert abs(sol.vsecond_at_qstar - vsecond) <= 0.01

    def test_unreachable(self):
        with pytest.raises(NoSolutionError):
            solve_m_for_vprime(Kind.CLIPPED_RELU, 0.7, 1.0, 0.5, bracket=(5.0, 10.0))

    @pytest.mark.parametrize("target", [0.0, 1.0])
    def test_target_range(self, target):
        with pytest.raises(DomainError):
            solve_m_for_vprime(Kind.CLIPPED_RELU, 0.7, 1.0, target)

    def test_unclipped_rejected(self):
        with pytest.raises(DomainError):
            solve_m_for_vprime(Kind.SOFT_THRESHOLD, 0.7, 1.0, 0.5)


class TestFixedPoints:
    def test_relu_continuum(self):
        scan = find_fixed_points(ActivationSpec(Kind.SHIFTED_RELU, 0.0), MeanFieldParams(2.0, 0.0))
        assert scan.continuum and len(scan) == 0

    def test_crelu_single_stable(self, backend):
        sol = crelu_eoc(0.7, 0.5)
        scan = find_fixed_points(sol.activation, sol.params, (1e-3, 50.0))
        assert len(scan) == 1
        assert abs(scan[0].q - 1.0) < 1e-9 and scan[0].stability is Stability.STABLE

    def test_cst_bifurcation(self, backend):
        sol = crelu_eoc(0.85, 0.9, Kind.CLIPPED_SOFT_THRESHOLD)
        scan = find_fixed_points(sol.activation, sol.params, (1e-3, 50.0))
        assert [p.stability for p in scan] == [Stability.STABLE, Stability.UNSTABLE, Stability.STABLE]
        qs = [p.q for p in scan]
        assert qs == sorted(qs)
        assert any(abs(q - 1.0) < 1e-9 for q in qs)
        for p in scan:
            assert abs(variance_map(sol.activation, sol.params, p.q) - p.q) <= 1e-10 * max(1.0, p.q)

    @pytest.mark.parametrize("kind", [Kind.SHIFTED_RELU, Kind.SOFT_THRESHOLD])
    def test_unclipped_tangency(self, kind):
        sol = eoc_solve(kind, 0.7)
        scan = find_fixed_points(sol.activation, sol.params)
        assert len(scan) == 1
        p = scan[0]
        assert abs(p.q - 1.0) < 1e-6 and p.stability is Stability.MARGINAL and p.vsecond > 0

    def test_none_found(self):
        spec = ActivationSpec(Kind.SHIFTED_RELU, 0.0)
        assert len(find_fixed_points(spec, MeanFieldParams(3.0, 0.1))) == 0

    @pytest.mark.parametrize("q_range, n", [((0.0, 1.0), 64), ((2.0, 1.0), 64), ((0.1, 1.0), 8)])
    def test_domain(self, q_range, n):
        with pytest.raises(DomainError):
            find_fixed_points(GRID[0], PARAMS, q_range, n)

    @pytest.mark.slow
    @pytest.mark.parametrize(
        "kind, s, vprime",
        [(Kind.CLIPPED_SOFT_THRESHOLD, 0.85, 0.9), (Kind.CLIPPED_SOFT_THRESHOLD, 0.9, 0.9), (Kind.CLIPPED_RELU, 0.7, 0.5)],
    )
    def test_stability_matches_trajectories(self, kind, s, vprime):
        sol = crelu_eoc(s, vprime, kind)
        for p in find_fixed_points(sol.activation, sol.params, (1e-3, 50.0)):
            for sign in (-1, 1):
                traj = iterate_from(sol.activation, sol.params, p.q * (1 + sign * 0.01), 10**4)
                end = traj.values[-1]
                if p.stability is Stability.STABLE:
                    assert abs(end - p.q) <= 1e-6
                else:
                    assert abs(end - p.q) > 0.01 * p.q


class TestTrajectories:
    def test_constant_at_fixed_point(self):
        sol = crelu_eoc()
        q0 = (1.0 - sol.params.sigma_b2) / sol.params.sigma_w2
        traj = iterate_variance(sol.activation, sol.params, q0, 50)
        np.testing.assert_allclose(traj.values, 1.0, atol=1e-12)
        assert not traj.diverged

    def test_variance_preserving_first_layer(self):
        sol = crelu_eoc()
        traj = iterate_variance(sol.activation, sol.params, 1.0, 5, variance_preserving=True)
        assert traj.values[0] == 1.0

    def test_right_instability(self, backend):
        sol = eoc_solve(Kind.SHIFTED_RELU, 0.7)
        traj = iterate_from(sol.activation, sol.params, 1.05, 500)
        assert traj.diverged and np.any(traj.values > 10.0)
        assert len(traj) < 500

    def test_left_stability(self, backend):
        sol = eoc_solve(Kind.SHIFTED_RELU, 0.7)
        traj = iterate_from(sol.activation, sol.params, 0.75, 20000)
        v = traj.values
        assert np.all(np.diff(v) > 0) and np.all(v < 1.0)
        assert abs(v[-1] - 1.0) <= 1e-3

    def test_left_approach_is_algebraic(self):
        # at a tangency 1 - q_l ~ 2 / (V'' l)
        sol = eoc_solve(Kind.SHIFTED_RELU, 0.7)
        v = iterate_from(sol.activation, sol.params, 0.75, 4000).values
        assert abs((1.0 - v[-1]) * sol.vsecond_at_qstar * 4000 / 2.0 - 1.0) < 0.1

    @pytest.mark.xfail(strict=True, reason="a tangent fixed point is approached as 1/l; 1e-3 needs ~6500 layers")
    def test_left_stability_within_200_layers(self):
        sol = eoc_solve(Kind.SHIFTED_RELU, 0.7)
        v = iterate_from(sol.activation, sol.params, 0.75, 200).values
        assert abs(v[-1] - 1.0) <= 1e-3

    def test_first_element_affine(self):
        traj = iterate_variance(GRID[2], PARAMS, 2.0, 3)
        assert traj.values[0] == PARAMS.sigma_w2 * 2.0 + PARAMS.sigma_b2

    def test_domain(self):
        with pytest.raises(DomainError):
            iterate_variance(GRID[0], PARAMS, 1.0, 0)
        with pytest.raises(DomainError):
            iterate_variance(GRID[0], PARAMS, 0.0, 5)


class TestCorrelation:
    def test_one_is_fixed(self):
        sol = crelu_eoc(0.7, 0.7)
        assert abs(correlation_map(sol.activation, sol.params, 1.0, 1.0) - 1.0) < 1e-9
        np.testing.assert_allclose(iterate_correlation(sol.activation, sol.params, 1.0, 1.0, 10), 1.0, atol=1e-9)

    @pytest.mark.parametrize("kind", [Kind.SOFT_THRESHOLD, Kind.CLIPPED_SOFT_THRESHOLD])
    def test_odd_zero(self, kind):
        sol = eoc_solve(kind, 0.6, 1.2 if kind.clipped else None)
        r0 = correlation_map(sol.activation, sol.params, 1.0, 0.0)
        assert abs(r0 - sol.params.sigma_b2) < 1e-12

    @pytest.mark.parametrize("kind, m", [(Kind.SOFT_THRESHOLD, None), (Kind.CLIPPED_RELU, 1.45)])
    def test_slope_at_one_is_chi1(self, kind, m):
        sol = eoc_solve(kind, 0.7, m)
        # the kinks add an O(h^1.5) term to R, so the step must be small
        h = 1e-7
        slope = (1.0 - correlation_map(sol.activation, sol.params, 1.0, 1.0 - h)) / h
        assert abs(slope - sol.chi1) <= 1e-3

    def test_crelu_half_against_monte_carlo(self):
        sol = eoc_solve(Kind.CLIPPED_RELU, 0.7, 1.45)
        r = correlation_map(sol.activation, sol.params, 1.0, 0.5)
        assert 0.5 < r < 1.0
        g = np.random.default_rng(11)
        n, chunk = 10**7, 10**6
        acc, acc2 = 0.0, 0.0
        for _ in range(n // chunk):
            z1, z2 = g.standard_normal(chunk), g.standard_normal(chunk)
            v = sol.activation(z1) * sol.activation(0.5 * z1 + math.sqrt(0.75) * z2)
            acc += v.sum()
            acc2 += (v * v).sum()
        mean = acc / n
        se = math.sqrt((acc2 / n - mean**2) / n)
        mc = sol.params.sigma_w2 * mean + sol.params.sigma_b2
        assert abs(r - mc) <= 4 * sol.params.sigma_w2 * se

    def test_ordered_convergence(self):
        sol = eoc_solve(Kind.SOFT_THRESHOLD, 0.6)
        rhos = iterate_correlation(sol.activation, sol.params, 1.0, 0.5, 20)
        assert np.all(np.diff(rhos) > 0) and rhos[0] > 0.5 and rhos[-1] < 1.0

    def test_chaotic_departure(self):
        sol = crelu_eoc(0.7, 0.5)
        params = sol.params.scaled(1.2)
        q = find_fixed_points(sol.activation, params)[-1].q
        rhos = iterate_correlation(sol.activation, params, q, 0.99, 10)
        assert np.all(np.diff(np.concatenate([[0.99], rhos])) < 0)

    def test_preconditions(self):
        sol = crelu_eoc()
        with pytest.raises(PreconditionError):
            correlation_map(sol.activation, sol.params, 2.0, 0.5)
        with pytest.raises(DomainError):
            correlation_map(sol.activation, sol.params, 1.0, 1.01)

    def test_curve(self):
        sol = crelu_eoc()
        rows = correlation_curve(sol.activation, sol.params, 1.0, [0.0, 1.0])
        assert rows.shape == (2, 2) and abs(rows[1, 1] - 1.0) < 1e-9


def test_second_moment_positive():
    for spec in GRID:
        assert second_moment(spec, 1.0) > 0.0
