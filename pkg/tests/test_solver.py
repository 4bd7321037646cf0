import math

import numpy as np
import pytest

from uavlink.channel import ChannelVector
from uavlink.hermitian import hermitize
from uavlink.link import (LinkParams, check_feasible, downlink_rate,
                          required_uplink_trace)
from uavlink.solver import (ConvexProblem, DownlinkInfeasible,
                            UplinkInfeasible, _PsdOps, build_problem,
                            energy_utility, extract_beamformer, oracle_V,
                            oracle_p, solve)

PAPER = LinkParams.from_dbm()


def make_instance(k, rng, chat=None, g_dl=None, params=PAPER):
    """Random feasible instance; chat pins required-trace / max-trace ratio."""
    h = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) * 2e-5
    c = required_uplink_trace(params)
    if chat is not None:
        nh2 = float(np.real(h.conj() @ h))
        h = h * math.sqrt(c / (params.pb_max_w * nh2 * chat))
    if g_dl is None:
        g_dl = 10.0 ** rng.uniform(-8.5, -6.0)
    ch_ul = ChannelVector("btu", 1, h, h, 500.0, True)
    hd = np.zeros(k, dtype=complex)
    hd[0] = math.sqrt(g_dl)
    ch_dl = ChannelVector("utb", 1, hd, hd, 500.0, True)
    return build_problem(ch_ul, ch_dl, params)


def oracle_objective(problem):
    _, tr_star = oracle_V(problem.h_ul, problem.c_w)
    p_star, phi_star = oracle_p(problem.g_dl, problem.params)
    eta = problem.params.eta
    obj = (phi_star / problem.r_max_bps
           - eta * (p_star / problem.params.pv_max_w
                    + tr_star / problem.params.pb_max_w))
    return obj, tr_star, p_star


def test_build_problem_fields():
    rng = np.random.default_rng(0)
    prob = make_instance(4, rng)
    assert prob.n_antennas == 4
    assert prob.c_w == pytest.approx(3.9905e-12, rel=1e-4)
    assert prob.r_max_bps == pytest.approx(
        downlink_rate(1.0, prob.g_dl, PAPER), rel=1e-12)
    # rank-1 trace identity: tr(h h^H V) = h^H V h
    v = np.eye(4, dtype=complex)
    assert np.real(prob.h_ul.conj() @ v @ prob.h_ul) == pytest.approx(
        np.real(np.trace(np.outer(prob.h_ul, prob.h_ul.conj()) @ v)))


def test_build_problem_zero_downlink():
    h = np.ones(2, dtype=complex)
    ch_ul = ChannelVector("btu", 1, h, h, 1.0, True)
    hd = np.array([1.0, -1.0], dtype=complex)  # |sum|^2 = 0
    ch_dl = ChannelVector("utb", 1, hd, hd, 1.0, True)
    with pytest.raises(DownlinkInfeasible):
        build_problem(ch_ul, ch_dl, PAPER)


def test_oracle_v_basis_case():
    v, tr = oracle_V(np.array([1.0 + 0j, 0.0]), 1.0)
    assert tr == pytest.approx(1.0)
    assert np.allclose(v, np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_oracle_v_homogeneity():
    rng = np.random.default_rng(1)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    _, tr1 = oracle_V(h, 0.7)
    _, tr2 = oracle_V(2.0 * h, 0.7)
    assert tr2 == pytest.approx(tr1 / 4.0, rel=1e-12)


def test_oracle_v_achieves_constraint():
    rng = np.random.default_rng(2)
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v, tr = oracle_V(h, 2.5)
    assert np.real(h.conj() @ v @ h) == pytest.approx(2.5, rel=1e-12)
    assert np.real(np.trace(v)) == pytest.approx(tr, rel=1e-12)


def test_oracle_v_brute_force_sphere():
    # brute force over rank-1 candidates q w w^H on a discretized sphere:
    # the discretized optimum approaches tr* from above as the grid refines
    rng = np.random.default_rng(3)
    h = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    c = 1.3
    _, tr_star = oracle_V(h, c)
    last = None
    for n in (20, 60, 180):
        best = math.inf
        for theta in np.linspace(0, math.pi / 2, n):
            for phi in np.linspace(0, 2 * math.pi, 2 * n, endpoint=False):
                w = np.array([math.cos(theta),
                              math.sin(theta) * np.exp(1j * phi)])
                gain = abs(np.vdot(w, h)) ** 2
                if gain > 0:
                    best = min(best, c / gain)
        assert best >= tr_star - 1e-12
        if last is not None:
            assert best <= last + 1e-12
        last = best
    assert last == pytest.approx(tr_star, rel=1e-3)


def test_oracle_v_rejects_bad_inputs():
    with pytest.raises(ValueError):
        oracle_V(np.zeros(3, dtype=complex), 1.0)
    with pytest.raises(ValueError):
        oracle_V(np.ones(3, dtype=complex), -1.0)


def test_oracle_p_limits():
    g = 1e-7
    p_lo, _ = oracle_p(g, LinkParams.from_dbm(eta=1e-9))
    assert p_lo == pytest.approx(PAPER.pv_max_w)
    p_hi, _ = oracle_p(g, LinkParams.from_dbm(eta=1e9))
    p_min = (2 ** (PAPER.re_th_bps / PAPER.w_hz) - 1) * PAPER.noise_w / g
    assert p_hi == pytest.approx(p_min, rel=1e-12)


def test_oracle_p_matches_grid_search():
    # independent 1-D oracle: dense grid maximization of the utility
    rng = np.random.default_rng(4)
    for _ in range(10):
        g = 10.0 ** rng.uniform(-8.0, -6.0)
        eta = 10.0 ** rng.uniform(-1.0, 0.5)
        params = LinkParams.from_dbm(eta=eta)
        p_star, phi_star = oracle_p(g, params)
        r_max = downlink_rate(params.pv_max_w, g, params)
        p_min = (2 ** (params.re_th_bps / params.w_hz) - 1) * params.noise_w / g
        grid = np.linspace(p_min, params.pv_max_w, 20001)
        util = np.array([downlink_rate(float(p), g, params) / r_max
                         - eta * p / params.pv_max_w for p in grid])
        p_grid = float(grid[np.argmax(util)])
        assert abs(p_star - p_grid) <= 2 * (grid[1] - grid[0])
        assert phi_star == pytest.approx(downlink_rate(p_star, g, params))


def test_oracle_p_infeasible():
    with pytest.raises(DownlinkInfeasible):
        oracle_p(1e-16, PAPER)


def test_solve_scalar_case():
    prob = ConvexProblem(n_antennas=1, h_ul=np.array([1.0 + 0j]), g_dl=1e-7,
                         params=PAPER, c_w=1.0,
                         r_max_bps=downlink_rate(1.0, 1e-7, PAPER))
    sol = solve(prob)
    assert sol.status == "optimal"
    assert np.real(np.trace(sol.V)) == pytest.approx(1.0, rel=1e-9)


def test_solve_matches_oracles():
    rng = np.random.default_rng(5)
    for trial in range(40):
        k = (2, 4, 8, 16)[trial % 4]
        prob = make_instance(k, rng, chat=10.0 ** rng.uniform(-3, -0.1))
        sol = solve(prob)
        obj_star, tr_star, p_star = oracle_objective(prob)
        assert abs(np.real(np.trace(sol.V)) - tr_star) / tr_star < 1e-6
        assert abs(sol.p - p_star) / p_star < 1e-6
        assert abs(sol.e_eu - obj_star) / abs(obj_star) < 1e-6
        assert sol.tightness >= 1.0 - 1e-6
        assert sol.gap <= 1e-8 * (1.0 + abs(obj_star))
        assert sol.kkt_residual <= 1e-8 * (1.0 + prob.params.eta)


def test_solve_solution_is_psd_and_feasible():
    rng = np.random.default_rng(6)
    for _ in range(10):
        prob = make_instance(4, rng, chat=10.0 ** rng.uniform(-3, -0.3))
        sol = solve(prob)
        evals = np.linalg.eigvalsh(hermitize(sol.V))
        assert evals[0] >= -1e-12 * max(evals[-1], 1e-300)
        hd = np.zeros(4, dtype=complex)
        hd[0] = math.sqrt(prob.g_dl)
        ch_ul = ChannelVector("btu", 1, prob.h_ul, prob.h_ul, 1.0, True)
        ch_dl = ChannelVector("utb", 1, hd, hd, 1.0, True)
        report = check_feasible(sol, (ch_ul, ch_dl), prob.params)
        assert report.feasible  # exact-dispersion evaluation inside
        assert np.linalg.norm(sol.v) ** 2 == pytest.approx(
            np.real(np.trace(sol.V)) * sol.tightness, rel=1e-9)


def test_solve_uplink_infeasible():
    prob = ConvexProblem(n_antennas=2, h_ul=np.array([1e-9, 0], dtype=complex),
                         g_dl=1e-7, params=PAPER, c_w=1.0,
                         r_max_bps=downlink_rate(1.0, 1e-7, PAPER))
    with pytest.raises(UplinkInfeasible):
        solve(prob)


def test_solve_downlink_infeasible():
    prob = ConvexProblem(n_antennas=2,
                         h_ul=np.array([1e-4, 1e-4], dtype=complex),
                         g_dl=1e-16, params=PAPER,
                         c_w=required_uplink_trace(PAPER),
                         r_max_bps=downlink_rate(1.0, 1e-16, PAPER))
    with pytest.raises(DownlinkInfeasible):
        solve(prob)


def test_solve_monotone_in_channel_strength():
    rng = np.random.default_rng(7)
    h = (rng.standard_normal(8) + 1j * rng.standard_normal(8)) * 2e-5
    g_dl = 1e-7
    traces = []
    for scale in (1.0, 1.5, 2.0, 4.0):
        ch_ul = ChannelVector("btu", 1, h * scale, h, 1.0, True)
        hd = np.zeros(8, dtype=complex)
        hd[0] = math.sqrt(g_dl)
        ch_dl = ChannelVector("utb", 1, hd, hd, 1.0, True)
        sol = solve(build_problem(ch_ul, ch_dl, PAPER))
        traces.append(np.real(np.trace(sol.V)))
    for a, b in zip(traces, traces[1:]):
        assert b <= a * (1.0 + 1e-9)


def test_extract_beamformer_rank_one():
    rng = np.random.default_rng(8)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    v, tight = extract_beamformer(np.outer(h, h.conj()))
    assert tight == pytest.approx(1.0, abs=1e-12)
    # collinear with h up to the phase convention
    cos = abs(np.vdot(v, h)) / (np.linalg.norm(v) * np.linalg.norm(h))
    assert cos == pytest.approx(1.0, abs=1e-10)
    first = next(c for c in v if abs(c) > 1e-12 * np.linalg.norm(v))
    assert first.imag == pytest.approx(0.0, abs=1e-10)
    assert first.real >= 0


def test_extract_beamformer_identity_and_zero():
    _, tight = extract_beamformer(np.eye(2, dtype=complex))
    assert tight == pytest.approx(0.5, rel=1e-9)
    v, tight = extract_beamformer(np.zeros((3, 3), dtype=complex))
    assert np.all(v == 0) and tight == 1.0


def test_energy_utility_trivials():
    rng = np.random.default_rng(9)
    prob = make_instance(2, rng, chat=0.1)
    sol = solve(prob)
    params = prob.params
    # all-zero solution scores zero
    sol_zero = solve(prob)
    sol_zero.V = np.zeros((2, 2), dtype=complex)
    sol_zero.p = 0.0
    assert energy_utility(sol_zero, prob) == 0.0
    # full powers at peak rate: 1 - eta * 2 = 0 at eta = 0.5
    sol_full = solve(prob)
    sol_full.V = np.eye(2, dtype=complex) * (params.pb_max_w / 2.0)
    sol_full.p = params.pv_max_w
    assert energy_utility(sol_full, prob) == pytest.approx(
        1.0 - params.eta * 2.0, abs=1e-12)
    assert 0.0 < energy_utility(sol, prob) < 1.0


def test_psd_ops_normal_map_inverse():
    rng = np.random.default_rng(10)
    for k in (2, 5):
        a = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
        v = a @ a.conj().T + np.eye(k)
        b = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
        z = b @ b.conj().T + np.eye(k)
        ops = _PsdOps(v, z)
        x = hermitize(rng.standard_normal((k, k))
                      + 1j * rng.standard_normal((k, k)))
        v_inv = np.linalg.inv(v)
        r = 0.5 * (v_inv @ x @ z + z @ x @ v_inv)
        assert np.allclose(ops.solve_normal(r), x, atol=1e-10)
