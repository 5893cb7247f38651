"""Oscillator network: hand-derived examples, statelessness, dynamics
properties and batched evaluation against the single-step oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (dominant_frequency, make_param_vector, make_params,
                      open_loop_rollout, sine_amplitude)
from cpgrl import autodiff as ad
from cpgrl import cpg
from cpgrl.errors import ContractViolationError
from cpgrl.feedback import FeedbackSignals

TOPO = cpg.hopper_topology()
CMD = cpg.CommandSignal(np.array([1.0]))
FB0 = FeedbackSignals.zeros(2)


def state_at(theta, r, theta_dot=None, r_dot=None, r_ddot=None):
    z = np.zeros(2)
    return cpg.CpgState(theta, theta_dot if theta_dot is not None else z,
                        r, r_dot if r_dot is not None else z,
                        r_ddot if r_ddot is not None else z)


# -- topology/type invariants ---------------------------------------------------

def test_topology_rejects_self_coupling():
    with pytest.raises(ContractViolationError):
        cpg.CpgTopology(2, np.array([[1, 1], [1, 0]]))


def test_topology_rejects_nonbinary():
    with pytest.raises(ContractViolationError):
        cpg.CpgTopology(2, np.array([[0, 2], [1, 0]]))


def test_param_layout_unique_and_in_range():
    topo = cpg.CpgTopology(3, np.ones((3, 3), dtype=int) - np.eye(3, dtype=int), d_cmd=2)
    seen = []
    for name, sl in topo.param_layout.items():
        seen.extend(range(sl.start, sl.stop))
    assert sorted(seen) == list(range(topo.m_params))


def test_hopper_param_count():
    assert TOPO.m_params == 14
    assert len(TOPO.edges) == 2


def test_state_rejects_nonfinite():
    with pytest.raises(ContractViolationError):
        state_at(np.array([0.0, np.nan]), np.ones(2))


def test_command_range_checked():
    with pytest.raises(ContractViolationError):
        cpg.CommandSignal(np.array([2.5]), d_max=2.0)
    cpg.CommandSignal(np.array([2.0]), d_max=2.0)


# -- derivative examples (Eq.-level hand evaluations) ----------------------------

def test_uncoupled_fixed_point():
    # nu = (1, 1) Hz, r on the intrinsic amplitude, no motion: the phase
    # advances at exactly 2*pi and the amplitude acceleration vanishes.
    params = make_params(TOPO, freq_hz=1.0, amp=0.4, a_value=1.0, w=0.0, phi=0.0)
    rho = params.intrinsic_amp(CMD.d)
    st_ = state_at(np.zeros(2), rho)
    d = cpg.cpg_derivatives(st_, params, CMD, FB0)
    assert np.allclose(d.theta_dot, 2 * math.pi, rtol=1e-12)
    assert np.allclose(d.r_ddot, 0.0, atol=1e-12)
    assert np.allclose(d.zeta, 0.0, atol=1e-12)


def test_equal_phases_zero_phi_no_coupling_effect():
    params = make_params(TOPO, freq_hz=1.0, amp=0.4, a_value=1.0, w=0.7, phi=0.0)
    st_ = state_at(np.array([1.1, 1.1]), np.ones(2))
    d = cpg.cpg_derivatives(st_, params, CMD, FB0)
    assert np.allclose(d.zeta, 0.0, atol=1e-12)


def test_quarter_phase_coupling_hand_case():
    # theta=(0, pi/2), w=0.5, phi=0, nu ~ 0, a=1, rho=1, r=(1,1):
    # zeta_1 = 0.5*sin(pi/2) = 0.5, zeta_2 = 0.5*sin(-pi/2) = -0.5
    v = make_param_vector(TOPO, freq_hz=1.0, amp=1.0, a_value=1.0, w=0.5, phi=0.0)
    v[TOPO.param_layout["freq_b"]] = -60.0  # softplus(-60) ~ 1e-26 Hz
    params = cpg.CpgParams(TOPO, v)
    st_ = state_at(np.array([0.0, math.pi / 2]), np.ones(2))
    d = cpg.cpg_derivatives(st_, params, CMD, FB0)
    assert np.allclose(d.theta_dot, [0.5, -0.5], atol=1e-12)
    assert np.allclose(d.r_ddot, 0.0, atol=1e-12)


def test_derivatives_use_previous_step_state_only():
    # the rates stored in the state must not affect the new derivatives
    params = make_params(TOPO)
    s1 = state_at(np.array([0.3, 2.0]), np.array([0.5, 0.2]))
    s2 = cpg.CpgState(s1.theta, np.array([9.0, -9.0]), s1.r, s1.r_dot, np.array([4.0, 4.0]))
    d1 = cpg.cpg_derivatives(s1, params, CMD, FB0)
    d2 = cpg.cpg_derivatives(s2, params, CMD, FB0)
    assert np.array_equal(d1.theta_dot, d2.theta_dot)
    assert np.array_equal(d1.r_ddot, d2.r_ddot)


def test_feedback_enters_rates_additively():
    params = make_params(TOPO)
    st_ = state_at(np.array([0.3, 2.0]), np.array([0.5, 0.2]))
    base = cpg.cpg_derivatives(st_, params, CMD, FB0)
    fb = FeedbackSignals(np.array([0.7, -0.2]), np.array([3.0, 1.0]))
    d = cpg.cpg_derivatives(st_, params, CMD, fb)
    assert np.allclose(d.theta_dot - base.theta_dot, fb.xi, atol=1e-12)
    assert np.allclose(d.r_ddot - base.r_ddot, fb.kappa, atol=1e-12)


def test_dimension_mismatch_rejected():
    params = make_params(TOPO)
    st_ = state_at(np.zeros(2), np.ones(2))
    with pytest.raises(ContractViolationError):
        cpg.cpg_derivatives(st_, params, CMD, FeedbackSignals.zeros(3))


# -- integration examples ---------------------------------------------------------

def test_integrate_constant_rate_exact():
    st_ = state_at(np.zeros(2), np.ones(2), theta_dot=np.full(2, 2 * math.pi))
    d = cpg.CpgDerivatives(np.full(2, 2 * math.pi), np.zeros(2), np.zeros(2))
    old = cpg.CpgDerivatives(st_.theta_dot, st_.r_ddot, np.zeros(2))
    out = cpg.cpg_integrate(st_, old, d, dt=0.01)
    assert np.array_equal(out.theta, np.full(2, 0.02 * math.pi))


def test_integrate_all_zero_rates_is_identity():
    st_ = state_at(np.array([0.4, 1.0]), np.array([0.3, 0.2]))
    zero = cpg.CpgDerivatives(np.zeros(2), np.zeros(2), np.zeros(2))
    out = cpg.cpg_integrate(st_, zero, zero, dt=0.5)
    assert np.array_equal(out.theta, st_.theta)
    assert np.array_equal(out.r, st_.r)
    assert np.array_equal(out.r_dot, st_.r_dot)


def test_integrate_trapezoid_hand_case():
    # r_ddot: 0 -> 2 over dt=0.1: r_dot gains 0.1, r gains (0 + 0.1)*0.05 = 0.005
    st_ = state_at(np.zeros(2), np.zeros(2))
    old = cpg.CpgDerivatives(np.zeros(2), np.zeros(2), np.zeros(2))
    new = cpg.CpgDerivatives(np.zeros(2), np.full(2, 2.0), np.zeros(2))
    out = cpg.cpg_integrate(st_, old, new, dt=0.1)
    assert np.allclose(out.r_dot, 0.1, atol=1e-15)
    assert np.allclose(out.r, 0.005, atol=1e-15)


def test_integrate_requires_positive_dt():
    st_ = state_at(np.zeros(2), np.zeros(2))
    zero = cpg.CpgDerivatives(np.zeros(2), np.zeros(2), np.zeros(2))
    with pytest.raises(ContractViolationError):
        cpg.cpg_integrate(st_, zero, zero, dt=0.0)


# -- output examples ---------------------------------------------------------------

def test_output_examples():
    assert np.allclose(cpg.cpg_output(state_at(np.zeros(2), np.ones(2))), 1.0)
    assert np.array_equal(cpg.cpg_output(state_at(np.array([0.7, 2.0]), np.zeros(2))), np.zeros(2))
    x = cpg.cpg_output(state_at(np.full(2, math.pi / 3), np.full(2, 2.0)))
    assert np.allclose(x, 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_output_bound(seed):
    rng = np.random.default_rng(seed)
    st_ = state_at(rng.uniform(-10, 10, 2), rng.uniform(-3, 3, 2))
    assert (np.abs(cpg.cpg_output(st_)) <= np.abs(st_.r) + 1e-15).all()


# -- step composition and statelessness ---------------------------------------------

def test_step_equals_composition():
    params = make_params(TOPO)
    st_ = state_at(np.array([0.3, 2.0]), np.array([0.5, 0.2]),
                   theta_dot=np.array([6.0, 5.0]), r_dot=np.array([0.1, -0.1]),
                   r_ddot=np.array([0.5, 0.3]))
    fb = FeedbackSignals(np.array([0.5, -0.5]), np.array([2.0, -2.0]))
    new, x = cpg.cpg_step(st_, params, CMD, fb, 0.01)
    derivs = cpg.cpg_derivatives(st_, params, CMD, fb)
    old = cpg.CpgDerivatives(st_.theta_dot, st_.r_ddot, np.zeros(2))
    expected = cpg.cpg_integrate(st_, old, derivs, 0.01)
    assert np.array_equal(new.theta, expected.theta)
    assert np.array_equal(new.r, expected.r)
    assert np.array_equal(x, cpg.cpg_output(expected))
    assert np.array_equal(new.theta_dot, derivs.theta_dot)
    assert np.array_equal(new.r_ddot, derivs.r_ddot)


def test_two_calls_equal_two_step_unroll_bitwise():
    params = make_params(TOPO)
    _, s0 = cpg.init_cpg(TOPO, seed=3)
    out2, _ = open_loop_rollout(params, s0, 2)
    s1, x1 = cpg.cpg_step(s0, params, CMD, FB0, 0.01)
    s2, x2 = cpg.cpg_step(s1, params, CMD, FB0, 0.01)
    assert np.array_equal(out2[0], x1)
    assert np.array_equal(out2[1], x2)


def test_external_threading_matches_internal_unroll_bitwise():
    # acceptance criterion 2 at module scale: 1000 steps, double precision
    params, s0 = cpg.init_cpg(TOPO, seed=11)
    outs_ext = np.zeros((1000, 2))
    s = s0
    for t in range(1000):
        s, x = cpg.cpg_step(s, params, CMD, FB0, 0.01)
        outs_ext[t] = x
    outs_int, states = open_loop_rollout(params, s0, 1000)
    assert np.array_equal(outs_ext, outs_int)
    assert np.array_equal(s.as_vector(), states[-1].as_vector())


def test_taped_step_forward_bitwise_and_grads():
    params = make_params(TOPO)
    _, s0 = cpg.init_cpg(TOPO, seed=5)
    fb = FeedbackSignals(np.array([0.3, -0.1]), np.array([1.0, 0.5]))

    direct_state, direct_x = cpg.cpg_step(s0, params, CMD, fb, 0.01)

    def taped(v):
        th, thd, rr, rd, rdd, x, _ = cpg.step_arrays(
            s0.theta, s0.theta_dot, s0.r, s0.r_dot, s0.r_ddot,
            v, TOPO, CMD.d, fb.xi, fb.kappa, 0.01)
        return ad.vsum(x)

    out, tape = ad.record_forward(taped, [params.v])
    assert out.value == np.sum(direct_x)  # bitwise
    rep = ad.finite_diff_check(taped, [params.v], h=1e-6, tol=1e-5)
    assert rep.passed, rep.max_rel_err


# -- open-loop dynamics (FFT oracle) ---------------------------------------------------

def test_open_loop_frequency_and_amplitude():
    # 10 s rollout at nu=1.5 Hz, rho=0.4: steady 1.5 Hz tone of amplitude 0.4
    params = make_params(TOPO, freq_hz=1.5, amp=0.4, a_value=5.0, w=0.5, phi=math.pi)
    s0 = state_at(np.array([0.3, 0.3 + math.pi]), np.full(2, 0.4))
    settle = 500
    outs, _ = open_loop_rollout(params, s0, settle + 1000)
    steady = outs[settle:, 0]
    assert abs(dominant_frequency(steady, 0.01) - 1.5) < 0.015
    assert abs(sine_amplitude(steady) - 0.4) < 1e-3


def test_amplitude_fixed_point_property():
    for a_value in (0.5, 2.0, 10.0):
        params = make_params(TOPO, a_value=a_value)
        rho = params.intrinsic_amp(CMD.d)
        d = cpg.cpg_derivatives(state_at(np.array([0.2, 1.0]), rho), params, CMD, FB0)
        assert np.allclose(d.r_ddot, 0.0, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(min_value=0.25, max_value=15.0),
       st.floats(min_value=-1.0, max_value=1.0))
def test_amplitude_convergence_within_20_over_a(a_value, delta):
    # critically damped second-order decay: within 1% of the perturbation
    # after 20/a seconds of simulated time at dt = 1 ms
    if abs(delta) < 1e-3:
        delta = 0.5
    params = make_params(TOPO, amp=0.4, a_value=a_value, w=0.0, phi=0.0)
    rho = params.intrinsic_amp(CMD.d)
    s = state_at(np.zeros(2), rho + delta)
    dt = 1e-3
    steps = int(math.ceil(20.0 / a_value / dt))
    cmd = CMD
    for _ in range(steps):
        s, _ = cpg.cpg_step(s, params, cmd, FB0, dt)
    assert np.all(np.abs(s.r - rho) < 0.01 * abs(delta))


def test_amplitude_bounded_over_long_rollout():
    # 1e5 open-loop steps with random valid parameters stay within
    # 10x the largest intrinsic amplitude (raw array path for speed)
    for seed in range(3):
        params, s0 = cpg.init_cpg(TOPO, seed=seed)
        bound = 10.0 * float(np.max(params.intrinsic_amp(CMD.d)))
        th, thd = s0.theta, s0.theta_dot
        r, rd, rdd = s0.r, s0.r_dot, s0.r_ddot
        zero = np.zeros(2)
        r_max = 0.0
        for _ in range(100_000):
            th, thd, r, rd, rdd, _, _ = cpg.step_arrays(
                th, thd, r, rd, rdd, params.v, TOPO, CMD.d, zero, zero, 0.01)
            r_max = max(r_max, float(np.max(np.abs(r))))
        assert np.isfinite(r).all() and r_max <= bound


def test_label_swap_symmetry():
    # swapping oscillator labels under symmetric parameters swaps trajectories
    params = make_params(TOPO, freq_hz=1.3, amp=0.5, a_value=4.0, w=0.4, phi=0.0)
    sa = state_at(np.array([0.2, 1.7]), np.array([0.5, 0.3]))
    sb = state_at(np.array([1.7, 0.2]), np.array([0.3, 0.5]))
    outs_a, _ = open_loop_rollout(params, sa, 200)
    outs_b, _ = open_loop_rollout(params, sb, 200)
    assert np.allclose(outs_a, outs_b[:, ::-1], atol=1e-12)


# -- batched stepping ------------------------------------------------------------------

def _rand_state(rng):
    return cpg.CpgState(rng.uniform(0, 2 * math.pi, 2), rng.normal(size=2),
                        rng.uniform(0.1, 0.8, 2), rng.normal(scale=0.2, size=2),
                        rng.normal(size=2))


def test_batch_size_one_reduces_to_single():
    params = make_params(TOPO)
    rng = np.random.default_rng(7)
    s = _rand_state(rng)
    fb = FeedbackSignals(rng.normal(size=2), rng.normal(size=2))
    batch_states, batch_x = cpg.batch_cpg_step([s], params, [CMD], [fb], 0.01)
    single_state, single_x = cpg.cpg_step(s, params, CMD, fb, 0.01)
    assert np.allclose(batch_x[0], single_x, atol=1e-12, rtol=0)
    assert np.allclose(batch_states[0].as_vector(), single_state.as_vector(),
                       atol=1e-12, rtol=0)


def test_batch_identical_inputs_identical_outputs():
    params = make_params(TOPO)
    rng = np.random.default_rng(8)
    s = _rand_state(rng)
    fb = FeedbackSignals(rng.normal(size=2), rng.normal(size=2))
    states, xs = cpg.batch_cpg_step([s] * 8, params, [CMD] * 8, [fb] * 8, 0.01)
    assert all(np.array_equal(xs[i], xs[0]) for i in range(8))
    assert all(np.array_equal(states[i].as_vector(), states[0].as_vector())
               for i in range(8))


def test_batch_matches_loop_oracle():
    params = make_params(TOPO)
    rng = np.random.default_rng(9)
    states = [_rand_state(rng) for _ in range(4)]
    fbs = [FeedbackSignals(rng.normal(size=2), rng.normal(size=2)) for _ in range(4)]
    cmds = [cpg.CommandSignal(np.array([c])) for c in rng.uniform(0, 2, 4)]
    bstates, bx = cpg.batch_cpg_step(states, params, cmds, fbs, 0.01)
    for i in range(4):
        s_i, x_i = cpg.cpg_step(states[i], params, cmds[i], fbs[i], 0.01)
        assert np.allclose(bx[i], x_i, atol=1e-12, rtol=0)
        assert np.allclose(bstates[i].as_vector(), s_i.as_vector(), atol=1e-12, rtol=0)


def test_batch_ragged_rejected():
    params = make_params(TOPO)
    rng = np.random.default_rng(10)
    states = [_rand_state(rng) for _ in range(3)]
    fbs = [FeedbackSignals.zeros(2)] * 2
    with pytest.raises(ContractViolationError):
        cpg.batch_cpg_step(states, params, [CMD] * 3, fbs, 0.01)


# -- initialization ----------------------------------------------------------------------

def test_init_deterministic():
    p1, s1 = cpg.init_cpg(TOPO, seed=42)
    p2, s2 = cpg.init_cpg(TOPO, seed=42)
    assert np.array_equal(p1.v, p2.v)
    assert np.array_equal(s1.as_vector(), s2.as_vector())


def test_init_zero_coupling():
    params, _ = cpg.init_cpg(TOPO, seed=0, init_config=cpg.CpgInitConfig(zero_coupling=True))
    assert np.array_equal(params.w_raw, np.zeros(2))


def test_init_mapped_ranges():
    for seed in range(20):
        params, state = cpg.init_cpg(TOPO, seed=seed)
        nu = params.intrinsic_freq(np.array([1.0]))
        rho = params.intrinsic_amp(np.array([1.0]))
        assert ((nu >= 0.5) & (nu <= 3.0)).all()
        assert ((rho >= 0.1) & (rho <= 1.0)).all()
        assert np.array_equal(state.r, rho)
        assert (state.theta >= 0).all() and (state.theta < 2 * math.pi).all()
        assert np.array_equal(state.theta_dot, np.zeros(2))
        assert (cpg.softplus_inv(5.0 - cpg.A_FLOOR) == params.view("a_raw")).all()


def test_params_positivity_structural():
    rng = np.random.default_rng(0)
    for _ in range(50):
        params = cpg.CpgParams(TOPO, rng.normal(scale=5.0, size=TOPO.m_params))
        d = np.array([rng.uniform(0, 2)])
        assert (params.convergence_a() > 0).all()
        assert (params.intrinsic_freq(d) >= 0).all()
        assert (params.intrinsic_amp(d) >= 0).all()
