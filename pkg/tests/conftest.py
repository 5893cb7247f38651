"""Shared test helpers: independent parameter-vector construction, spectral
estimation and open-loop rollouts used as oracles across the suite."""

import math

import numpy as np
import pytest

from cpgrl import cpg
from cpgrl.feedback import FeedbackSignals


def make_param_vector(topo, freq_hz, amp, a_value, w, phi):
    """Build a parameter vector from mapped targets by inverting the maps
    manually (independent of cpg.init_cpg)."""
    v = np.zeros(topo.m_params)
    lay = topo.param_layout
    v[lay["freq_b"]] = np.log(np.expm1(np.asarray(freq_hz, dtype=float)))
    v[lay["amp_b"]] = np.log(np.expm1(np.asarray(amp, dtype=float)))
    v[lay["a_raw"]] = np.log(np.expm1(np.asarray(a_value, dtype=float) - cpg.A_FLOOR))
    v[lay["w_raw"]] = w
    v[lay["phi"]] = phi
    return v


def make_params(topo=None, freq_hz=1.5, amp=0.4, a_value=5.0, w=0.5, phi=math.pi):
    topo = topo or cpg.hopper_topology()
    return cpg.CpgParams(topo, make_param_vector(topo, freq_hz, amp, a_value, w, phi))


def open_loop_rollout(params, state, steps, dt=0.01, command=1.0):
    """Thread cpg_step with zero feedback; returns (outputs, states)."""
    cmd = cpg.CommandSignal(np.full(params.topology.d_cmd, command))
    fb = FeedbackSignals.zeros(params.topology.n_oscillators)
    outputs = np.zeros((steps, params.topology.n_oscillators))
    states = [state]
    for t in range(steps):
        state, x = cpg.cpg_step(state, params, cmd, fb, dt)
        outputs[t] = x
        states.append(state)
    return outputs, states


def dominant_frequency(signal, dt):
    """Peak frequency of a near-sinusoidal trace: Hann window, 8x zero-padded
    FFT and parabolic interpolation of the log-magnitude peak."""
    x = np.asarray(signal, dtype=float)
    x = x - x.mean()
    w = np.hanning(len(x))
    n = 1 << (int(np.ceil(np.log2(len(x)))) + 3)
    spec = np.abs(np.fft.rfft(x * w, n))
    k = int(np.argmax(spec))
    if 0 < k < len(spec) - 1:
        la, lb, lc = (np.log(spec[k - 1] + 1e-300), np.log(spec[k] + 1e-300),
                      np.log(spec[k + 1] + 1e-300))
        delta = 0.5 * (la - lc) / (la - 2.0 * lb + lc)
    else:
        delta = 0.0
    return (k + delta) / (n * dt)


def sine_amplitude(signal):
    """Amplitude of a zero-mean sinusoid from its RMS (exact over whole cycles)."""
    x = np.asarray(signal, dtype=float)
    x = x - x.mean()
    return math.sqrt(2.0) * float(np.sqrt(np.mean(x * x)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
