"""Discrete-time network of coupled Hopf-style oscillators.

Each oscillator carries a phase `theta` and an amplitude `r`.  Per step the
phase rate is the intrinsic frequency plus coupling and phase feedback,

    theta_dot_i = 2*pi*nu_i(d) + zeta_i + xi_i
    zeta_i      = sum_j adj[i,j] * r_j * w_ij * sin(theta_j - theta_i - phi_ij)

and the amplitude follows a critically damped second-order law toward the
intrinsic amplitude rho_i(d),

    r_ddot_i = a_i * (a_i/4 * (rho_i(d) - r_i) - r_dot_i) + kappa_i.

State evolves by trapezoidal integration of the previous and current rates.
All right-hand sides read only the incoming (previous-step) state, so a step
is a pure function of (state, params, command, feedback): callers thread the
state explicitly and nothing is ever unrolled.

Trainable parameters live in one flat vector `v`; named views are realized as
index maps into `v`, and the functions below accept either numpy arrays or
autodiff `Var` handles (see `autodiff`), so the same code serves fast rollouts
and taped gradient computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractViolationError

A_FLOOR = 0.1  # additive floor on the amplitude-convergence constant


def softplus_inv(y: float) -> float:
    """Inverse of log(1 + e^x); y must be positive."""
    return float(np.log(np.expm1(y)))


@dataclass(frozen=True, eq=False)
class CpgTopology:
    """Wiring of the oscillator network and the layout of its parameter vector.

    `adjacency[i, j] == 1` means oscillator j couples into i.  The parameter
    vector holds, in order: frequency-map slopes (N*d_cmd) and intercepts (N),
    amplitude-map slopes (N*d_cmd) and intercepts (N), raw convergence
    constants (N), coupling weights (one per adjacency edge) and coupling
    phases (one per edge).
    """

    n_oscillators: int
    adjacency: np.ndarray
    d_cmd: int = 1
    edges: np.ndarray = field(init=False)
    param_layout: dict = field(init=False)
    m_params: int = field(init=False)

    def __post_init__(self):
        n = self.n_oscillators
        adj = np.asarray(self.adjacency, dtype=np.int64)
        if n < 1:
            raise ContractViolationError("need at least one oscillator")
        if adj.shape != (n, n):
            raise ContractViolationError(f"adjacency must be {n}x{n}, got {adj.shape}")
        if not np.isin(adj, (0, 1)).all():
            raise ContractViolationError("adjacency must be binary")
        if np.trace(adj) != 0:
            raise ContractViolationError("adjacency diagonal must be zero (no self-coupling)")
        if self.d_cmd < 1:
            raise ContractViolationError("command dimension must be >= 1")
        object.__setattr__(self, "adjacency", adj)
        edges = np.argwhere(adj == 1)
        object.__setattr__(self, "edges", edges)

        sizes = {
            "freq_w": n * self.d_cmd,
            "freq_b": n,
            "amp_w": n * self.d_cmd,
            "amp_b": n,
            "a_raw": n,
            "w_raw": len(edges),
            "phi": len(edges),
        }
        layout = {}
        pos = 0
        for name, size in sizes.items():
            layout[name] = slice(pos, pos + size)
            pos += size
        object.__setattr__(self, "param_layout", layout)
        object.__setattr__(self, "m_params", pos)

        # pre-shaped index maps into v (the "extraction" step done by indexing)
        idx = {
            "freq_w": np.arange(n * self.d_cmd).reshape(n, self.d_cmd) + layout["freq_w"].start,
            "freq_b": np.arange(n) + layout["freq_b"].start,
            "amp_w": np.arange(n * self.d_cmd).reshape(n, self.d_cmd) + layout["amp_w"].start,
            "amp_b": np.arange(n) + layout["amp_b"].start,
            "a_raw": np.arange(n) + layout["a_raw"].start,
        }
        w_full = np.zeros((n, n), dtype=np.int64)
        phi_full = np.zeros((n, n), dtype=np.int64)
        for e, (i, j) in enumerate(edges):
            w_full[i, j] = layout["w_raw"].start + e
            phi_full[i, j] = layout["phi"].start + e
        idx["w_full"] = w_full
        idx["phi_full"] = phi_full
        object.__setattr__(self, "_idx", idx)
        object.__setattr__(self, "coupling_mask", adj.astype(np.float64))

    def index(self, name: str) -> np.ndarray:
        return self._idx[name]


def hopper_topology(d_cmd: int = 1) -> CpgTopology:
    """Two oscillators (hip, knee) with full bidirectional coupling."""
    return CpgTopology(2, np.array([[0, 1], [1, 0]]), d_cmd=d_cmd)


@dataclass(frozen=True, eq=False)
class CpgParams:
    """Flat trainable vector plus named views.

    Positivity of the convergence constant and of the mapped intrinsic
    frequency/amplitude is structural: all three pass through softplus.
    """

    topology: CpgTopology
    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.shape != (self.topology.m_params,):
            raise ContractViolationError(
                f"parameter vector must have shape ({self.topology.m_params},), got {v.shape}"
            )
        object.__setattr__(self, "v", v)

    def view(self, name: str) -> np.ndarray:
        return self.v[self.topology.param_layout[name]]

    @property
    def w_raw(self) -> np.ndarray:
        return self.view("w_raw")

    @property
    def phi(self) -> np.ndarray:
        return self.view("phi")

    def convergence_a(self) -> np.ndarray:
        return ad.softplus(self.view("a_raw")) + A_FLOOR

    def intrinsic_freq(self, d) -> np.ndarray:
        """nu(d) in Hz, strictly positive."""
        nu, _, _ = mapped_rates(self.v, self.topology, np.asarray(d, dtype=np.float64))
        return nu

    def intrinsic_amp(self, d) -> np.ndarray:
        """rho(d), strictly positive."""
        _, rho, _ = mapped_rates(self.v, self.topology, np.asarray(d, dtype=np.float64))
        return rho


@dataclass(frozen=True, eq=False)
class CommandSignal:
    """Drive input; constant within an episode for the hopper."""

    d: np.ndarray
    d_max: float = 2.0

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d, dtype=np.float64))
        object.__setattr__(self, "d", d)
        if not np.isfinite(d).all():
            raise ContractViolationError("command entries must be finite")
        if (d < 0).any() or (d > self.d_max).any():
            raise ContractViolationError(f"command entries must lie in [0, {self.d_max}]")


@dataclass(frozen=True, eq=False)
class CpgState:
    """Oscillator state at one time step; stores the step's own rates so the
    next step can form trapezoids without re-deriving them."""

    theta: np.ndarray
    theta_dot: np.ndarray
    r: np.ndarray
    r_dot: np.ndarray
    r_ddot: np.ndarray

    def __post_init__(self):
        arrays = {}
        n = None
        for name in ("theta", "theta_dot", "r", "r_dot", "r_ddot"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.ndim != 1:
                raise ContractViolationError(f"{name} must be 1-D, got shape {a.shape}")
            n = a.shape[0] if n is None else n
            if a.shape[0] != n:
                raise ContractViolationError("state arrays must share one length")
            if not np.isfinite(a).all():
                raise ContractViolationError(f"{name} contains non-finite entries")
            arrays[name] = a
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.theta_dot, self.r, self.r_dot, self.r_ddot])

    @staticmethod
    def from_vector(vec: np.ndarray) -> "CpgState":
        vec = np.asarray(vec, dtype=np.float64)
        n = vec.shape[0] // 5
        return CpgState(*(vec[i * n:(i + 1) * n] for i in range(5)))


@dataclass(frozen=True, eq=False)
class CpgDerivatives:
    """Rates produced by one evaluation of the oscillator equations; `zeta`
    is the coupling contribution already contained in `theta_dot`."""

    theta_dot: np.ndarray
    r_ddot: np.ndarray
    zeta: np.ndarray


# -- array-level core (numpy or autodiff Var) ---------------------------------

def mapped_rates(v, topo: CpgTopology, d):
    """Intrinsic frequency nu(d), amplitude rho(d) and convergence constant a.

    `d` is (d_cmd,) for a single stream or (B, d_cmd) batched; outputs follow.
    """
    fw = ad.gather(v, topo.index("freq_w"))      # (N, d_cmd)
    fb = ad.gather(v, topo.index("freq_b"))
    aw = ad.gather(v, topo.index("amp_w"))
    ab = ad.gather(v, topo.index("amp_b"))
    nu = ad.softplus(ad.matvec(d, ad.transpose(fw)) + fb)
    rho = ad.softplus(ad.matvec(d, ad.transpose(aw)) + ab)
    a = ad.softplus(ad.gather(v, topo.index("a_raw"))) + A_FLOOR
    return nu, rho, a


def _coupling(theta, r, w_masked, phi_full, n):
    """zeta_i = sum_j w_masked[i,j] * r_j * sin(theta_j - theta_i - phi[i,j])."""
    if len(theta.shape) == 2:
        b = theta.shape[0]
        tj = ad.reshape(theta, (b, 1, n))
        ti = ad.reshape(theta, (b, n, 1))
        rj = ad.reshape(r, (b, 1, n))
    else:
        tj = ad.reshape(theta, (1, n))
        ti = ad.reshape(theta, (n, 1))
        rj = ad.reshape(r, (1, n))
    return ad.vsum(w_masked * rj * ad.sin(tj - ti - phi_full), axis=-1)


def derivative_arrays(theta, r, r_dot, v, topo: CpgTopology, d, xi, kappa):
    """Phase and amplitude rates from previous-step state; returns
    (theta_dot, r_ddot, zeta).  Shapes are (N,) or batched (B, N)."""
    nu, rho, a = mapped_rates(v, topo, d)
    w_masked = ad.gather(v, topo.index("w_full")) * topo.coupling_mask
    phi_full = ad.gather(v, topo.index("phi_full"))
    zeta = _coupling(theta, r, w_masked, phi_full, topo.n_oscillators)
    theta_dot = (2.0 * math.pi) * nu + zeta + xi
    r_ddot = a * ((a / 4.0) * (rho - r) - r_dot) + kappa
    return theta_dot, r_ddot, zeta


def integrate_arrays(theta, r, r_dot, theta_dot_old, r_ddot_old,
                     theta_dot_new, r_ddot_new, dt):
    """Trapezoidal update; the amplitude integral uses the just-updated rate."""
    half = dt / 2.0
    theta_new = theta + (theta_dot_old + theta_dot_new) * half
    r_dot_new = r_dot + (r_ddot_old + r_ddot_new) * half
    r_new = r + (r_dot + r_dot_new) * half
    return theta_new, r_new, r_dot_new


def output_arrays(theta, r):
    return r * ad.cos(theta)


def step_arrays(theta, theta_dot, r, r_dot, r_ddot, v, topo, d, xi, kappa, dt):
    """One full step on raw arrays; returns the five new state arrays, the
    burst output and the coupling term."""
    theta_dot_new, r_ddot_new, zeta = derivative_arrays(theta, r, r_dot, v, topo, d, xi, kappa)
    theta_new, r_new, r_dot_new = integrate_arrays(
        theta, r, r_dot, theta_dot, r_ddot, theta_dot_new, r_ddot_new, dt
    )
    x = output_arrays(theta_new, r_new)
    return theta_new, theta_dot_new, r_new, r_dot_new, r_ddot_new, x, zeta


# -- public single-stream operations ------------------------------------------

def _check_dims(state: CpgState, params: CpgParams, fb_xi, fb_kappa):
    n = params.topology.n_oscillators
    if state.n != n:
        raise ContractViolationError(f"state has {state.n} oscillators, params expect {n}")
    if np.shape(fb_xi) != (n,) or np.shape(fb_kappa) != (n,):
        raise ContractViolationError(f"feedback must provide {n} phase and {n} amplitude entries")


def cpg_derivatives(state: CpgState, params: CpgParams, cmd: CommandSignal, fb) -> CpgDerivatives:
    """Evaluate the oscillator equations at the incoming state."""
    _check_dims(state, params, fb.xi, fb.kappa)
    theta_dot, r_ddot, zeta = derivative_arrays(
        state.theta, state.r, state.r_dot, params.v, params.topology, cmd.d, fb.xi, fb.kappa
    )
    return CpgDerivatives(theta_dot, r_ddot, zeta)


def cpg_integrate(state: CpgState, old_derivs: CpgDerivatives,
                  new_derivs: CpgDerivatives, dt: float) -> CpgState:
    """Trapezoidal state update; stores the new rates in the returned state."""
    if dt <= 0:
        raise ContractViolationError("dt must be positive")
    theta, r, r_dot = integrate_arrays(
        state.theta, state.r, state.r_dot,
        old_derivs.theta_dot, old_derivs.r_ddot,
        new_derivs.theta_dot, new_derivs.r_ddot, dt,
    )
    return CpgState(theta, new_derivs.theta_dot, r, r_dot, new_derivs.r_ddot)


def cpg_output(state: CpgState) -> np.ndarray:
    """Burst signal r*cos(theta), the desired-position reference."""
    return output_arrays(state.theta, state.r)


def cpg_step(state: CpgState, params: CpgParams, cmd: CommandSignal, fb, dt: float):
    """Derivatives, integration and output in one call.  The previous step's
    rates are read from the incoming state; the caller owns and threads it."""
    new_derivs = cpg_derivatives(state, params, cmd, fb)
    old_derivs = CpgDerivatives(state.theta_dot, state.r_ddot, np.zeros(state.n))
    new_state = cpg_integrate(state, old_derivs, new_derivs, dt)
    return new_state, cpg_output(new_state)


def batch_cpg_step(states, params: CpgParams, cmds, fbs, dt: float):
    """Apply cpg_step elementwise over a batch sharing one parameter set."""
    b = len(states)
    if b < 1:
        raise ContractViolationError("batch must contain at least one element")
    if len(cmds) != b or len(fbs) != b:
        raise ContractViolationError(
            f"ragged batch: {b} states, {len(cmds)} commands, {len(fbs)} feedbacks"
        )
    topo = params.topology
    for s, f in zip(states, fbs):
        _check_dims(s, params, f.xi, f.kappa)
    theta = np.stack([s.theta for s in states])
    theta_dot = np.stack([s.theta_dot for s in states])
    r = np.stack([s.r for s in states])
    r_dot = np.stack([s.r_dot for s in states])
    r_ddot = np.stack([s.r_ddot for s in states])
    d = np.stack([np.atleast_1d(c.d) for c in cmds])
    xi = np.stack([np.asarray(f.xi, dtype=np.float64) for f in fbs])
    kappa = np.stack([np.asarray(f.kappa, dtype=np.float64) for f in fbs])
    th, thd, rr, rd, rdd, x, _ = step_arrays(
        theta, theta_dot, r, r_dot, r_ddot, params.v, topo, d, xi, kappa, dt
    )
    new_states = [CpgState(th[i], thd[i], rr[i], rd[i], rdd[i]) for i in range(b)]
    return new_states, x


# -- initialization ------------------------------------------------------------

@dataclass(frozen=True)
class CpgInitConfig:
    """Sampling plan for a fresh parameter vector.

    Intercepts are set so the mapped frequency/amplitude hit their targets
    exactly at the reference command; slopes and couplings are small random.
    """

    freq_at_ref: float = 1.5      # Hz at the reference command
    amp_at_ref: float = 0.4
    a_value: float = 5.0
    slope_std: float = 0.1
    coupling_std: float = 0.1
    zero_coupling: bool = False
    ref_cmd: float = 1.0

    def __post_init__(self):
        if self.freq_at_ref <= 0 or self.amp_at_ref <= 0 or self.a_value <= A_FLOOR:
            raise ContractViolationError("init targets must be positive (a above its floor)")


def init_cpg(topology: CpgTopology, seed, init_config: CpgInitConfig | None = None):
    """Draw parameters per `init_config` and a start state on the oscillators'
    intrinsic-amplitude fixed point with uniformly random phases."""
    cfg = init_config or CpgInitConfig()
    rng = np.random.default_rng(seed)
    n, dc = topology.n_oscillators, topology.d_cmd
    d_ref = np.full(dc, cfg.ref_cmd)

    v = np.zeros(topology.m_params)
    lay = topology.param_layout
    freq_w = rng.normal(0.0, cfg.slope_std, size=(n, dc))
    amp_w = rng.normal(0.0, cfg.slope_std, size=(n, dc))
    v[lay["freq_w"]] = freq_w.ravel()
    v[lay["freq_b"]] = softplus_inv(cfg.freq_at_ref) - freq_w @ d_ref
    v[lay["amp_w"]] = amp_w.ravel()
    v[lay["amp_b"]] = softplus_inv(cfg.amp_at_ref) - amp_w @ d_ref
    v[lay["a_raw"]] = softplus_inv(cfg.a_value - A_FLOOR)
    n_edges = len(topology.edges)
    if not cfg.zero_coupling:
        v[lay["w_raw"]] = rng.normal(0.0, cfg.coupling_std, size=n_edges)
    v[lay["phi"]] = rng.uniform(-math.pi, math.pi, size=n_edges)
    params = CpgParams(topology, v)

    theta0 = rng.uniform(0.0, 2.0 * math.pi, size=n)
    r0 = params.intrinsic_amp(d_ref)
    zeros = np.zeros(n)
    state = CpgState(theta0, zeros, r0, zeros, zeros)
    return params, state


def reset_state(params: CpgParams, rng, ref_cmd) -> CpgState:
    """Fresh episode state: random phases, amplitudes on rho(d), zero rates."""
    n = params.topology.n_oscillators
    theta0 = rng.uniform(0.0, 2.0 * math.pi, size=n)
    r0 = params.intrinsic_amp(np.atleast_1d(ref_cmd))
    zeros = np.zeros(n)
    return CpgState(theta0, zeros, r0, zeros, zeros)
