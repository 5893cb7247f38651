"""Single-leg vertical hopper: a 2-joint leg on a frictionless vertical slider.

Minimal-coordinate model with three degrees of freedom (slider height `z`,
hip angle `q1` from straight-down, knee angle `q2` relative to the thigh) and
point masses at the slider and link midpoints.  Ground contact on the foot
point is a one-sided spring-damper with regularized Coulomb friction.  Motors
track desired joint positions with PD torque, hard-clipped to the actuator
torque limit; joint velocities are hard-clipped to the actuator speed limit.

The control step runs `substeps` RK4 integrations of the closed-form
equations of motion (derived from the Lagrangian of the three point masses;
the test suite re-derives them symbolically as an independent oracle).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, PhysicsFaultError
from .feedback import Observation

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is an install requirement
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@dataclass(frozen=True)
class HopperConfig:
    """Physical and actuation constants; defaults model one ANYmal-like leg."""

    body_mass: float = 1.02      # slider-mounted body (kg)
    thigh_mass: float = 1.40
    shank_mass: float = 1.00
    thigh_len: float = 0.25      # m
    shank_len: float = 0.33
    gravity: float = 9.81
    torque_limit: float = 40.0   # N*m per joint
    joint_vel_limit: float = 15.0  # rad/s per joint
    contact_stiffness: float = 1.0e5   # N/m
    contact_damping: float = 1.0e3     # N*s/m
    friction_mu: float = 0.8
    slip_vel_eps: float = 0.01   # m/s scale of the friction regularization
    kp: float = 60.0
    kd: float = 1.5
    dt_physics: float = 1.0e-3
    substeps: int = 10
    z_min: float = 0.1
    z_max: float = 3.0
    horizon: int = 1000
    reset_pose: tuple[float, float] = (-0.2, 0.6)
    reset_perturb: float = 0.05

    def __post_init__(self):
        positive = ("body_mass", "thigh_mass", "shank_mass", "thigh_len", "shank_len",
                    "gravity", "torque_limit", "joint_vel_limit", "contact_stiffness",
                    "contact_damping", "friction_mu", "slip_vel_eps", "kp", "kd",
                    "dt_physics")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ContractViolationError(f"hopper.{name} must be > 0")
        if self.substeps < 1 or self.horizon < 1:
            raise ContractViolationError("hopper.substeps and hopper.horizon must be >= 1")
        if self.z_min <= 0 or self.z_max <= self.z_min:
            raise ContractViolationError("need 0 < z_min < z_max")

    @property
    def total_mass(self) -> float:
        return self.body_mass + self.thigh_mass + self.shank_mass

    @property
    def dt_control(self) -> float:
        return self.dt_physics * self.substeps

    def vector(self) -> np.ndarray:
        """Packed constants for the compiled kernel (see _C* indices)."""
        return np.array([
            self.body_mass, self.thigh_mass, self.shank_mass,
            self.thigh_len, self.shank_len, self.gravity,
            self.torque_limit, self.joint_vel_limit,
            self.contact_stiffness, self.contact_damping,
            self.friction_mu, self.slip_vel_eps,
            self.kp, self.kd,
        ])


@dataclass(frozen=True)
class RewardConfig:
    """Weights of the five reward terms: c1 scales the upward-velocity bonus,
    c2..c5 are non-positive penalty weights (tracking error, joint speed,
    torque, foot slip)."""

    c1: float = 2.0
    c2: float = -0.5
    c3: float = -0.005
    c4: float = -0.0005
    c5: float = -0.1

    def __post_init__(self):
        if self.c1 < 0:
            raise ContractViolationError("reward.c1 must be >= 0")
        for name in ("c2", "c3", "c4", "c5"):
            if getattr(self, name) > 0:
                raise ContractViolationError(f"reward.{name} must be <= 0")


@dataclass(frozen=True, eq=False)
class HopperState:
    z: float
    z_dot: float
    q: np.ndarray
    q_dot: np.ndarray
    foot_contact: bool
    foot_pos: np.ndarray  # (x, z) of the foot point

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.float64))
        object.__setattr__(self, "q_dot", np.asarray(self.q_dot, dtype=np.float64))
        object.__setattr__(self, "foot_pos", np.asarray(self.foot_pos, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class StepResult:
    observation: Observation
    reward: float
    reward_terms: np.ndarray
    done: bool
    info: dict


# config-vector indices used inside the kernel
_CMB, _CMT, _CMS, _CLT, _CLS, _CG, _CTAU, _CVEL, _CKC, _CDC, _CMU, _CSEPS, _CKP, _CKD = range(14)


@njit(cache=True)
def _accel(y, tau1, tau2, c):
    """Accelerations (ddz, ddq1, ddq2) plus contact diagnostics at state y."""
    mb, mt, ms = c[_CMB], c[_CMT], c[_CMS]
    lt, ls, g = c[_CLT], c[_CLS], c[_CG]
    a1 = 0.5 * lt
    a2 = 0.5 * ls
    q1, q2 = y[1], y[2]
    dz, dq1, dq2 = y[3], y[4], y[5]
    s1, c1 = np.sin(q1), np.cos(q1)
    s2, c2 = np.sin(q2), np.cos(q2)
    s12, c12 = np.sin(q1 + q2), np.cos(q1 + q2)

    m00 = mb + mt + ms
    m01 = mt * a1 * s1 + ms * (lt * s1 + a2 * s12)
    m02 = ms * a2 * s12
    m11 = mt * a1 * a1 + ms * (lt * lt + a2 * a2 + 2.0 * lt * a2 * c2)
    m12 = ms * (a2 * a2 + lt * a2 * c2)
    m22 = ms * a2 * a2

    h0 = ms * a2 * (dq1 + dq2) ** 2 * c12 + (mt * a1 + ms * lt) * dq1 * dq1 * c1 + m00 * g
    h1 = (-lt * a2 * ms * (2.0 * dq1 * dq2 + dq2 * dq2) * s2
          + g * s1 * (lt * ms + a1 * mt) + g * a2 * ms * s12)
    h2 = ms * a2 * (lt * dq1 * dq1 * s2 + g * s12)

    # foot point and its velocity, for the one-sided contact force
    foot_z = y[0] - lt * c1 - ls * c12
    jx1 = lt * c1 + ls * c12
    jx2 = ls * c12
    jz1 = lt * s1 + ls * s12
    jz2 = ls * s12
    vfx = jx1 * dq1 + jx2 * dq2
    vfz = dz + jz1 * dq1 + jz2 * dq2
    fz = 0.0
    fx = 0.0
    if foot_z < 0.0:
        fz = -c[_CKC] * foot_z - c[_CDC] * vfz
        if fz < 0.0:
            fz = 0.0
        sat = vfx / c[_CSEPS]
        if sat > 1.0:
            sat = 1.0
        elif sat < -1.0:
            sat = -1.0
        fx = -c[_CMU] * fz * sat

    b0 = fz - h0
    b1 = tau1 + jx1 * fx + jz1 * fz - h1
    b2 = tau2 + jx2 * fx + jz2 * fz - h2

    # symmetric 3x3 solve via the adjugate
    c00 = m11 * m22 - m12 * m12
    c01 = m02 * m12 - m01 * m22
    c02 = m01 * m12 - m02 * m11
    det = m00 * c00 + m01 * c01 + m02 * c02
    c11 = m00 * m22 - m02 * m02
    c12_ = m01 * m02 - m00 * m12
    c22 = m00 * m11 - m01 * m01
    ddz = (c00 * b0 + c01 * b1 + c02 * b2) / det
    ddq1 = (c01 * b0 + c11 * b1 + c12_ * b2) / det
    ddq2 = (c02 * b0 + c12_ * b1 + c22 * b2) / det
    return ddz, ddq1, ddq2, fz, fx, vfx, foot_z


@njit(cache=True)
def _rk4_substep(y, tau1, tau2, c, dt):
    k1 = _deriv(y, tau1, tau2, c)
    k2 = _deriv(y + 0.5 * dt * k1, tau1, tau2, c)
    k3 = _deriv(y + 0.5 * dt * k2, tau1, tau2, c)
    k4 = _deriv(y + dt * k3, tau1, tau2, c)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _deriv(y, tau1, tau2, c):
    ddz, ddq1, ddq2, _, _, _, _ = _accel(y, tau1, tau2, c)
    out = np.empty(6)
    out[0] = y[3]
    out[1] = y[4]
    out[2] = y[5]
    out[3] = ddz
    out[4] = ddq1
    out[5] = ddq2
    return out


@njit(cache=True)
def _control_step(y, pdes1, pdes2, c, dt, nsub):
    """`nsub` PD-torque RK4 substeps; returns (y', mean torques, fault flag)."""
    tau1_sum = 0.0
    tau2_sum = 0.0
    fault = False
    for _ in range(nsub):
        tau1 = c[_CKP] * (pdes1 - y[1]) - c[_CKD] * y[4]
        tau2 = c[_CKP] * (pdes2 - y[2]) - c[_CKD] * y[5]
        lim = c[_CTAU]
        if tau1 > lim:
            tau1 = lim
        elif tau1 < -lim:
            tau1 = -lim
        if tau2 > lim:
            tau2 = lim
        elif tau2 < -lim:
            tau2 = -lim
        tau1_sum += tau1
        tau2_sum += tau2
        y = _rk4_substep(y, tau1, tau2, c, dt)
        vlim = c[_CVEL]
        for j in range(4, 6):
            if y[j] > vlim:
                y[j] = vlim
            elif y[j] < -vlim:
                y[j] = -vlim
        ok = True
        for j in range(6):
            if not np.isfinite(y[j]):
                ok = False
        if not ok:
            fault = True
            break
    return y, tau1_sum / nsub, tau2_sum / nsub, fault


# -- kinematics and diagnostics ------------------------------------------------

def foot_position(cfg: HopperConfig, z: float, q: np.ndarray) -> np.ndarray:
    q1, q2 = q
    return np.array([
        cfg.thigh_len * np.sin(q1) + cfg.shank_len * np.sin(q1 + q2),
        z - cfg.thigh_len * np.cos(q1) - cfg.shank_len * np.cos(q1 + q2),
    ])

def foot_velocity(cfg: HopperConfig, z_dot: float, q: np.ndarray, q_dot: np.ndarray) -> np.ndarray:
    q1, q2 = q
    jx1 = cfg.thigh_len * np.cos(q1) + cfg.shank_len * np.cos(q1 + q2)
    jx2 = cfg.shank_len * np.cos(q1 + q2)
    jz1 = cfg.thigh_len * np.sin(q1) + cfg.shank_len * np.sin(q1 + q2)
    jz2 = cfg.shank_len * np.sin(q1 + q2)
    return np.array([
        jx1 * q_dot[0] + jx2 * q_dot[1],
        z_dot + jz1 * q_dot[0] + jz2 * q_dot[1],
    ])


def contact_normal_force(cfg: HopperConfig, foot_z: float, foot_vz: float) -> float:
    """One-sided spring-damper normal force: >= 0, exactly 0 out of contact."""
    if foot_z >= 0.0:
        return 0.0
    return max(-cfg.contact_stiffness * foot_z - cfg.contact_damping * foot_vz, 0.0)


def standing_height(cfg: HopperConfig, q: np.ndarray) -> float:
    """Slider height that puts the foot exactly on the ground for pose q."""
    return cfg.thigh_len * np.cos(q[0]) + cfg.shank_len * np.cos(q[0] + q[1])


def mechanical_energy(cfg: HopperConfig, state: HopperState) -> float:
    """Kinetic plus gravitational energy (no contact term); for integrator tests."""
    mb, mt, ms = cfg.body_mass, cfg.thigh_mass, cfg.shank_mass
    lt, ls = cfg.thigh_len, cfg.shank_len
    a1, a2 = 0.5 * lt, 0.5 * ls
    q1, q2 = state.q
    dz, dq1, dq2 = state.z_dot, state.q_dot[0], state.q_dot[1]
    s1, c1 = np.sin(q1), np.cos(q1)
    s12, c12 = np.sin(q1 + q2), np.cos(q1 + q2)
    c2 = np.cos(q2)
    m00 = mb + mt + ms
    m01 = mt * a1 * s1 + ms * (lt * s1 + a2 * s12)
    m02 = ms * a2 * s12
    m11 = mt * a1 ** 2 + ms * (lt ** 2 + a2 ** 2 + 2 * lt * a2 * c2)
    m12 = ms * (a2 ** 2 + lt * a2 * c2)
    m22 = ms * a2 ** 2
    qd = np.array([dz, dq1, dq2])
    m = np.array([[m00, m01, m02], [m01, m11, m12], [m02, m12, m22]])
    kinetic = 0.5 * qd @ m @ qd
    potential = cfg.gravity * (mb * state.z + mt * (state.z - a1 * c1)
                               + ms * (state.z - lt * c1 - a2 * c12))
    return float(kinetic + potential)


# -- reward ---------------------------------------------------------------------

def compute_reward(state_before: HopperState, state_after: HopperState,
                   desired_positions: np.ndarray, applied_torques: np.ndarray,
                   cfg: RewardConfig, hopper_cfg: HopperConfig | None = None) -> np.ndarray:
    """Five reward terms evaluated on the post-step state.

    Upward hip velocity is rewarded quadratically; tracking error, joint
    speed and torque are penalized quadratically and foot slip linearly.
    Slip counts only while the foot is in contact.
    """
    hopper_cfg = hopper_cfg or HopperConfig()
    v_h = state_after.z_dot
    r1 = (cfg.c1 * max(v_h, 0.0)) ** 2
    err = np.asarray(desired_positions) - state_after.q
    r2 = cfg.c2 * float(err @ err)
    r3 = cfg.c3 * float(state_after.q_dot @ state_after.q_dot)
    tau = np.asarray(applied_torques)
    r4 = cfg.c4 * float(tau @ tau)
    slip = abs(foot_velocity(hopper_cfg, state_after.z_dot, state_after.q,
                             state_after.q_dot)[0]) if state_after.foot_contact else 0.0
    r5 = cfg.c5 * slip
    return np.array([r1, r2, r3, r4, r5])


# -- environment ------------------------------------------------------------------

class HopperEnv:
    """Deterministic simulation owned by a single rollout worker."""

    def __init__(self, config: HopperConfig | None = None,
                 reward_config: RewardConfig | None = None, seed=None):
        self.cfg = config or HopperConfig()
        self.reward_cfg = reward_config or RewardConfig()
        self._cvec = self.cfg.vector()
        self._rng = np.random.default_rng(seed)
        self._y = None
        self._prev_desired = None
        self.steps = 0
        self.done = True

    def _state_from_y(self) -> HopperState:
        y = self._y
        fp = foot_position(self.cfg, y[0], y[1:3])
        return HopperState(z=float(y[0]), z_dot=float(y[3]), q=y[1:3].copy(),
                           q_dot=y[4:6].copy(), foot_contact=bool(fp[1] <= 0.0),
                           foot_pos=fp)

    def _observation(self, state: HopperState) -> Observation:
        return Observation(
            joint_pos_measured=state.q,
            joint_vel_measured=state.q_dot,
            joint_pos_desired=self._prev_desired.copy(),
            hip_height=state.z,
            hip_vel=state.z_dot,
        )

    def reset(self) -> tuple[HopperState, Observation]:
        """Leg at rest in the crouch pose with a small seeded joint perturbation,
        foot exactly on the ground."""
        cfg = self.cfg
        q = np.asarray(cfg.reset_pose) + self._rng.uniform(
            -cfg.reset_perturb, cfg.reset_perturb, size=2)
        z = standing_height(cfg, q)
        self._y = np.array([z, q[0], q[1], 0.0, 0.0, 0.0])
        self._prev_desired = q.copy()
        self.steps = 0
        self.done = False
        state = self._state_from_y()
        return state, self._observation(state)

    def step(self, desired_positions) -> StepResult:
        if self.done:
            raise ContractViolationError("episode is done; call reset()")
        desired = np.asarray(desired_positions, dtype=np.float64)
        if desired.shape != (2,) or not np.isfinite(desired).all():
            raise ContractViolationError("desired positions must be 2 finite values")
        cfg = self.cfg
        state_before = self._state_from_y()
        y, tau1, tau2, fault = _control_step(
            self._y, desired[0], desired[1], self._cvec, cfg.dt_physics, cfg.substeps)
        if fault:
            self.done = True
            raise PhysicsFaultError(
                f"non-finite dynamics at control step {self.steps}; episode aborted")
        self._y = y
        self.steps += 1
        state = self._state_from_y()
        torques = np.array([tau1, tau2])
        terms = compute_reward(state_before, state, desired, torques,
                               self.reward_cfg, cfg)
        self.done = bool(state.z < cfg.z_min or state.z > cfg.z_max
                         or self.steps >= cfg.horizon)
        self._prev_desired = desired.copy()
        obs = self._observation(state)
        info = {
            "torques": torques,
            "slip_speed": abs(foot_velocity(cfg, state.z_dot, state.q, state.q_dot)[0])
                          if state.foot_contact else 0.0,
            "foot_pos": state.foot_pos,
            "steps": self.steps,
        }
        return StepResult(obs, float(terms.sum()), terms, self.done, info)

    @property
    def state(self) -> HopperState:
        return self._state_from_y()
