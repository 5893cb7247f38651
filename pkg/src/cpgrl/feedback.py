"""Sensory feedback network: observations in, per-oscillator feedback out.

A small tanh MLP maps the normalized proprioceptive observation to one phase
term and one amplitude term per oscillator.  Both heads end in a scaled tanh,
so feedback is bounded and the oscillator dynamics stay well-posed no matter
what the network does; with the output heads at zero (their initial value)
the controller degenerates exactly to the open-loop oscillator network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractViolationError
from .nets import mlp_apply, mlp_init, orthogonal

OBS_DIM = 8
OBS_FIELDS = ("q1_meas", "q2_meas", "qd1_meas", "qd2_meas",
              "q1_des", "q2_des", "hip_height", "hip_vel")


@dataclass(frozen=True)
class FeedbackConfig:
    hidden: tuple[int, ...] = (32, 32)
    xi_limit: float = 4.0 * math.pi   # rad/s bound on phase feedback
    kappa_limit: float = 50.0         # 1/s^2 bound on amplitude feedback
    enabled: bool = True

    def __post_init__(self):
        if self.xi_limit <= 0 or self.kappa_limit <= 0:
            raise ContractViolationError("feedback output limits must be positive")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ContractViolationError("hidden layer sizes must be positive")


@dataclass(frozen=True, eq=False)
class Observation:
    """Proprioceptive snapshot fed to the feedback net and the critic."""

    joint_pos_measured: np.ndarray
    joint_vel_measured: np.ndarray
    joint_pos_desired: np.ndarray   # previous control step's action
    hip_height: float
    hip_vel: float

    def vector(self) -> np.ndarray:
        v = np.concatenate([
            np.asarray(self.joint_pos_measured, dtype=np.float64),
            np.asarray(self.joint_vel_measured, dtype=np.float64),
            np.asarray(self.joint_pos_desired, dtype=np.float64),
            [self.hip_height, self.hip_vel],
        ])
        if v.shape != (OBS_DIM,) or not np.isfinite(v).all():
            raise ContractViolationError("observation must be 8 finite entries")
        return v


@dataclass(frozen=True, eq=False)
class FeedbackSignals:
    """Additive feedback: `xi` enters the phase rate, `kappa` the amplitude
    acceleration."""

    xi: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=np.float64)
        kappa = np.asarray(self.kappa, dtype=np.float64)
        if xi.shape != kappa.shape or xi.ndim != 1:
            raise ContractViolationError("xi and kappa must be 1-D of equal length")
        if not (np.isfinite(xi).all() and np.isfinite(kappa).all()):
            raise ContractViolationError("feedback signals must be finite")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "kappa", kappa)

    @staticmethod
    def zeros(n: int) -> "FeedbackSignals":
        return FeedbackSignals(np.zeros(n), np.zeros(n))


class MlpWeights:
    """Feedback-net weights: shared tanh trunk plus one linear head per signal."""

    def __init__(self, arrays: dict[str, np.ndarray], n_hidden_layers: int):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        self.n_hidden_layers = n_hidden_layers
        for a in self.arrays.values():
            if not np.isfinite(a).all():
                raise ContractViolationError("feedback weights must be finite")

    def __getitem__(self, name):
        return self.arrays[name]


FEEDBACK_HEAD_NAMES = ("Wxi", "bxi", "Wk", "bk")


def init_feedback(seed, arch_config: FeedbackConfig, n_osc: int, obs_dim: int = OBS_DIM) -> MlpWeights:
    """Orthogonal trunk (gain sqrt(2)), zero-initialized output heads."""
    rng = np.random.default_rng(seed)
    sizes = (obs_dim, *arch_config.hidden)
    entries = {}
    for i in range(len(sizes) - 1):
        entries[f"W{i}"] = orthogonal(rng, (sizes[i + 1], sizes[i]), gain=math.sqrt(2.0))
        entries[f"b{i}"] = np.zeros(sizes[i + 1])
    entries["Wxi"] = np.zeros((n_osc, sizes[-1]))
    entries["bxi"] = np.zeros(n_osc)
    entries["Wk"] = np.zeros((n_osc, sizes[-1]))
    entries["bk"] = np.zeros(n_osc)
    return MlpWeights(entries, n_hidden_layers=len(arch_config.hidden))


def feedback_apply(x, get, cfg: FeedbackConfig, n_hidden_layers: int):
    """Array-level forward pass (numpy or Var); returns (xi, kappa)."""
    h = x
    for i in range(n_hidden_layers):
        h = ad.tanh(ad.matvec(h, ad.transpose(get(f"W{i}"))) + get(f"b{i}"))
    xi = cfg.xi_limit * ad.tanh(ad.matvec(h, ad.transpose(get("Wxi"))) + get("bxi"))
    kappa = cfg.kappa_limit * ad.tanh(ad.matvec(h, ad.transpose(get("Wk"))) + get("bk"))
    return xi, kappa


def feedback_forward(obs, w: MlpWeights, cfg: FeedbackConfig | None = None) -> FeedbackSignals:
    """Feedback signals for one normalized observation."""
    cfg = cfg or FeedbackConfig()
    x = obs.vector() if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64)
    if x.shape != (w.arrays["W0"].shape[1],):
        raise ContractViolationError(
            f"observation has shape {x.shape}, net expects ({w.arrays['W0'].shape[1]},)"
        )
    xi, kappa = feedback_apply(x, w.arrays.__getitem__, cfg, w.n_hidden_layers)
    return FeedbackSignals(xi, kappa)


class RunningNorm:
    """Per-entry running mean/variance normalizer with clipped z-scores.

    Updated online during training rollouts, frozen (simply not updated) at
    evaluation time.  Serializes as three arrays: mean, m2 and count.
    """

    CLIP = 10.0

    def __init__(self, dim: int):
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.count = 0.0

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        bn = batch.shape[0]
        bmean = batch.mean(axis=0)
        bm2 = ((batch - bmean) ** 2).sum(axis=0)
        delta = bmean - self.mean
        total = self.count + bn
        self.mean = self.mean + delta * (bn / total)
        self.m2 = self.m2 + bm2 + delta * delta * (self.count * bn / total)
        self.count = total

    @property
    def var(self) -> np.ndarray:
        if self.count < 1:
            return np.ones_like(self.m2)
        return self.m2 / self.count

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -self.CLIP, self.CLIP)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean.copy(), "m2": self.m2.copy(),
                "count": np.array([self.count])}

    @staticmethod
    def from_state(arrays: dict[str, np.ndarray]) -> "RunningNorm":
        rn = RunningNorm(len(arrays["mean"]))
        rn.mean = np.asarray(arrays["mean"], dtype=np.float64).copy()
        rn.m2 = np.asarray(arrays["m2"], dtype=np.float64).copy()
        rn.count = float(np.asarray(arrays["count"]).ravel()[0])
        return rn
