"""The three interchangeable actor architectures.

* `CpgActor`: the oscillator network is the actor itself; a feedback MLP
  reshapes its dynamics from observations and everything trains end-to-end.
  Its carried state is exactly the oscillator state vector.
* `MlpActor`: plain tanh MLP emitting desired joint positions; stateless.
* `CpgInEnvActor`: the prior-art baseline; a stateless MLP emits a full
  oscillator parameter vector every control step and an environment-side
  adapter (`CpgEnvAdapter`) runs the oscillators on it with zero feedback,
  so no gradient ever flows through them.

All actors expose the same surface (`act_batch`, `taped_mean`,
`reset_carried`, `make_adapter`), letting the trainer run them through one
rollout/update path with no actor-specific branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import cpg
from .errors import ContractViolationError
from .feedback import OBS_DIM, FeedbackConfig, FeedbackSignals, feedback_apply, init_feedback
from .nets import mlp_apply, mlp_init
from .paramvec import ParamBlock

ACTOR_KINDS = ("cpg-actor", "mlp-actor", "cpg-in-env")


@dataclass(frozen=True)
class JointMap:
    """Affine map from the oscillators' burst output into joint space."""

    offsets: tuple[float, float] = (-0.2, 0.6)
    ranges: tuple[float, float] = (0.6, 0.9)

    def apply(self, x):
        return np.asarray(self.offsets) + x * np.asarray(self.ranges)


class IdentityAdapter:
    """For actors whose sampled action already is the desired joint position."""

    def reset(self, worker: int) -> None:
        pass

    def to_desired(self, action: np.ndarray, worker: int) -> np.ndarray:
        return action

    def osc_trace(self, worker: int):
        return None


def _split_carried(carried: np.ndarray, n: int):
    return (carried[:, i * n:(i + 1) * n] for i in range(5))


class CpgActor:
    kind = "cpg-actor"
    wants_warm_start = False

    def __init__(self, topology: cpg.CpgTopology, init_cfg: cpg.CpgInitConfig,
                 fb_cfg: FeedbackConfig, joint_map: JointMap, dt: float, command: float):
        self.topology = topology
        self.init_cfg = init_cfg
        self.fb_cfg = fb_cfg
        self.joint_map = joint_map
        self.dt = dt
        self.command = command
        self.action_dim = topology.n_oscillators
        self.carried_dim = 5 * topology.n_oscillators

    def init_entries(self, rng) -> dict[str, np.ndarray]:
        params, _ = cpg.init_cpg(self.topology, rng, self.init_cfg)
        entries = {"cpg.v": params.v}
        fb = init_feedback(rng, self.fb_cfg, self.topology.n_oscillators)
        for k, v in fb.arrays.items():
            entries[f"fb.{k}"] = v
        return entries

    def reset_carried(self, rng, block: ParamBlock) -> np.ndarray:
        params = cpg.CpgParams(self.topology, block["cpg.v"])
        return cpg.reset_state(params, rng, self.command).as_vector()

    def _mean_core(self, obs, carried, get):
        n = self.topology.n_oscillators
        theta, theta_dot, r, r_dot, r_ddot = _split_carried(carried, n)
        if self.fb_cfg.enabled:
            xi, kappa = feedback_apply(obs, lambda k: get(f"fb.{k}"),
                                       self.fb_cfg, len(self.fb_cfg.hidden))
        else:
            xi, kappa = 0.0, 0.0
        d = np.full((carried.shape[0], self.topology.d_cmd), self.command)
        th, thd, rr, rd, rdd, x, _ = cpg.step_arrays(
            theta, theta_dot, r, r_dot, r_ddot, get("cpg.v"),
            self.topology, d, xi, kappa, self.dt)
        return self.joint_map.apply(x), (th, thd, rr, rd, rdd)

    def act_batch(self, obs_n, carried, block: ParamBlock):
        mean, parts = self._mean_core(obs_n, carried, block.__getitem__)
        return mean, np.concatenate(parts, axis=1)

    def act(self, obs_n, carried, block: ParamBlock):
        mean, new_carried = self.act_batch(obs_n.reshape(1, -1),
                                           carried.reshape(1, -1), block)
        return mean[0], new_carried[0]

    def taped_mean(self, tape, leaves, obs_const, carried_const):
        mean, _ = self._mean_core(obs_const, carried_const, leaves.__getitem__)
        return mean

    def make_adapter(self, n_workers, rng):
        return IdentityAdapter()

    def osc_trace(self, carried_row: np.ndarray) -> dict:
        n = self.topology.n_oscillators
        s = cpg.CpgState.from_vector(carried_row)
        out = {}
        for i in range(n):
            out[f"theta{i + 1}"] = float(s.theta[i])
            out[f"theta_dot{i + 1}"] = float(s.theta_dot[i])
            out[f"r{i + 1}"] = float(s.r[i])
            out[f"r_ddot{i + 1}"] = float(s.r_ddot[i])
        return out


class MlpActor:
    """Plain actor-critic policy head: observations straight to positions."""

    kind = "mlp-actor"
    wants_warm_start = False
    HIDDEN = (64, 64)

    def __init__(self, n_joints: int = 2, obs_dim: int = OBS_DIM):
        self.action_dim = n_joints
        self.carried_dim = 0
        self.obs_dim = obs_dim

    def init_entries(self, rng) -> dict[str, np.ndarray]:
        ent = mlp_init(rng, (self.obs_dim, *self.HIDDEN, self.action_dim), out_gain=0.01)
        return {f"actor.{k}": v for k, v in ent.items()}

    def reset_carried(self, rng, block) -> np.ndarray:
        return np.zeros(0)

    def _mean_core(self, obs, get):
        return mlp_apply(obs, lambda k: get(f"actor.{k}"), n_layers=len(self.HIDDEN) + 1)

    def act_batch(self, obs_n, carried, block: ParamBlock):
        return self._mean_core(obs_n, block.__getitem__), carried

    def act(self, obs_n, carried, block: ParamBlock):
        mean, _ = self.act_batch(obs_n.reshape(1, -1), None, block)
        return mean[0], np.zeros(0)

    def taped_mean(self, tape, leaves, obs_const, carried_const):
        return self._mean_core(obs_const, leaves.__getitem__)

    def make_adapter(self, n_workers, rng):
        return IdentityAdapter()

    def osc_trace(self, carried_row):
        return None


class CpgInEnvActor:
    """Baseline: the policy's action is a fresh oscillator parameter vector at
    every control step; the oscillators live inside the environment."""

    kind = "cpg-in-env"
    wants_warm_start = True
    HIDDEN = (64, 64)

    def __init__(self, topology: cpg.CpgTopology, joint_map: JointMap,
                 dt: float, command: float, obs_dim: int = OBS_DIM):
        self.topology = topology
        self.joint_map = joint_map
        self.dt = dt
        self.command = command
        self.action_dim = topology.m_params
        self.carried_dim = 0
        self.obs_dim = obs_dim

    def init_entries(self, rng) -> dict[str, np.ndarray]:
        ent = mlp_init(rng, (self.obs_dim, *self.HIDDEN, self.action_dim), out_gain=0.01)
        return {f"actor.{k}": v for k, v in ent.items()}

    def reset_carried(self, rng, block) -> np.ndarray:
        return np.zeros(0)

    def _mean_core(self, obs, get):
        return mlp_apply(obs, lambda k: get(f"actor.{k}"), n_layers=len(self.HIDDEN) + 1)

    def act_batch(self, obs_n, carried, block: ParamBlock):
        return self._mean_core(obs_n, block.__getitem__), carried

    def act(self, obs_n, carried, block: ParamBlock):
        mean, _ = self.act_batch(obs_n.reshape(1, -1), None, block)
        return mean[0], np.zeros(0)

    def taped_mean(self, tape, leaves, obs_const, carried_const):
        return self._mean_core(obs_const, leaves.__getitem__)

    def make_adapter(self, n_workers, rng):
        return CpgEnvAdapter(self.topology, self.joint_map, self.dt,
                             self.command, rng, n_workers)

    def osc_trace(self, carried_row):
        return None


class CpgEnvAdapter:
    """Environment-side oscillator bank consuming per-step parameter emissions.

    Each worker owns one oscillator state, reset lazily from the first
    emission of the episode (phases seeded uniform, amplitude on rho(d)).
    """

    def __init__(self, topology, joint_map, dt, command, rng, n_workers):
        self.topology = topology
        self.joint_map = joint_map
        self.dt = dt
        self.cmd = cpg.CommandSignal(np.full(topology.d_cmd, command))
        self.rng = rng
        self.states: list = [None] * n_workers
        self._zero_fb = FeedbackSignals.zeros(topology.n_oscillators)

    def reset(self, worker: int) -> None:
        self.states[worker] = None

    def to_desired(self, emission: np.ndarray, worker: int) -> np.ndarray:
        params = cpg.CpgParams(self.topology, np.asarray(emission, dtype=np.float64))
        if self.states[worker] is None:
            self.states[worker] = cpg.reset_state(params, self.rng, self.cmd.d)
        new_state, x = cpg.cpg_step(self.states[worker], params, self.cmd,
                                    self._zero_fb, self.dt)
        self.states[worker] = new_state
        return self.joint_map.apply(x)

    def osc_trace(self, worker: int):
        s = self.states[worker]
        if s is None:
            return None
        out = {}
        for i in range(s.n):
            out[f"theta{i + 1}"] = float(s.theta[i])
            out[f"theta_dot{i + 1}"] = float(s.theta_dot[i])
            out[f"r{i + 1}"] = float(s.r[i])
            out[f"r_ddot{i + 1}"] = float(s.r_ddot[i])
        return out


# -- warm start -----------------------------------------------------------------

@dataclass(frozen=True)
class WarmStartTarget:
    """Reference oscillator parameters the baseline is supervised toward
    (anti-phase hip/knee oscillation at a plausible hopping frequency)."""

    freq_hz: float = 1.5
    amp: float = 0.4
    coupling: float = 0.5
    phase: float = math.pi
    a_value: float = 5.0

    def __post_init__(self):
        if self.freq_hz <= 0 or self.amp <= 0 or self.a_value <= cpg.A_FLOOR:
            raise ContractViolationError("warm-start targets must satisfy positivity")

    def raw_vector(self, topology: cpg.CpgTopology) -> np.ndarray:
        """Parameter vector whose mapped values hit the targets at unit command."""
        v = np.zeros(topology.m_params)
        lay = topology.param_layout
        v[lay["freq_b"]] = cpg.softplus_inv(self.freq_hz)
        v[lay["amp_b"]] = cpg.softplus_inv(self.amp)
        v[lay["a_raw"]] = cpg.softplus_inv(self.a_value - cpg.A_FLOOR)
        v[lay["w_raw"]] = self.coupling
        v[lay["phi"]] = self.phase
        return v


def warm_start(actor, entries: dict, target: WarmStartTarget, obs_batch: np.ndarray,
               epochs: int, lr: float = 0.02, minibatch: int = 128, rng=None):
    """Supervised pre-training of the baseline policy toward `target`.

    Minimizes the MSE between the emitted parameter vector and the target's
    raw vector over `obs_batch`; returns (trained entries, per-epoch loss).
    """
    from .ppo import AdamState, adam_update  # deferred: ppo imports this module lazily

    if epochs < 0:
        raise ContractViolationError("epochs must be >= 0")
    rng = rng or np.random.default_rng(0)
    sub = ParamBlock({k: v.copy() for k, v in entries.items()})
    target_v = target.raw_vector(actor.topology)
    adam = AdamState.zeros(sub.size)
    losses = []
    n = obs_batch.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_mb = 0
        for start in range(0, n, minibatch):
            idx = order[start:start + minibatch]
            tape = ad.Tape()
            leaves = {name: tape.leaf(arr) for name, arr in sub.items()}
            emission = actor.taped_mean(tape, leaves, obs_batch[idx], None)
            loss = ad.vmean(ad.square(emission - target_v))
            grads = ad.backward(tape, 1.0, output=loss)
            flat_g = grads.flat([leaves[k] for k in sub.names()])
            new_flat, adam, _ = adam_update(sub.flat(), flat_g, adam, lr)
            sub = sub.with_flat(new_flat)
            epoch_loss += float(loss.value)
            n_mb += 1
        losses.append(epoch_loss / max(n_mb, 1))
    return dict(sub.items()), losses


def random_action_observations(env, joint_map: JointMap, normalizer, count: int, rng):
    """Observation batch from a rollout driven by uniform random desired
    positions inside the joint map's span; feeds the running normalizer."""
    lo = np.asarray(joint_map.offsets) - np.asarray(joint_map.ranges)
    hi = np.asarray(joint_map.offsets) + np.asarray(joint_map.ranges)
    raw = np.zeros((count, OBS_DIM))
    _, obs = env.reset()
    raw[0] = obs.vector()
    for i in range(1, count):
        res = env.step(rng.uniform(lo, hi))
        raw[i] = res.observation.vector()
        if res.done:
            _, obs = env.reset()
    normalizer.update(raw)
    return np.clip((raw - normalizer.mean) / np.sqrt(normalizer.var + 1e-8),
                   -normalizer.CLIP, normalizer.CLIP)


def warm_start_actor(actor, block: ParamBlock, cfg, env, normalizer, rng):
    """Orchestrate the baseline's warm start inside the training pipeline."""
    ws = cfg.warmstart
    target = WarmStartTarget(ws.freq_hz, ws.amp, ws.coupling, ws.phase, ws.a_value)
    obs_batch = random_action_observations(env, actor.joint_map, normalizer,
                                           ws.obs_batch, rng)
    actor_entries = {k: block[k] for k in block.names() if k.startswith("actor.")}
    trained, losses = warm_start(actor, actor_entries, target, obs_batch,
                                 ws.epochs, lr=ws.lr, minibatch=ws.minibatch, rng=rng)
    for k, v in trained.items():
        block[k] = v
    return block, losses


def make_actor(kind: str, cfg):
    """Instantiate an actor from the experiment configuration."""
    if kind not in ACTOR_KINDS:
        raise ContractViolationError(f"unknown actor kind '{kind}'; choose from {ACTOR_KINDS}")
    topo = cfg.cpg.topology()
    jmap = JointMap(tuple(cfg.joints.offsets), tuple(cfg.joints.ranges))
    if kind == "cpg-actor":
        return CpgActor(topo, cfg.cpg.init_config(), cfg.feedback, jmap,
                        cfg.cpg.dt, cfg.cpg.command)
    if kind == "mlp-actor":
        return MlpActor(n_joints=2)
    return CpgInEnvActor(topo, jmap, cfg.cpg.dt, cfg.cpg.command)
