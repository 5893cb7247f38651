"""PPO with a clipped surrogate objective, GAE and Adam, over any of the
interchangeable actor architectures.

The rollout path threads each actor's carried state explicitly and stores it
in the buffer, so the update phase recomputes action means statelessly from
(observation, stored state) one step at a time; gradients never cross step
boundaries.  The critic is a separate tanh MLP over the same observations.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractViolationError, TrainingAbortError
from .feedback import OBS_DIM, RunningNorm
from .nets import mlp_init, mlp_apply
from .paramvec import ParamBlock

LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    minibatch_size: int = 512
    epochs: int = 4
    rollout_steps: int = 2048   # per worker, between updates
    n_workers: int = 8
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    init_log_std: float = -1.0

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ContractViolationError("ppo.clip_eps must be in (0, 1)")
        for name in ("gamma", "gae_lambda"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ContractViolationError(f"ppo.{name} must be in [0, 1]")
        for name in ("learning_rate", "minibatch_size", "epochs", "rollout_steps",
                     "n_workers", "max_grad_norm"):
            if getattr(self, name) <= 0:
                raise ContractViolationError(f"ppo.{name} must be positive")
        if self.value_coef < 0 or self.entropy_coef < 0:
            raise ContractViolationError("loss coefficients must be >= 0")


CRITIC_HIDDEN = (64, 64)


def critic_init(rng, obs_dim: int = OBS_DIM) -> dict[str, np.ndarray]:
    """Two 64-unit tanh hidden layers into a scalar value head."""
    return mlp_init(rng, (obs_dim, *CRITIC_HIDDEN, 1), out_gain=1.0)


def critic_apply(x, get):
    v = mlp_apply(x, get, n_layers=len(CRITIC_HIDDEN) + 1)
    b = v.shape[0] if len(v.shape) == 2 else None
    return ad.reshape(v, (b,)) if b is not None else ad.reshape(v, ())


# -- Gaussian policy head -------------------------------------------------------

def gaussian_log_prob(action, mean, log_std):
    """Diagonal-Gaussian log density, summed over the action axis.

    Works on numpy arrays or tape Vars; `action` may stay a constant.
    """
    z = (action - mean) * ad.exp(-log_std)
    per = -0.5 * ad.square(z) - log_std - 0.5 * LOG2PI
    return ad.vsum(per, axis=-1)


def gaussian_entropy(log_std, action_dim: int):
    return ad.vsum(log_std) + 0.5 * action_dim * (1.0 + LOG2PI)


def sample_action(mean, log_std, rng):
    """Sample from the diagonal Gaussian; returns (action, log_prob)."""
    mean = np.asarray(mean, dtype=np.float64)
    if not np.isfinite(mean).all():
        raise ContractViolationError("action mean must be finite")
    std = np.exp(log_std)
    action = mean + std * rng.standard_normal(mean.shape)
    return action, gaussian_log_prob(action, mean, log_std)


# -- GAE -------------------------------------------------------------------------

def gae(rewards, values, dones, gamma, lam):
    """Generalized advantage estimation.

    `values` carries one bootstrap entry more than `rewards` along axis 0.
    delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t
    A_t     = delta_t + gamma*lam*(1-done_t)*A_{t+1};  returns = A + V.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    t_len = rewards.shape[0]
    if values.shape[0] != t_len + 1 or dones.shape != rewards.shape:
        raise ContractViolationError("gae inputs misaligned (values needs T+1 entries)")
    adv = np.zeros_like(rewards)
    acc = np.zeros_like(rewards[0] if rewards.ndim > 1 else np.float64(0.0))
    for t in range(t_len - 1, -1, -1):
        mask = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * mask - values[t]
        acc = delta + gamma * lam * mask * acc
        adv[t] = acc
    return adv, adv + values[:-1]


# -- loss -------------------------------------------------------------------------

def ppo_loss(batch, new_log_probs, new_values, entropy, cfg: PpoConfig):
    """Clipped-surrogate policy loss plus value regression minus entropy bonus.

    `batch` supplies constants: `advantages` (normalized), `returns`,
    `old_log_probs`.  The remaining arguments are tape Vars (or arrays when
    called untaped).
    """
    adv = batch["advantages"]
    ratio = ad.exp(new_log_probs - batch["old_log_probs"])
    clipped = ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surrogate = ad.vmean(ad.minimum(ratio * adv, clipped * adv))
    value_loss = ad.vmean(ad.square(new_values - batch["returns"]))
    return -surrogate + cfg.value_coef * value_loss - cfg.entropy_coef * ad.vmean(entropy)


# -- Adam --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(size: int) -> "AdamState":
        return AdamState(np.zeros(size), np.zeros(size))


def clip_grad_norm(grads: np.ndarray, max_norm: float):
    """Scale the whole gradient vector so its L2 norm is at most max_norm."""
    norm = float(np.linalg.norm(grads))
    if max_norm is not None and norm > max_norm and norm > 0.0:
        grads = grads * (max_norm / norm)
    return grads, norm


def adam_update(params, grads, moments: AdamState, lr,
                betas=(0.9, 0.999), eps=1e-8, max_grad_norm=None):
    """One Adam step on flat vectors; clips the global grad norm first.

    Returns (new_params, moments, pre-clip grad norm); `moments` is advanced
    in place including its step count.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != moments.m.shape:
        raise ContractViolationError("adam: params/grads/moments shapes differ")
    grads, norm = clip_grad_norm(grads, max_grad_norm)
    moments.t += 1
    b1, b2 = betas
    moments.m = b1 * moments.m + (1.0 - b1) * grads
    moments.v = b2 * moments.v + (1.0 - b2) * grads * grads
    m_hat = moments.m / (1.0 - b1 ** moments.t)
    v_hat = moments.v / (1.0 - b2 ** moments.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), moments, norm


# -- rollout storage -----------------------------------------------------------------

class RolloutBuffer:
    """Fixed-size (T, W) storage for one update's worth of transitions."""

    def __init__(self, t_len: int, n_workers: int, obs_dim: int,
                 action_dim: int, carried_dim: int):
        shape = (t_len, n_workers)
        self.obs = np.zeros((*shape, obs_dim))
        self.carried = np.zeros((*shape, carried_dim))
        self.actions = np.zeros((*shape, action_dim))
        self.log_probs = np.zeros(shape)
        self.rewards = np.zeros(shape)
        self.values = np.zeros(shape)
        self.dones = np.zeros(shape)
        self.t_len = t_len
        self.n_workers = n_workers
        self.advantages = None
        self.returns = None

    def finalize(self, bootstrap_values: np.ndarray, gamma: float, lam: float):
        values = np.concatenate([self.values, bootstrap_values[None, :]], axis=0)
        adv, ret = gae(self.rewards, values, self.dones, gamma, lam)
        if not (np.isfinite(adv).all() and np.isfinite(ret).all()):
            raise ContractViolationError("non-finite advantages after GAE")
        self.advantages = adv
        self.returns = ret

    def flat(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        return a.reshape(self.t_len * self.n_workers, *a.shape[2:])

    def minibatches(self, rng, size: int, normalized_adv: np.ndarray):
        n = self.t_len * self.n_workers
        order = rng.permutation(n)
        flat = {k: self.flat(k) for k in ("obs", "carried", "actions", "log_probs", "returns")}
        for start in range(0, n, size):
            idx = order[start:start + size]
            yield {
                "obs": flat["obs"][idx],
                "carried": flat["carried"][idx],
                "actions": flat["actions"][idx],
                "old_log_probs": flat["log_probs"][idx],
                "returns": flat["returns"][idx],
                "advantages": normalized_adv[idx],
            }


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    flat = adv.ravel()
    return (flat - flat.mean()) / (flat.std() + 1e-8)


# -- training loop ----------------------------------------------------------------------

@dataclass
class LogRow:
    update: int
    steps: int
    mean_ep_reward: float
    std_ep_reward: float
    surrogate: float
    value_loss: float
    log_std: float
    grad_norm: float
    grad_norm_cpg: float
    grad_norm_fb_out: float

    CSV_HEADER = ("update,steps,mean_ep_reward,std_ep_reward,surrogate,value_loss,"
                  "log_std,grad_norm,grad_norm_cpg,grad_norm_fb_out")

    def csv(self) -> str:
        return (f"{self.update},{self.steps},{self.mean_ep_reward!r},{self.std_ep_reward!r},"
                f"{self.surrogate!r},{self.value_loss!r},{self.log_std!r},{self.grad_norm!r},"
                f"{self.grad_norm_cpg!r},{self.grad_norm_fb_out!r}")


@dataclass
class TrainResult:
    block: ParamBlock
    normalizer: RunningNorm
    log_rows: list
    episode_returns: list   # (global_step, return) for each completed episode
    checkpoint_steps: list = field(default_factory=list)


def _episode_stats(returns):
    if not returns:
        return float("nan"), float("nan")
    arr = np.array(returns)
    return float(arr.mean()), float(arr.std())


def train(actor_kind: str, total_steps: int, cfg, seed,
          out_dir: str | None = None, config_text: str | None = None) -> TrainResult:
    """Run PPO for `total_steps` environment steps and return the result.

    `cfg` is the full experiment configuration (see `config.ExperimentConfig`).
    When `out_dir` is given, writes `train_log.csv`, checkpoints (initial,
    the first update past 100k steps, periodic, final) and a warm-start loss
    curve if the actor was warm-started.
    """
    from . import actors as actors_mod  # deferred: actors imports adam from here
    from . import checkpoint as ckpt_mod
    from .hopper import HopperEnv

    pcfg: PpoConfig = cfg.ppo
    n_workers = pcfg.n_workers
    cap = os.environ.get("CPG_ACTOR_THREADS")
    if cap:
        n_workers = max(1, min(n_workers, int(cap)))

    root = np.random.SeedSequence(seed)
    ss_init, ss_sample, ss_shuffle, ss_env, ss_carry, ss_warm = root.spawn(6)
    rng_sample = np.random.default_rng(ss_sample)
    rng_shuffle = np.random.default_rng(ss_shuffle)
    rng_carry = np.random.default_rng(ss_carry)

    actor = actors_mod.make_actor(actor_kind, cfg)
    block = ParamBlock(actor.init_entries(np.random.default_rng(ss_init)))
    crit = critic_init(np.random.default_rng(ss_init.spawn(1)[0]))
    for k, v in crit.items():
        block[f"critic.{k}"] = v
    block["log_std"] = np.full(actor.action_dim, pcfg.init_log_std)

    envs = [HopperEnv(cfg.hopper, cfg.reward, seed=s) for s in ss_env.spawn(n_workers)]
    adapter = actor.make_adapter(n_workers, np.random.default_rng(ss_carry.spawn(1)[0]))
    normalizer = RunningNorm(OBS_DIM)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    warm_losses = None
    if actor.wants_warm_start and getattr(cfg, "warmstart", None) and cfg.warmstart.enabled:
        block, warm_losses = actors_mod.warm_start_actor(
            actor, block, cfg, envs[0], normalizer, np.random.default_rng(ss_warm))
        if out_dir and warm_losses is not None:
            with open(os.path.join(out_dir, "warmstart_loss.csv"), "w") as f:
                f.write("epoch,mse\n")
                f.writelines(f"{i},{v!r}\n" for i, v in enumerate(warm_losses))

    carried = np.zeros((n_workers, actor.carried_dim))
    obs_n = np.zeros((n_workers, OBS_DIM))
    for w, env in enumerate(envs):
        _, obs = env.reset()
        vec = obs.vector()
        normalizer.update(vec)
        obs_n[w] = normalizer.normalize(vec)
        carried[w] = actor.reset_carried(rng_carry, block)
        adapter.reset(w)

    updates_total = max(0, total_steps) // (pcfg.rollout_steps * n_workers)
    buffer = RolloutBuffer(pcfg.rollout_steps, n_workers, OBS_DIM,
                           actor.action_dim, actor.carried_dim)
    adam_state = AdamState.zeros(block.size)
    result = TrainResult(block, normalizer, [], [])

    def write_ckpt(step):
        if out_dir:
            path = os.path.join(out_dir, f"ck_{step:09d}.txt")
            ckpt_mod.save_checkpoint(path, ckpt_mod.Checkpoint(
                actor_kind=actor_kind, step=step,
                arrays=dict(block.items()) | {
                    f"norm.{k}": v for k, v in normalizer.state_arrays().items()},
                config_text=config_text or ""))
        result.checkpoint_steps.append(step)

    write_ckpt(0)
    log_path = os.path.join(out_dir, "train_log.csv") if out_dir else None
    if log_path:
        with open(log_path, "w") as f:
            f.write(LogRow.CSV_HEADER + "\n")

    ckpt_every = getattr(cfg, "checkpoint_every", 0) or max(1, updates_total // 10)
    milestone = 100_000
    global_step = 0
    ep_accum = np.zeros(n_workers)
    last_mean, last_std = 0.0, 0.0

    for update in range(1, updates_total + 1):
        window_returns = []
        for t in range(pcfg.rollout_steps):
            means, new_carried = actor.act_batch(obs_n, carried, block)
            actions, log_probs = sample_action(means, block["log_std"], rng_sample)
            values = critic_apply(obs_n, lambda k: block[f"critic.{k}"])
            buffer.obs[t] = obs_n
            buffer.carried[t] = carried
            buffer.actions[t] = actions
            buffer.log_probs[t] = log_probs
            buffer.values[t] = values
            for w, env in enumerate(envs):
                res = env.step(adapter.to_desired(actions[w], w))
                ep_accum[w] += res.reward
                buffer.rewards[t, w] = res.reward
                buffer.dones[t, w] = float(res.done)
                global_step += 1
                if res.done:
                    window_returns.append(ep_accum[w])
                    result.episode_returns.append((global_step, float(ep_accum[w])))
                    ep_accum[w] = 0.0
                    _, obs = env.reset()
                    vec = obs.vector()
                    normalizer.update(vec)
                    obs_n[w] = normalizer.normalize(vec)
                    new_carried[w] = actor.reset_carried(rng_carry, block)
                    adapter.reset(w)
                else:
                    vec = res.observation.vector()
                    normalizer.update(vec)
                    obs_n[w] = normalizer.normalize(vec)
            carried = new_carried

        bootstrap = critic_apply(obs_n, lambda k: block[f"critic.{k}"])
        buffer.finalize(bootstrap, pcfg.gamma, pcfg.gae_lambda)
        norm_adv = normalize_advantages(buffer.advantages)

        surr_sum = vloss_sum = 0.0
        gnorm_sum = gcpg_sum = gfb_sum = 0.0
        n_mb = 0
        for _ in range(pcfg.epochs):
            for mb in buffer.minibatches(rng_shuffle, pcfg.minibatch_size, norm_adv):
                tape = ad.Tape()
                leaves = {name: tape.leaf(arr) for name, arr in block.items()}
                mean_var = actor.taped_mean(tape, leaves, mb["obs"], mb["carried"])
                new_lp = gaussian_log_prob(mb["actions"], mean_var, leaves["log_std"])
                new_values = critic_apply(mb["obs"], lambda k: leaves[f"critic.{k}"])
                ent = gaussian_entropy(leaves["log_std"], actor.action_dim)
                loss = ppo_loss(mb, new_lp, new_values, ent, pcfg)
                loss_val = float(loss.value)
                surr_val = float(ad.vmean(ad.minimum(
                    np.exp(new_lp.value - mb["old_log_probs"]) * mb["advantages"],
                    np.clip(np.exp(new_lp.value - mb["old_log_probs"]),
                            1 - pcfg.clip_eps, 1 + pcfg.clip_eps) * mb["advantages"])))
                vloss_val = float(np.mean((new_values.value - mb["returns"]) ** 2))
                if not np.isfinite(loss_val):
                    dump = _dump_abort(out_dir, update, mb, block, loss_val)
                    raise TrainingAbortError(
                        f"non-finite loss at update {update}", dump_path=dump)
                grads = ad.backward(tape, 1.0, output=loss)
                flat_g = grads.flat([leaves[n] for n in block.names()])
                new_flat, adam_state, gnorm = adam_update(
                    block.flat(), flat_g, adam_state, pcfg.learning_rate,
                    max_grad_norm=pcfg.max_grad_norm)
                gcpg_sum += _group_norm(flat_g, block, ("cpg.v",))
                gfb_sum += _group_norm(flat_g, block, ("fb.Wxi", "fb.bxi", "fb.Wk", "fb.bk"))
                gnorm_sum += gnorm
                block = block.with_flat(new_flat)
                surr_sum += surr_val
                vloss_sum += vloss_val
                n_mb += 1

        result.block = block
        if window_returns:
            last_mean, last_std = _episode_stats(window_returns)
        row = LogRow(update, global_step, last_mean, last_std,
                     surr_sum / n_mb, vloss_sum / n_mb,
                     float(block["log_std"].mean()), gnorm_sum / n_mb,
                     gcpg_sum / n_mb, gfb_sum / n_mb)
        result.log_rows.append(row)
        if log_path:
            with open(log_path, "a") as f:
                f.write(row.csv() + "\n")
        crossed = milestone is not None and global_step >= milestone
        if crossed or update % ckpt_every == 0 or update == updates_total:
            write_ckpt(global_step)
            if crossed:
                milestone = None
    return result


def _group_norm(flat_g, block: ParamBlock, names) -> float:
    total = 0.0
    for n in names:
        if n in block:
            seg = flat_g[block.flat_slice(n)]
            total += float(seg @ seg)
    return math.sqrt(total)


@dataclass
class EpisodeTrace:
    """Per-control-step records of one evaluation episode."""

    rows: list          # trajectory dicts (t, z, q, desired, torques, rewards, ...)
    osc_rows: list      # oscillator internals when the actor embeds one
    episode_return: float
    peak_height: float


def evaluate(actor, block: ParamBlock, normalizer: RunningNorm, cfg,
             episodes: int, deterministic: bool, seed) -> tuple[dict, list]:
    """Roll out `episodes` episodes without learning; the normalizer is frozen.

    Returns (metrics, traces).  Deterministic mode applies the action means.
    """
    from .hopper import HopperEnv

    root = np.random.SeedSequence(seed)
    ss_env, ss_sample, ss_carry = root.spawn(3)
    env = HopperEnv(cfg.hopper, cfg.reward, seed=ss_env)
    rng_sample = np.random.default_rng(ss_sample)
    rng_carry = np.random.default_rng(ss_carry)
    adapter = actor.make_adapter(1, np.random.default_rng(ss_carry.spawn(1)[0]))

    traces = []
    for _ in range(episodes):
        state, obs = env.reset()
        obs_n = normalizer.normalize(obs.vector())
        carried = actor.reset_carried(rng_carry, block).reshape(1, -1)
        adapter.reset(0)
        rows = []
        osc_rows = []
        ep_ret = 0.0
        peak = state.z
        t = 0
        rows.append(_traj_row(t, env.cfg, state, state.q, np.zeros(2), np.zeros(5)))
        while not env.done:
            means, carried = actor.act_batch(obs_n.reshape(1, -1), carried, block)
            if deterministic:
                action = means[0]
            else:
                action, _ = sample_action(means[0], block["log_std"], rng_sample)
            desired = adapter.to_desired(action, 0)
            res = env.step(desired)
            state = env.state
            t += 1
            ep_ret += res.reward
            peak = max(peak, state.z)
            obs_n = normalizer.normalize(res.observation.vector())
            rows.append(_traj_row(t, env.cfg, state, desired,
                                  res.info["torques"], res.reward_terms))
            osc = actor.osc_trace(carried[0]) if actor.carried_dim else adapter.osc_trace(0)
            if osc is not None:
                osc_rows.append({"t": t * env.cfg.dt_control, **osc})
        traces.append(EpisodeTrace(rows, osc_rows, ep_ret, float(peak)))

    returns = np.array([tr.episode_return for tr in traces])
    peaks = np.array([tr.peak_height for tr in traces])
    slip = np.array([np.mean([r["slip"] for r in tr.rows[1:]]) if len(tr.rows) > 1 else 0.0
                     for tr in traces])
    deltas, within = [], []
    for tr in traces:
        des = np.array([[r["pdes1"], r["pdes2"]] for r in tr.rows])
        if len(des) > 1:
            d = np.abs(np.diff(des, axis=0))
            deltas.append(d.mean())
            within.append(float((d / cfg.hopper.dt_control <= cfg.hopper.joint_vel_limit).mean()))
    metrics = {
        "episodes": episodes,
        "mean_ep_reward": float(returns.mean()),
        "std_ep_reward": float(returns.std()),
        "peak_hip_height": float(peaks.mean()),
        "max_hip_height": float(peaks.max()),
        "mean_foot_slip": float(slip.mean()),
        "mean_abs_delta_action": float(np.mean(deltas)) if deltas else 0.0,
        "desired_vel_within_limit_frac": float(np.mean(within)) if within else 1.0,
        "mean_episode_len": float(np.mean([len(tr.rows) - 1 for tr in traces])),
    }
    return metrics, traces


def _traj_row(t, hcfg, state, desired, torques, terms):
    return {
        "t": t * hcfg.dt_control,
        "z": state.z, "z_dot": state.z_dot,
        "q1": state.q[0], "q2": state.q[1],
        "qd1": state.q_dot[0], "qd2": state.q_dot[1],
        "pdes1": float(desired[0]), "pdes2": float(desired[1]),
        "tau1": float(torques[0]), "tau2": float(torques[1]),
        "r1": float(terms[0]), "r2": float(terms[1]), "r3": float(terms[2]),
        "r4": float(terms[3]), "r5": float(terms[4]),
        "contact": int(state.foot_contact),
        "foot_z": float(state.foot_pos[1]),
        "slip": abs(_foot_vx(hcfg, state)) if state.foot_contact else 0.0,
    }


def _foot_vx(hcfg, state):
    from .hopper import foot_velocity
    return foot_velocity(hcfg, state.z_dot, state.q, state.q_dot)[0]


def _dump_abort(out_dir, update, mb, block, loss_val):
    lines = [f"non-finite loss {loss_val} at update {update}"]
    for k in ("advantages", "returns", "old_log_probs"):
        a = mb[k]
        lines.append(f"{k}: min={a.min()} max={a.max()} finite={np.isfinite(a).all()}")
    for name, arr in block.items():
        lines.append(f"param {name}: finite={np.isfinite(arr).all()} "
                     f"absmax={np.abs(arr).max() if arr.size else 0}")
    text = "\n".join(lines)
    if out_dir:
        path = os.path.join(out_dir, "abort_dump.txt")
        with open(path, "w") as f:
            f.write(text + "\n")
        return path
    return None
