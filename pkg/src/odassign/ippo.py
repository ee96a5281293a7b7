"""Independent PPO for OD-router agents with one shared policy and value net."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import mlp
from .env import OBS_DIM, EnvConfig, EpisodeLog, TrafficEnv
from .errors import CheckpointError, ConfigError, RolloutError
from .heads import make_head
from .network import MAX_ROUTES, Objective, uniform_action
from .tntp import write_atomic

# strategy variants: (head, prune)
VARIANTS = {"S": ("softmax", False), "SA": ("softmax", True),
            "D": ("dirichlet", False), "DA": ("dirichlet", True)}
METRICS_HEADER = ["iter", "episodes", "mean_reward", "min_gap", "final_gap", "seconds"]
CHECKPOINT_NAME = "checkpoint.ckpt"
METRICS_NAME = "metrics.csv"


@dataclass(frozen=True)
class TrainConfig:
    hidden_size: int = 512
    num_layers: int = 3
    lr: float = 4e-5
    lr_schedule: str = "constant"
    clip: float = 0.2
    minibatch: int = 512
    gamma: float = 0.75
    steps_per_episode: int = 50
    workers: int = 5
    episodes_per_worker: int = 1
    gae_lambda: float = 0.95
    epochs: int = 4
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_episodes: int = 500
    seed: int = 0
    variant: str = "DA"
    objective: str = "ue"
    demand_mode: str = "fixed"
    beta_range: tuple = (0.5, 1.0)
    prune_threshold: float = 1e-4
    use_coords: bool = True
    checkpoint_every: int = 10
    parallel: bool = False
    record_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta_range", tuple(float(v) for v in self.beta_range))
        if not 0.0 < self.clip < 1.0:
            raise ConfigError("clip must lie in (0, 1)")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if self.workers < 1 or self.episodes_per_worker < 1:
            raise ConfigError("workers and episodes_per_worker must be at least 1")
        if self.hidden_size < 1 or self.num_layers < 1 or self.minibatch < 1 or self.epochs < 1:
            raise ConfigError("network sizes, minibatch and epochs must be positive")
        if self.lr < 0:
            raise ConfigError("learning rate must be nonnegative")
        if self.lr_schedule not in ("constant", "linear"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be at least 1")
        Objective.coerce(self.objective)

    @property
    def head(self):
        return VARIANTS[self.variant][0]

    @property
    def prune(self):
        return VARIANTS[self.variant][1]

    @property
    def hidden(self):
        return (self.hidden_size,) * self.num_layers

    def env_config(self):
        return EnvConfig(steps_per_episode=self.steps_per_episode,
                         prune_threshold=self.prune_threshold, prune=self.prune,
                         objective=self.objective, demand_mode=self.demand_mode,
                         beta_range=self.beta_range, seed=self.seed,
                         use_coords=self.use_coords)

    def to_dict(self):
        d = asdict(self)
        d["beta_range"] = list(self.beta_range)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training option(s): {', '.join(sorted(unknown))}")
        return cls(**d)


# policy --------------------------------------------------------------------

@dataclass(eq=False)
class Policy:
    """Shared actor (route-slot outputs) and critic (scalar) networks."""

    head_kind: str
    actor: mlp.MlpParams
    critic: mlp.MlpParams
    extra: np.ndarray

    def __post_init__(self):
        self.head = make_head(self.head_kind)

    @classmethod
    def create(cls, head_kind, hidden, rng, obs_dim=OBS_DIM):
        actor = mlp.init_mlp(obs_dim, hidden, MAX_ROUTES, rng, final_scale=0.01)
        critic = mlp.init_mlp(obs_dim, hidden, 1, rng, final_scale=1.0)
        return cls(head_kind, actor, critic, make_head(head_kind).init_extra(MAX_ROUTES))

    def act(self, obs, mask, rng, deterministic=False):
        """Returns ``(action, stored_sample, logp, value)`` for a batch of agents."""
        raw, _ = mlp.forward(self.actor, obs)
        a, stored, logp = self.head.act(raw, self.extra, mask, rng, deterministic)
        return a, stored, logp, self.value(obs)

    def value(self, obs):
        v, _ = mlp.forward(self.critic, obs)
        return v[..., 0]

    def tensors(self):
        return {**mlp.params_tensors(self.actor, "actor"),
                **mlp.params_tensors(self.critic, "critic"), "extra": self.extra}

    def meta(self):
        return {"head": self.head_kind, "actor": mlp.params_meta(self.actor),
                "critic": mlp.params_meta(self.critic)}

    @classmethod
    def from_parts(cls, meta, tensors):
        return cls(meta["head"], mlp.params_from(meta["actor"], tensors, "actor"),
                   mlp.params_from(meta["critic"], tensors, "critic"),
                   tensors.get("extra", np.zeros(0)).copy())

    def copy(self):
        return Policy(self.head_kind, self.actor.copy(), self.critic.copy(), self.extra.copy())


class UniformPolicy:
    """Even split over each agent's routes; a reference point for evaluation."""

    def act(self, obs, mask, rng, deterministic=False):
        a = mask / mask.sum(axis=1, keepdims=True)
        return a, a, np.zeros(len(a)), np.zeros(len(a))


# rollouts ------------------------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    obs: np.ndarray          # (T, agents, OBS_DIM)
    stored: np.ndarray       # (T, agents, MAX_ROUTES) pre-prune samples
    logp: np.ndarray         # (T, agents)
    rewards: np.ndarray      # (T, agents)
    values: np.ndarray       # (T, agents)
    mask: np.ndarray         # (agents, MAX_ROUTES)
    global_gaps: np.ndarray  # (T,)
    final_local_gaps: np.ndarray
    worker: int = 0
    episode: int = 0
    advantages: np.ndarray = None
    returns: np.ndarray = None

    def __len__(self):
        return len(self.rewards)


def run_episode(policy, env, rng, deterministic=False, worker=0, episode=0):
    state, obs = env.reset(rng)
    mask = env.mask
    rows = {k: [] for k in ("obs", "stored", "logp", "rewards", "values", "gaps")}
    done = False
    while not done:
        a, stored, logp, v = policy.act(obs, mask, rng, deterministic)
        rows["obs"].append(obs)
        rows["stored"].append(stored)
        rows["logp"].append(logp)
        rows["values"].append(v)
        state, obs, r, done, info = env.step(state, a)
        rows["rewards"].append(r)
        rows["gaps"].append(info["global_gap"])
    return Trajectory(np.array(rows["obs"]), np.array(rows["stored"]), np.array(rows["logp"]),
                      np.array(rows["rewards"]), np.array(rows["values"]), mask.copy(),
                      np.array(rows["gaps"]), state.gaps.copy(), worker, episode)


def worker_rng(seed, iteration, worker):
    return np.random.default_rng([int(seed), int(iteration), 1, int(worker)])


def collect_rollouts(policy, env, workers, episodes, seed, iteration, parallel=False):
    """Run ``episodes`` per worker, each worker on its own env copy and random stream."""
    def job(w):
        rng = worker_rng(seed, iteration, w)
        wenv = TrafficEnv(env.cfg, env.net, env.rs, env.dm, env.coords)
        try:
            return [run_episode(policy, wenv, rng, worker=w, episode=e)
                    for e in range(episodes)]
        except Exception as exc:
            raise RolloutError(w, exc) from exc

    if parallel and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(workers)))
    else:
        results = [job(w) for w in range(workers)]
    return [traj for res in results for traj in res]


def compute_gae(rewards, values, gamma, lam):
    """GAE over a ``(T, ...)`` episode with zero bootstrap after the last step."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0]) if len(rewards) else 0.0
    for t in range(len(rewards) - 1, -1, -1):
        nxt = values[t + 1] if t + 1 < len(rewards) else 0.0
        delta = rewards[t] + gamma * nxt - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values


# update --------------------------------------------------------------------

@dataclass
class LossReport:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    clip_frac: float = 0.0
    first_ratio_dev: float = 0.0
    minibatches: int = 0
    skipped: int = 0


@dataclass(eq=False)
class Optimizers:
    actor: mlp.Adam
    critic: mlp.Adam

    @classmethod
    def create(cls, lr):
        return cls(mlp.Adam(lr=lr), mlp.Adam(lr=lr))


def flatten(trajs):
    """Stack trajectories into per-sample arrays (agents x steps x episodes)."""
    def cat(name):
        return np.concatenate([getattr(tr, name).reshape(-1, *getattr(tr, name).shape[2:])
                               for tr in trajs])

    masks = np.concatenate([np.broadcast_to(tr.mask, tr.stored.shape).reshape(-1, MAX_ROUTES)
                            for tr in trajs])
    return {"obs": cat("obs"), "stored": cat("stored"), "logp": cat("logp"),
            "adv": cat("advantages"), "ret": cat("returns"), "mask": masks}


def surrogate_grad(ratio, adv, clip):
    """Per-sample clipped surrogate and its derivative with respect to log-prob."""
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_obj = ratio * adv
    clipped_obj = clipped * adv
    obj = np.minimum(unclipped_obj, clipped_obj)
    # the gradient flows only when the unclipped branch is the active minimum
    active = unclipped_obj <= clipped_obj
    return obj, np.where(active, ratio * adv, 0.0)


def ppo_update(batch, policy, opts, cfg, rng):
    """Clipped-surrogate policy step and squared-error value step, in place."""
    n = len(batch["obs"])
    adv = batch["adv"]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    rep = LossReport()
    sums = np.zeros(5)
    first = True
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch):
            idx = order[lo:lo + cfg.minibatch]
            obs, mask = batch["obs"][idx], batch["mask"][idx]
            b = len(idx)
            raw, cache = mlp.forward(policy.actor, obs)
            logp, ent, dlp, dent, dlp_x, dent_x = policy.head.logprob_grads(
                raw, policy.extra, batch["stored"][idx], mask)
            log_ratio = logp - batch["logp"][idx]
            ratio = np.exp(log_ratio)
            obj, g_lp = surrogate_grad(ratio, adv[idx], cfg.clip)
            v, vcache = mlp.forward(policy.critic, obs)
            verr = v[:, 0] - batch["ret"][idx]
            pl = -float(obj.mean()) - cfg.ent_coef * float(ent.mean())
            vl = float(np.mean(verr ** 2))
            if not (math.isfinite(pl) and math.isfinite(vl)):
                rep.skipped += 1
                continue
            if first:
                rep.first_ratio_dev = float(np.max(np.abs(ratio - 1.0)))
                first = False
            d_raw = -(g_lp[:, None] * dlp + cfg.ent_coef * dent) / b
            a_grads, _ = mlp.backward(policy.actor, cache, d_raw)
            a_tensors = policy.actor.tensors()
            if dlp_x is not None:
                a_grads = a_grads + [-(g_lp[:, None] * dlp_x + cfg.ent_coef * dent_x).sum(0) / b]
                a_tensors = a_tensors + [policy.extra]
            a_grads, _ = mlp.clip_by_global_norm(a_grads, cfg.max_grad_norm)
            c_grads, _ = mlp.backward(policy.critic, vcache,
                                      (2.0 * cfg.vf_coef * verr / b)[:, None])
            c_grads, _ = mlp.clip_by_global_norm(c_grads, cfg.max_grad_norm)
            ok_a = opts.actor.step(a_tensors, a_grads)
            ok_c = opts.critic.step(policy.critic.tensors(), c_grads)
            if not (ok_a and ok_c):
                rep.skipped += 1
            policy.actor.version += 1
            policy.critic.version += 1
            rep.minibatches += 1
            sums += [pl, vl, float(ent.mean()), float(np.mean(-log_ratio)),
                     float(np.mean(np.abs(ratio - 1.0) > cfg.clip))]
    if rep.minibatches:
        (rep.policy_loss, rep.value_loss, rep.entropy, rep.approx_kl,
         rep.clip_frac) = (sums / rep.minibatches).tolist()
    return rep


# training loop ----------------------------------------------------------------

@dataclass
class Metrics:
    rows: list = field(default_factory=list)

    def append(self, it, episodes, mean_reward, min_gap, final_gap, seconds):
        self.rows.append([int(it), int(episodes), float(mean_reward), float(min_gap),
                          float(final_gap), float(seconds)])

    def to_csv(self, record_time=False):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for it, ep, r, mg, fg, s in self.rows:
            w.writerow([it, ep, repr(r), repr(mg), repr(fg),
                        f"{s:.6f}" if record_time else "0"])
        return buf.getvalue()


@dataclass(eq=False)
class TrainState:
    cfg: TrainConfig
    policy: Policy
    opts: Optimizers
    iteration: int = 0
    episodes: int = 0
    metrics: Metrics = field(default_factory=Metrics)


def init_state(cfg):
    rng = np.random.default_rng([int(cfg.seed), 0, 0])
    policy = Policy.create(cfg.head, cfg.hidden, rng)
    return TrainState(cfg, policy, Optimizers.create(cfg.lr))


def dumps_train_state(st):
    tensors = dict(st.policy.tensors())
    tensors.update(st.opts.actor.state_tensors("opt_actor"))
    tensors.update(st.opts.critic.state_tensors("opt_critic"))
    meta = {"kind": "train", "policy": st.policy.meta(), "config": st.cfg.to_dict(),
            "iteration": st.iteration, "episodes": st.episodes,
            "opt_actor": st.opts.actor.state_meta(), "opt_critic": st.opts.critic.state_meta(),
            # wall time is kept out of the file unless asked for, so reruns are byte-identical
            "metrics": [r[:-1] + [r[-1] if st.cfg.record_time else 0.0]
                        for r in st.metrics.rows]}
    return mlp.dumps_checkpoint(tensors, meta)


def loads_train_state(data):
    tensors, meta = mlp.loads_checkpoint(data)
    if meta.get("kind") != "train":
        raise CheckpointError(f"checkpoint kind {meta.get('kind')!r} is not a training state")
    policy = Policy.from_parts(meta["policy"], tensors)
    n_actor = len(policy.actor.tensors()) + (1 if policy.extra.size else 0)
    opts = Optimizers(
        mlp.Adam.from_state(meta["opt_actor"], tensors, "opt_actor", n_actor),
        mlp.Adam.from_state(meta["opt_critic"], tensors, "opt_critic",
                            len(policy.critic.tensors())))
    cfg = TrainConfig.from_dict({**meta["config"], "beta_range": tuple(meta["config"]["beta_range"])})
    return TrainState(cfg, policy, opts, meta["iteration"], meta["episodes"],
                      Metrics([list(r) for r in meta["metrics"]]))


def load_policy(path, obs_dim=OBS_DIM):
    """Policy from a training checkpoint file, checked against ``obs_dim``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    policy = loads_train_state(data).policy
    if policy.actor.in_dim != obs_dim or policy.actor.out_dim != MAX_ROUTES:
        raise CheckpointError(f"checkpoint {path} expects observations of size "
                              f"{policy.actor.in_dim}, environment gives {obs_dim}")
    return policy


def train_iteration(st, env):
    """One collect + update round; appends a metrics row and returns the loss report."""
    cfg = st.cfg
    t0 = time.perf_counter()
    it = st.iteration + 1
    lr = cfg.lr
    if cfg.lr_schedule == "linear":
        # decays to zero at the last iteration of the episode budget
        per_iter = cfg.workers * cfg.episodes_per_worker
        n_iters = max(cfg.total_episodes // per_iter, 1)
        lr = cfg.lr * max(1.0 - (it - 1) / n_iters, 0.0)
    st.opts.actor.lr = st.opts.critic.lr = lr
    trajs = collect_rollouts(st.policy, env, cfg.workers, cfg.episodes_per_worker,
                             cfg.seed, it, cfg.parallel)
    for tr in trajs:
        tr.advantages, tr.returns = compute_gae(tr.rewards, tr.values, cfg.gamma,
                                                cfg.gae_lambda)
    rep = ppo_update(flatten(trajs), st.policy, st.opts, cfg,
                     np.random.default_rng([int(cfg.seed), it, 2]))
    st.iteration = it
    st.episodes += len(trajs)
    st.metrics.append(it, st.episodes,
                      np.mean([tr.rewards.sum(axis=0).mean() for tr in trajs]),
                      np.mean([tr.global_gaps.min() for tr in trajs]),
                      np.mean([tr.global_gaps[-1] for tr in trajs]),
                      time.perf_counter() - t0)
    return rep, trajs


def save_checkpoint(st, out_dir):
    path = Path(out_dir) / CHECKPOINT_NAME
    try:
        write_atomic(path, dumps_train_state(st))
    except OSError as exc:
        raise CheckpointError(f"could not write checkpoint {path}: {exc}") from exc
    return path


def train_loop(cfg, net, rs, dm, coords=None, out_dir=None, resume=None,
               max_seconds=None, callback=None):
    """Alternate rollouts and PPO updates until ``cfg.total_episodes`` episodes.

    With ``out_dir`` the metrics CSV is rewritten and a checkpoint saved every
    ``checkpoint_every`` iterations and at the end.  ``resume`` is a
    checkpoint path to continue from.
    """
    if resume is not None:
        st = loads_train_state(Path(resume).read_bytes())
        if st.cfg.to_dict() != cfg.to_dict():
            diff = sorted(k for k, v in cfg.to_dict().items() if st.cfg.to_dict().get(k) != v)
            if set(diff) - {"total_episodes", "checkpoint_every", "parallel", "record_time"}:
                raise ConfigError(f"resume config differs in: {', '.join(diff)}")
            st.cfg = cfg
    else:
        st = init_state(cfg)
    env = TrafficEnv(cfg.env_config(), net, rs, dm, coords)
    per_iter = cfg.workers * cfg.episodes_per_worker
    start = time.perf_counter()
    while st.episodes + per_iter <= cfg.total_episodes:
        rep, _ = train_iteration(st, env)
        if callback is not None:
            callback(st, rep)
        last = st.episodes + per_iter > cfg.total_episodes
        timed_out = max_seconds is not None and time.perf_counter() - start > max_seconds
        if out_dir is not None:
            write_atomic(Path(out_dir) / METRICS_NAME, st.metrics.to_csv(cfg.record_time))
            if st.iteration % cfg.checkpoint_every == 0 or last or timed_out:
                save_checkpoint(st, out_dir)
        if timed_out:
            break
    return st


# evaluation ----------------------------------------------------------------

@dataclass
class EvalReport:
    min_gaps: list
    final_gaps: list
    traces: list

    @property
    def mean_min_gap(self):
        return float(np.mean(self.min_gaps))

    @property
    def mean_final_gap(self):
        return float(np.mean(self.final_gaps))

    def to_json(self):
        return json.dumps({"episodes": len(self.min_gaps), "mean_min_gap": self.mean_min_gap,
                           "mean_final_gap": self.mean_final_gap, "min_gaps": self.min_gaps,
                           "final_gaps": self.final_gaps}, indent=2) + "\n"

    def episode_log(self):
        log = EpisodeLog()
        for ep, (gaps, rewards) in enumerate(self.traces):
            for t, (g, r) in enumerate(zip(gaps, rewards), start=1):
                log.record(ep, t, g, r)
        return log


def evaluate_policy(policy, env, episodes=5, seed=0, deterministic=True):
    """Min and final global gap of each evaluation episode."""
    mins, finals, traces = [], [], []
    for ep in range(episodes):
        rng = np.random.default_rng([int(seed), int(ep), 3])
        tr = run_episode(policy, env, rng, deterministic=deterministic, episode=ep)
        mins.append(float(tr.global_gaps.min()))
        finals.append(float(tr.global_gaps[-1]))
        traces.append((tr.global_gaps.tolist(), tr.rewards.mean(axis=1).tolist()))
    return EvalReport(mins, finals, traces)


def uniform_gap(env, rng=None):
    """Global gap of the even split, for comparison with evaluation results."""
    state, _ = env.reset(rng)
    state, _, _, _, info = env.step(state, uniform_action(env.rs))
    return info["global_gap"]
