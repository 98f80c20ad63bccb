"""Clipped-surrogate policy optimization for a single-step decision problem.

Each episode is one action: the policy proposes a candidate extrinsic, the
environment scores it, and the episode ends. With a single state the value
function collapses to a scalar baseline and advantages are simply rewards
minus that baseline.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .alignment import DegenerateGeometry
from .bingham import DEFAULT_NODES, SamplingError
from .geometry import Pose, quat_conj, quat_mul, quat_to_euler
from .policy import PolicyParams, init_gaussian4, init_params, softplus

log = logging.getLogger(__name__)

CONVERGED = "converged"
NON_CONVERGED = "non-converged"
DEGENERATE_INPUT = "degenerate-input"


@dataclass
class TrainConfig:
    """Trainer hyperparameters.

    ``lr_min_ratio`` sets the final learning rate of a cosine decay over
    ``iterations``; ``lr_concentration`` multiplies the step size of the
    rotation-dispersion pre-activations, whose natural scale (tens to
    hundreds) is far larger than that of the other parameters.
    """

    batch_size: int = 64
    iterations: int = 2000
    clip: float = 0.2
    lr: float = 5e-3
    epochs: int = 4
    entropy_coef: float = 1e-3
    baseline_lr: float = 0.1
    window: int = 100
    tol: float = 1e-4
    kl_stop: float = 0.05
    lr_min_ratio: float = 0.05
    lr_concentration: float = 10.0
    n_starts: int = 4
    policy: str = "bingham"
    init_std: float = 0.5
    nodes: int = DEFAULT_NODES
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 8:
            raise ValueError("batch_size must be at least 8")
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if self.lr <= 0 or self.baseline_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1 or self.iterations < 1 or self.window < 1 or self.n_starts < 1:
            raise ValueError("epochs, iterations, window and n_starts must be >= 1")
        if not 0.0 < self.lr_min_ratio <= 1.0:
            raise ValueError("lr_min_ratio must lie in (0, 1]")
        if self.policy not in ("bingham", "gaussian4"):
            raise ValueError(f"unknown rotation policy {self.policy!r}")

    def learning_rate(self, it: int) -> float:
        frac = it / max(self.iterations - 1, 1)
        cos = 0.5 * (1.0 + np.cos(np.pi * frac))
        return self.lr * (self.lr_min_ratio + (1.0 - self.lr_min_ratio) * cos)


class Adam:
    """Adam ascent state for a flat parameter vector."""

    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, grad) -> np.ndarray:
        """Normalized ascent direction for ``grad`` (multiply by the step size)."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class UpdateStats:
    epochs_run: int
    approx_kl: float
    clip_fraction: float
    baseline: float
    first_ratios: np.ndarray


def normalized_advantages(rewards, baseline: float) -> np.ndarray:
    adv = np.asarray(rewards, dtype=float) - baseline
    adv = adv - adv.mean()
    std = adv.std()
    if std < 1e-12:
        return np.zeros_like(adv)
    return adv / std


def surrogate_gradient(ratio, adv, grad_logp, clip: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the clipped surrogate ``mean min(ρÂ, clip(ρ)Â)``.

    A sample contributes ``ρ Â ∇log π`` unless the clipped branch is the
    minimum, in which case its gradient is zero. Returns the gradient and
    the boolean mask of clipped samples.
    """
    clipped = ((adv > 0) & (ratio > 1 + clip)) | ((adv < 0) & (ratio < 1 - clip))
    w = np.where(clipped, 0.0, ratio * adv)
    return w @ grad_logp / len(adv), clipped


def ppo_update(p, quats, trans, raw, rewards, old_logp, cfg: TrainConfig,
               opt: Adam | None = None, baseline: float = 0.0, lr: float | None = None):
    """One clipped-surrogate update from a batch of scored actions.

    The surrogate gradient goes through Adam; the entropy-proxy bonus is
    added as a plain gradient step of size ``lr * entropy_coef`` so its
    drift stays bounded by that product per epoch.

    Returns
    -------
    (params, baseline, UpdateStats)
    """
    rewards = np.asarray(rewards, dtype=float)
    if len(rewards) != len(quats):
        raise ValueError("rewards and actions differ in length")
    opt = Adam(p.size) if opt is None else opt
    lr = cfg.lr if lr is None else lr
    scale = np.ones(p.size)
    adv = normalized_advantages(rewards, baseline)
    kl, clip_frac, first = 0.0, 0.0, None
    epochs_run = 0
    for epoch in range(cfg.epochs):
        logp, grad = p.log_prob(quats, trans, raw)
        log_ratio = logp - old_logp
        kl = float(np.mean(-log_ratio))
        if epoch == 0:
            first = np.exp(log_ratio)
        elif kl > cfg.kl_stop:
            break
        ratio = np.exp(log_ratio)
        g, clipped = surrogate_gradient(ratio, adv, grad, cfg.clip)
        clip_frac = float(clipped.mean())
        _, g_ent = p.entropy_proxy()
        if isinstance(p, PolicyParams):
            # dispersion gaps move by a fixed fraction of their size per step
            scale[16:19] = cfg.lr_concentration * np.maximum(softplus(p.c), 1.0)
        step = lr * scale * opt.step(g) + lr * cfg.entropy_coef * g_ent
        p = p.with_flat(p.flat() + step)
        epochs_run += 1
    # squared-error descent on (V - mean R)²/2
    baseline = baseline + cfg.baseline_lr * (rewards.mean() - baseline)
    return p, baseline, UpdateStats(epochs_run, kl, clip_frac, baseline, first)


@dataclass
class TrainTrace:
    """Per-iteration training record.

    ``entropy`` holds the two proxy terms ``(Σ z_i / 200, Σ ln σ)``;
    ``concentration`` holds ``(z1, z2, z3, sx, sy, sz)``;
    ``estimate_reward`` is the reward of the point estimate after the update.
    """

    mean_reward: list = field(default_factory=list)
    max_reward: list = field(default_factory=list)
    best_reward: list = field(default_factory=list)
    estimate_reward: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    concentration: list = field(default_factory=list)
    estimate_q: list = field(default_factory=list)
    estimate_t: list = field(default_factory=list)
    acceptance_rate: list = field(default_factory=list)

    def __len__(self):
        return len(self.mean_reward)

    def as_arrays(self) -> dict:
        return {k: np.asarray(v) for k, v in asdict(self).items()}

    def first_reaching(self, level: float) -> int | None:
        """First iteration whose point-estimate reward reaches ``level``."""
        hits = np.flatnonzero(np.asarray(self.estimate_reward) >= level)
        return int(hits[0]) if len(hits) else None


@dataclass
class CalibrationResult:
    """Outcome of a calibration run.

    ``translation_error`` (m) and ``euler_error`` (deg) are per-axis and
    present only when the true extrinsic is known; the rotation error is
    taken from ``q_err = q_true⁻¹ ⊗ q_est``.
    """

    estimate: Pose
    reward: float
    status: str
    iterations: int
    seed: int
    low_confidence: bool = True
    diagnostic: str = ""
    best_sampled: Pose | None = None
    best_sampled_reward: float = float("nan")
    translation_error: np.ndarray | None = None
    euler_error: np.ndarray | None = None
    concentration: np.ndarray | None = None
    start: int = 0
    wall_time: float = float("nan")
    config: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def euler(self):
        return quat_to_euler(self.estimate.quat)

    def with_truth(self, x_true: Pose) -> CalibrationResult:
        err_t, err_e = extrinsic_errors(self.estimate, x_true)
        self.translation_error = err_t
        self.euler_error = err_e
        return self


def extrinsic_errors(estimate: Pose, truth: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis translation error (m) and Euler error (deg) of ``estimate``."""
    err_t = np.abs(estimate.translation - truth.translation)
    e = quat_to_euler(quat_mul(quat_conj(truth.quat), estimate.quat))
    return err_t, np.abs(np.array([e.roll, e.pitch, e.yaw]))


def initial_params(cfg: TrainConfig, rng: np.random.Generator):
    if cfg.policy == "gaussian4":
        return init_gaussian4(rng, std_init=cfg.init_std)
    return init_params(rng, std_init=cfg.init_std, nodes=cfg.nodes)


def _is_converged(trace: TrainTrace, cfg: TrainConfig, low_confidence: bool) -> bool:
    n = len(trace)
    if low_confidence or n < 2 * cfg.window:
        return False
    r = np.asarray(trace.mean_reward)
    recent = r[n - cfg.window:].mean()
    before = r[n - 2 * cfg.window:n - cfg.window].mean()
    return abs(recent - before) < cfg.tol


def train(env, p0=None, cfg: TrainConfig | None = None, rng: np.random.Generator | None = None,
          callback=None):
    """Optimize one policy against ``env``.

    Parameters
    ----------
    env : CalibrationEnv
        Provides ``evaluate_batch(quats, trans)`` and ``evaluate(pose)``.
    p0 : PolicyParams or Gaussian4Params, optional
        Starting policy; drawn from ``cfg`` when omitted.
    cfg : TrainConfig
    rng : numpy Generator, optional
        Defaults to ``default_rng(cfg.seed)``.
    callback : callable, optional
        Called as ``callback(it, params, trace)`` after every update; a
        truthy return value ends training at that iteration.

    Returns
    -------
    (CalibrationResult, TrainTrace)
        Status is ``converged`` once the mean reward has settled and the
        point estimate is confident; ``non-converged`` when the iteration
        budget runs out first (the estimate is still reported, alongside
        the best sampled candidate); ``degenerate-input`` when the
        trajectories cannot be aligned at all.
    """
    cfg = TrainConfig() if cfg is None else cfg
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    p = initial_params(cfg, rng) if p0 is None else p0
    trace = TrainTrace()
    t_start = time.perf_counter()

    def finish(status, it, diagnostic, best_pose, best_r):
        est = p.point_estimate()
        try:
            reward = env.evaluate(est.pose)
        except DegenerateGeometry:
            reward = 0.0
        return CalibrationResult(
            estimate=est.pose, reward=reward, status=status, iterations=it, seed=cfg.seed,
            low_confidence=est.low_confidence, diagnostic=diagnostic, best_sampled=best_pose,
            best_sampled_reward=best_r, concentration=p.concentration(),
            wall_time=time.perf_counter() - t_start, config=asdict(cfg)), trace

    try:
        env.evaluate(p.point_estimate().pose)
    except DegenerateGeometry as exc:
        return finish(DEGENERATE_INPUT, 0, f"degenerate input: {exc}", None, float("nan"))

    opt = Adam(p.size)
    baseline = 0.0
    best_r, best_pose = -np.inf, None
    status, diagnostic = NON_CONVERGED, ""
    it = 0
    for it in range(1, cfg.iterations + 1):
        p = p.regularize(rng)
        try:
            batch = p.sample(rng, cfg.batch_size)
        except SamplingError as exc:
            diagnostic = f"sampler failure at iteration {it}: {exc}"
            it -= 1
            break
        res = env.evaluate_batch(batch.quats, batch.trans)
        rewards = res.reward
        k = int(np.argmax(rewards))
        if rewards[k] > best_r:
            best_r, best_pose = float(rewards[k]), batch[k].as_pose()
        if it == 1:
            baseline = float(rewards.mean())
        p, baseline, _ = ppo_update(p, batch.quats, batch.trans, batch.raw, rewards,
                                    batch.log_prob, cfg, opt, baseline,
                                    lr=cfg.learning_rate(it - 1))
        est = p.point_estimate()
        er = env.evaluate_batch(est.pose.quat[None], est.pose.translation[None]).reward[0]
        ent_z = float(p.concentration()[:3].sum() / 200.0)
        trace.mean_reward.append(float(rewards.mean()))
        trace.max_reward.append(float(rewards[k]))
        trace.best_reward.append(best_r)
        trace.estimate_reward.append(float(er))
        trace.entropy.append((ent_z, float(np.log(p.concentration()[3:]).sum())))
        trace.concentration.append(p.concentration())
        trace.estimate_q.append(est.pose.quat)
        trace.estimate_t.append(est.pose.translation)
        trace.acceptance_rate.append(float(batch.acceptance_rate))
        if callback is not None and callback(it, p, trace):
            if not est.low_confidence:
                status = CONVERGED
            break
        if _is_converged(trace, cfg, est.low_confidence):
            status = CONVERGED
            break
    else:
        if not p.point_estimate().low_confidence:
            status = CONVERGED
    if status != CONVERGED and not diagnostic:
        z = p.concentration()
        diagnostic = (f"no confident estimate after {it} iterations "
                      f"(z3={z[2]:.3g}, max std={z[3:].max():.3g} m); "
                      f"best sampled reward {best_r:.4f}")
    return finish(status, it, diagnostic, best_pose, best_r)


def calibrate(env, cfg: TrainConfig | None = None, x_true: Pose | None = None,
              callback=None):
    """Multi-start training; the start whose estimate scores highest wins.

    Start ``i`` uses a generator spawned from ``SeedSequence(cfg.seed)``, so
    results depend only on the seed and the configuration.

    Returns
    -------
    (CalibrationResult, list of TrainTrace)
    """
    cfg = TrainConfig() if cfg is None else cfg
    t0 = time.perf_counter()
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_starts)
    results, traces = [], []
    for i, child in enumerate(children):
        res, trace = train(env, None, cfg, np.random.default_rng(child), callback)
        res.start = i
        log.info("start %d: status=%s reward=%.6f iterations=%d", i, res.status,
                 res.reward, res.iterations)
        results.append(res)
        traces.append(trace)
        if res.status == DEGENERATE_INPUT:
            break
    rank = {CONVERGED: 0, NON_CONVERGED: 1, DEGENERATE_INPUT: 2}
    best = min(results, key=lambda r: (rank[r.status], -r.reward, r.start))
    best.wall_time = time.perf_counter() - t0
    if x_true is not None:
        best.with_truth(x_true)
    return best, traces
