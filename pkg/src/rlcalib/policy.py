"""Stochastic SE(3) policies over extrinsic candidates.

:class:`PolicyParams` is the Bingham x diagonal-Gaussian policy: an
unconstrained 4x4 matrix ``A`` orthogonalized by Gram-Schmidt into the
Bingham axes ``M``, three softplus pre-activations giving ordered
dispersions, and a translation mean / log-std. :class:`Gaussian4Params` is
the baseline that samples a Gaussian 4-vector and normalizes it onto S³.

Both expose the same duck-typed interface used by the trainer: a flat
parameter vector, batched sampling, batched log-probabilities with analytic
gradients, an entropy proxy and a point estimate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import bingham
from .bingham import BinghamParams
from .geometry import Pose, UnitQuaternion, quat_normalize

STD_MIN = 1e-5
STD_MAX = 10.0
PIVOT_MIN = 1e-8
LOG_2PI = np.log(2.0 * np.pi)
LOW_CONFIDENCE_Z3 = -5.0
LOW_CONFIDENCE_STD = 0.05


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class DegeneratePivot(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Gram-Schmidt with reverse-mode derivative
# ---------------------------------------------------------------------------
def gram_schmidt(A):
    """Orthonormalize the columns of ``A`` in order.

    Returns ``(M, r)`` where ``r`` holds the pivot norms. Raises
    :class:`DegeneratePivot` if any pivot norm is below 1e-8.
    """
    A = np.asarray(A, dtype=float)
    M = np.zeros_like(A)
    r = np.zeros(A.shape[1])
    for k in range(A.shape[1]):
        a = A[:, k]
        w = a - M[:, :k] @ (M[:, :k].T @ a)
        # second pass restores orthogonality lost to cancellation; same map in exact arithmetic
        w = w - M[:, :k] @ (M[:, :k].T @ w)
        r[k] = np.linalg.norm(w)
        if r[k] < PIVOT_MIN:
            raise DegeneratePivot(f"Gram-Schmidt pivot {k} has norm {r[k]:.2e}")
        M[:, k] = w / r[k]
    return M, r


def gram_schmidt_vjp(A, M, r, gM):
    """Pull back gradients ``gM`` (..., 4, 4) on ``M`` to gradients on ``A``."""
    gM = np.array(gM, dtype=float)
    gA = np.zeros_like(gM)
    n = A.shape[1]
    for k in range(n - 1, -1, -1):
        a = A[:, k]
        m = M[:, k]
        g = gM[..., :, k]
        gw = (g - np.multiply.outer(g @ m, m)) / r[k]
        Mk = M[:, :k]
        proj = gw @ Mk  # (..., k): m_jᵀ gw
        gA[..., :, k] += gw - proj @ Mk.T
        coef = Mk.T @ a  # (k,): m_jᵀ a
        # d/dm_j of -(m_jᵀ a) m_j  contracted with gw
        gM[..., :, :k] -= np.multiply.outer(gw, coef) + a[:, None] * proj[..., None, :]
    return gA


# ---------------------------------------------------------------------------
# actions
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Action:
    """One extrinsic candidate and its log-probability under the sampling policy."""

    rotation: UnitQuaternion
    translation: np.ndarray
    log_prob: float
    raw: np.ndarray | None = None

    def as_pose(self) -> Pose:
        return Pose(self.rotation, self.translation)


@dataclass(eq=False)
class ActionBatch:
    """``K`` actions stored as arrays.

    ``raw`` is the sampled 4-vector before any normalization; for the Bingham
    policy it equals ``quats``.
    """

    quats: np.ndarray
    trans: np.ndarray
    log_prob: np.ndarray
    raw: np.ndarray
    acceptance_rate: float = float("nan")

    def __len__(self):
        return len(self.quats)

    def __getitem__(self, i) -> Action:
        return Action(UnitQuaternion.from_array(self.quats[i]), self.trans[i].copy(),
                      float(self.log_prob[i]), self.raw[i].copy())


class PointEstimate(NamedTuple):
    pose: Pose
    unique: bool
    low_confidence: bool


def _gaussian_terms(t, mu, log_std):
    """Diagonal Gaussian log-density of rows ``t`` and its parameter gradients."""
    raw_std = np.exp(log_std)
    std = np.clip(raw_std, STD_MIN, STD_MAX)
    free = (raw_std > STD_MIN) & (raw_std < STD_MAX)
    d = (t - mu) / std
    val = np.sum(-0.5 * d**2 - np.log(std) - 0.5 * LOG_2PI, axis=-1)
    g_mu = d / std
    g_ls = (d**2 - 1.0) * free
    return val, g_mu, g_ls


# ---------------------------------------------------------------------------
# Bingham x Gaussian policy
# ---------------------------------------------------------------------------
class Materialized(NamedTuple):
    bingham: BinghamParams
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Raw parameters of the Bingham rotation x Gaussian translation policy.

    Attributes
    ----------
    A : (4, 4) array
        Unconstrained; its Gram-Schmidt orthonormalization gives ``M``.
    c : (3,) array
        Softplus pre-activations of the dispersion gaps.
    mu : (3,) array
        Translation mean in meters.
    log_std : (3,) array
        Log of the per-axis translation std (clamped to [1e-5, 10] m).
    nodes : int
        Quadrature nodes used for the normalization constant.
    """

    A: np.ndarray
    c: np.ndarray
    mu: np.ndarray
    log_std: np.ndarray
    nodes: int = bingham.DEFAULT_NODES

    kind = "bingham"
    size = 25

    def __post_init__(self):
        for name, shape in (("A", (4, 4)), ("c", (3,)), ("mu", (3,)), ("log_std", (3,))):
            arr = np.array(getattr(self, name), dtype=float).reshape(shape)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"policy parameter {name} is not finite")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    # -- flat vector ------------------------------------------------------
    def flat(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.c, self.mu, self.log_std])

    def with_flat(self, v) -> PolicyParams:
        v = np.asarray(v, dtype=float)
        return PolicyParams(v[:16].reshape(4, 4), v[16:19], v[19:22], v[22:25], self.nodes)

    # -- constrained view -------------------------------------------------
    def dispersion(self):
        """``(Z, dZ/dc)``; floored entries get zero Jacobian rows."""
        s = softplus(self.c)
        raw = -np.array([s[0] + s[1] + s[2], s[1] + s[2], s[2]])
        sg = sigmoid(self.c)
        J = -np.array([[sg[0], sg[1], sg[2]],
                       [0.0, sg[1], sg[2]],
                       [0.0, 0.0, sg[2]]])
        floored = raw < bingham.Z_FLOOR
        z = np.where(floored, bingham.Z_FLOOR, raw)
        J[floored] = 0.0
        return np.append(z, 0.0), J

    def sigma(self) -> np.ndarray:
        return np.clip(np.exp(self.log_std), STD_MIN, STD_MAX)

    def materialize(self) -> Materialized:
        M, _ = gram_schmidt(self.A)
        Z, _ = self.dispersion()
        return Materialized(BinghamParams(M, Z), self.mu.copy(), self.sigma())

    def regularize(self, rng: np.random.Generator, scale: float = 1e-3) -> PolicyParams:
        """Re-randomize ``A`` until Gram-Schmidt pivots are well conditioned."""
        A = self.A
        while True:
            try:
                gram_schmidt(A)
                break
            except DegeneratePivot:
                A = A + scale * rng.standard_normal((4, 4))
        if A is self.A:
            return self
        return PolicyParams(A, self.c, self.mu, self.log_std, self.nodes)

    # -- distribution -----------------------------------------------------
    def sample(self, rng: np.random.Generator, k: int) -> ActionBatch:
        mat = self.materialize()
        q, stats = bingham.bingham_sample(mat.bingham, rng, k, return_stats=True)
        t = mat.mu + mat.sigma * rng.standard_normal((k, 3))
        logp, _ = self.log_prob(q, t, q, with_grad=False)
        return ActionBatch(q, t, logp, q.copy(), stats.rate)

    def log_prob(self, quats, trans, raw=None, with_grad: bool = True):
        """Log-probabilities of ``K`` actions and their gradients (K, 25)."""
        q = np.atleast_2d(np.asarray(quats, dtype=float))
        t = np.atleast_2d(np.asarray(trans, dtype=float))
        M, r = gram_schmidt(self.A)
        Z, J = self.dispersion()
        log_n, e_u2 = bingham.log_norm_const(Z, self.nodes)
        v = q @ M
        val = (v * v) @ Z - log_n
        g_val, g_mu, g_ls = _gaussian_terms(t, self.mu, self.log_std)
        val = val + g_val
        if not with_grad:
            return val, None
        gM = 2.0 * q[:, :, None] * (Z * v)[:, None, :]
        gA = gram_schmidt_vjp(self.A, M, r, gM)
        gc = (v[:, :3] ** 2 - e_u2[:3]) @ J
        grad = np.concatenate([gA.reshape(len(q), 16), gc, g_mu, g_ls], axis=1)
        return val, grad

    def entropy_proxy(self):
        """Spread proxy ``Σ z_i / 200 + Σ ln σ`` and its gradient."""
        Z, J = self.dispersion()
        raw_std = np.exp(self.log_std)
        free = (raw_std > STD_MIN) & (raw_std < STD_MAX)
        val = Z[:3].sum() / 200.0 + np.log(self.sigma()).sum()
        grad = np.zeros(self.size)
        grad[16:19] = J.sum(axis=0) / 200.0
        grad[22:25] = free.astype(float)
        return float(val), grad

    def point_estimate(self) -> PointEstimate:
        mat = self.materialize()
        q, unique = bingham.mode(mat.bingham)
        low = bool(mat.bingham.Z[2] > LOW_CONFIDENCE_Z3 or np.any(mat.sigma > LOW_CONFIDENCE_STD))
        return PointEstimate(Pose(UnitQuaternion.from_array(q), mat.mu), unique, low)

    def concentration(self) -> np.ndarray:
        """``(z1, z2, z3, sx, sy, sz)`` for reporting."""
        Z, _ = self.dispersion()
        return np.concatenate([Z[:3], self.sigma()])


def init_params(rng: np.random.Generator, noise: float = 0.01,
                z_init=(-2.0, -1.0, -0.5), std_init: float = 0.5,
                nodes: int = bingham.DEFAULT_NODES) -> PolicyParams:
    """Uninformative starting policy: nearly uniform rotations, zero translation."""
    z1, z2, z3 = z_init
    c = softplus_inv([z2 - z1, z3 - z2, -z3])
    A = np.eye(4) + noise * rng.standard_normal((4, 4))
    return PolicyParams(A, c, np.zeros(3), np.full(3, np.log(std_init)), nodes)


def params_from_bingham(M, Z, mu, sigma, nodes: int = bingham.DEFAULT_NODES) -> PolicyParams:
    """Raw parameters that materialize to the given ``(M, Z, mu, sigma)``.

    Tied or zero dispersions are reproduced to within 1e-12.
    """
    Z = bingham.check_dispersion(Z)
    gaps = np.maximum([Z[1] - Z[0], Z[2] - Z[1], -Z[2]], 1e-12)
    c = softplus_inv(gaps)
    return PolicyParams(np.asarray(M, dtype=float), c, mu, np.log(sigma), nodes)


# ---------------------------------------------------------------------------
# Gaussian-in-R⁴ baseline
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Gaussian4Params:
    """Rotation drawn as a normalized Gaussian 4-vector; translation as above.

    The log-probability is that of the pre-normalization 4-vector, which is
    what a conventional Gaussian policy optimizes.
    """

    mean4: np.ndarray
    log_std4: np.ndarray
    mu: np.ndarray
    log_std: np.ndarray

    kind = "gaussian4"
    size = 14

    def __post_init__(self):
        for name, shape in (("mean4", (4,)), ("log_std4", (4,)), ("mu", (3,)), ("log_std", (3,))):
            arr = np.array(getattr(self, name), dtype=float).reshape(shape)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"policy parameter {name} is not finite")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mean4, self.log_std4, self.mu, self.log_std])

    def with_flat(self, v) -> Gaussian4Params:
        v = np.asarray(v, dtype=float)
        return Gaussian4Params(v[:4], v[4:8], v[8:11], v[11:14])

    def regularize(self, rng: np.random.Generator, scale: float = 1e-3) -> Gaussian4Params:
        if np.linalg.norm(self.mean4) >= PIVOT_MIN:
            return self
        return Gaussian4Params(self.mean4 + scale * rng.standard_normal(4), self.log_std4,
                               self.mu, self.log_std)

    def sigma(self) -> np.ndarray:
        return np.clip(np.exp(self.log_std), STD_MIN, STD_MAX)

    def sample(self, rng: np.random.Generator, k: int) -> ActionBatch:
        s4 = np.clip(np.exp(self.log_std4), STD_MIN, STD_MAX)
        y = self.mean4 + s4 * rng.standard_normal((k, 4))
        q = quat_normalize(y)
        t = self.mu + self.sigma() * rng.standard_normal((k, 3))
        logp, _ = self.log_prob(q, t, y, with_grad=False)
        return ActionBatch(q, t, logp, y, 1.0)

    def log_prob(self, quats, trans, raw=None, with_grad: bool = True):
        y = np.atleast_2d(np.asarray(quats if raw is None else raw, dtype=float))
        t = np.atleast_2d(np.asarray(trans, dtype=float))
        r_val, r_mu, r_ls = _gaussian_terms(y, self.mean4, self.log_std4)
        t_val, t_mu, t_ls = _gaussian_terms(t, self.mu, self.log_std)
        val = r_val + t_val
        if not with_grad:
            return val, None
        return val, np.concatenate([r_mu, r_ls, t_mu, t_ls], axis=1)

    def entropy_proxy(self):
        raw4 = np.exp(self.log_std4)
        raw3 = np.exp(self.log_std)
        val = np.log(np.clip(raw4, STD_MIN, STD_MAX)).sum() + np.log(self.sigma()).sum()
        grad = np.concatenate([np.zeros(4), ((raw4 > STD_MIN) & (raw4 < STD_MAX)).astype(float),
                               np.zeros(3), ((raw3 > STD_MIN) & (raw3 < STD_MAX)).astype(float)])
        return float(val), grad

    def angular_spread(self) -> float:
        s4 = np.clip(np.exp(self.log_std4), STD_MIN, STD_MAX)
        return float(s4.max() / max(np.linalg.norm(self.mean4), PIVOT_MIN))

    def point_estimate(self) -> PointEstimate:
        q = quat_normalize(self.mean4)
        if q[0] < 0:
            q = -q
        # same confidence rule as the Bingham policy: spread of a z3 = -5 Bingham
        z_equiv = -0.5 / self.angular_spread() ** 2
        low = bool(z_equiv > LOW_CONFIDENCE_Z3 or np.any(self.sigma() > LOW_CONFIDENCE_STD))
        return PointEstimate(Pose(UnitQuaternion.from_array(q), self.mu), True, low)

    def concentration(self) -> np.ndarray:
        z_equiv = max(-0.5 / self.angular_spread() ** 2, bingham.Z_FLOOR)
        return np.concatenate([np.full(3, z_equiv), self.sigma()])


def init_gaussian4(rng: np.random.Generator, noise: float = 0.01, std_init: float = 0.5,
                   rot_std_init: float = 0.5) -> Gaussian4Params:
    """Nearly uniform normalized-Gaussian start matching :func:`init_params`."""
    mean4 = np.array([0.0, 0.0, 0.0, 0.1]) + noise * rng.standard_normal(4)
    return Gaussian4Params(mean4, np.full(4, np.log(rot_std_init)), np.zeros(3),
                           np.full(3, np.log(std_init)))


# ---------------------------------------------------------------------------
# functional API
# ---------------------------------------------------------------------------
def materialize(p: PolicyParams) -> Materialized:
    return p.materialize()


def sample_actions(p, rng: np.random.Generator, k: int) -> ActionBatch:
    if k < 1:
        raise ValueError("need at least one action")
    return p.sample(rng, k)


def log_prob(p, action: Action):
    """Log-probability of a single action and its gradient w.r.t. the raw parameters."""
    raw = None if action.raw is None else action.raw[None]
    val, grad = p.log_prob(np.asarray(action.rotation)[None], action.translation[None], raw)
    return float(val[0]), grad[0]


def point_estimate(p) -> PointEstimate:
    return p.point_estimate()
