"""Umeyama trajectory alignment, absolute pose errors and the alignment reward."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Pose,
    Trajectory,
    UnitQuaternion,
    associate,
    geodesic_rotation_error,
    quat_angle,
    quat_conj,
    quat_left_matrix,
    quat_mul,
    quat_right_matrix,
    quat_to_rotmat,
    quat_rotate,
    rotmat_to_quat,
)

TRANSLATION_SCALE = 4.0


class DegenerateGeometry(ValueError):
    """Point sets too degenerate (rank < 2) for a unique rigid alignment."""


@dataclass
class AlignmentResult:
    transform: Pose
    translation_errors: np.ndarray
    rotation_errors: np.ndarray
    n: int
    reward: float
    divergent: bool = False
    squared_errors: bool = False
    translation_scale: float = TRANSLATION_SCALE
    extras: dict = field(default_factory=dict)

    def recompute_reward(self) -> float:
        return float(reward_from_errors(self.translation_errors, self.rotation_errors,
                                        self.squared_errors, self.translation_scale))

    @property
    def ape_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.translation_errors**2)))


def reward_from_errors(e_t, e_r, squared_errors: bool = False,
                       translation_scale: float = TRANSLATION_SCALE):
    """``exp(-sqrt(Σ e_t / (s N)) - sqrt(Σ e_r / (π² N)))`` over the last axis.

    With ``squared_errors`` the sums run over ``e_t²`` and ``e_r²`` instead.
    """
    e_t = np.asarray(e_t, dtype=float)
    e_r = np.asarray(e_r, dtype=float)
    if squared_errors:
        e_t, e_r = e_t**2, e_r**2
    n = e_t.shape[-1]
    return np.exp(-np.sqrt(e_t.sum(-1) / (translation_scale * n))
                  - np.sqrt(e_r.sum(-1) / (np.pi**2 * n)))


def _positions(x) -> np.ndarray:
    if isinstance(x, Trajectory):
        return x.translations
    return np.asarray(x, dtype=float)


def umeyama_batch(p_ref, p_est, rank_tol: float = 1e-9):
    """Rigid least-squares fit ``R p_est + t ≈ p_ref`` over the second-to-last axis.

    Returns ``R`` (..., 3, 3), ``t`` (..., 3) and a boolean ``degenerate``
    mask flagging cross-covariances of rank < 2.
    """
    p_ref = np.asarray(p_ref, dtype=float)
    p_est = np.asarray(p_est, dtype=float)
    mu_r = p_ref.mean(axis=-2)
    mu_e = p_est.mean(axis=-2)
    cr = p_ref - mu_r[..., None, :]
    ce = p_est - mu_e[..., None, :]
    n = p_est.shape[-2]
    C = np.einsum("...ni,...nj->...ij", cr, ce) / n
    U, s, Vt = np.linalg.svd(C)
    d = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    d = np.where(d == 0, 1.0, d)
    S = np.broadcast_to(np.eye(3), U.shape).copy()
    S[..., 2, 2] = d
    R = U @ S @ Vt
    t = mu_r - np.einsum("...ij,...j->...i", R, mu_e)
    degenerate = (s[..., 1] <= rank_tol * s[..., 0]) | (s[..., 0] <= 1e-14)
    return R, t, degenerate


def umeyama_align(ref, est) -> Pose:
    """Rigid transform (scale fixed to 1) taking ``est`` positions onto ``ref``.

    ``ref`` and ``est`` are associated point sets: trajectories of equal
    length or ``(N, 3)`` arrays. Reflections are excluded by the determinant
    sign correction.

    Raises
    ------
    DegenerateGeometry
        If the centered cross-covariance has rank < 2.
    """
    p_ref, p_est = _positions(ref), _positions(est)
    if p_ref.shape != p_est.shape or p_ref.shape[0] < 3:
        raise DegenerateGeometry(
            f"need >= 3 paired points of equal count, got {p_ref.shape} and {p_est.shape}"
        )
    R, t, degenerate = umeyama_batch(p_ref, p_est)
    if degenerate:
        raise DegenerateGeometry("point sets are collinear or coincident (rank < 2)")
    return Pose(UnitQuaternion.from_array(rotmat_to_quat(R)), t)


def apply_extrinsic(traj_b: Trajectory, X: Pose) -> Trajectory:
    """Map a sensor-B trajectory into frame A: ``T_B(t) · X⁻¹`` per pose."""
    qi = quat_conj(X.quat)
    ti = -quat_rotate(qi, X.translation)
    q = quat_mul(traj_b.rotations, qi)
    p = traj_b.translations + quat_rotate(traj_b.rotations, ti)
    return Trajectory(traj_b.timestamps, q, p, traj_b.frame)


def trajectory_reward(ref: Trajectory, est_b: Trajectory, X: Pose, max_dt: float = 0.02,
                      squared_errors: bool = False,
                      translation_scale: float = TRANSLATION_SCALE) -> AlignmentResult:
    """Alignment reward of candidate extrinsic ``X`` on one trajectory pair.

    Associates the trajectories by timestamp, maps the sensor-B trajectory
    into frame A with ``X``, aligns it to the reference with Umeyama and
    scores the per-pose translation and geodesic rotation errors.
    """
    assoc = associate(ref, est_b, max_dt)
    if len(assoc.ref_index) < 3:
        raise DegenerateGeometry(f"only {len(assoc.ref_index)} associated poses; need 3")
    r = ref[assoc.ref_index]
    e = apply_extrinsic(est_b[assoc.est_index], X)
    G = umeyama_align(r, e)
    p = quat_rotate(G.quat, e.translations) + G.translation
    q = quat_mul(G.quat, e.rotations)
    e_t = np.linalg.norm(p - r.translations, axis=1)
    e_r = geodesic_rotation_error(q, r.rotations)
    reward = reward_from_errors(e_t, e_r, squared_errors, translation_scale)
    return AlignmentResult(G, e_t, e_r, len(e_t), float(reward), False,
                           squared_errors, translation_scale)


def reward_batch(ref_q, ref_p, b_q, b_p, x_q, x_t, squared_errors: bool = False,
                 translation_scale: float = TRANSLATION_SCALE):
    """Vectorized reward of ``K`` candidate extrinsics on associated pose pairs.

    Parameters
    ----------
    ref_q, ref_p : arrays (N, 4), (N, 3)
        Associated reference poses.
    b_q, b_p : arrays broadcastable to (K, N, 4), (K, N, 3)
        Associated sensor-B poses (per candidate when the observation
        itself depends on the candidate).
    x_q, x_t : arrays (K, 4), (K, 3)
        Candidate extrinsics.

    Returns
    -------
    reward : array (K,)
        Reward per candidate; ``nan`` where the geometry is degenerate.
    degenerate : array (K,) of bool
    """
    qi = quat_conj(x_q)
    ti = -quat_rotate(qi, x_t)
    q_a = quat_mul(b_q, qi[:, None, :])
    p_a = b_p + quat_rotate(b_q, np.broadcast_to(ti[:, None, :], np.broadcast_shapes(
        np.shape(b_p), (len(x_t), 1, 3))))
    R, t, degenerate = umeyama_batch(ref_p, p_a)
    aligned = np.einsum("kij,knj->kni", R, p_a) + t[:, None, :]
    e_t = np.linalg.norm(aligned - ref_p, axis=-1)
    g = rotmat_to_quat(R)
    rel = quat_mul(quat_conj(ref_q), quat_mul(g[:, None, :], q_a))
    e_r = quat_angle(rel)
    reward = reward_from_errors(e_t, e_r, squared_errors, translation_scale)
    return np.where(degenerate, np.nan, reward), degenerate


# L(conj(e_c)) for the basis quaternions e_c; L(conj r) = Σ_c r_c _CONJ_LEFT[c]
_CONJ_LEFT = quat_left_matrix(quat_conj(np.eye(4)))


def _sandwich_matrices(p, q):
    """3x3 maps ``v -> vec(p ⊗ (0, v) ⊗ conj(q))`` for quaternion rows ``p``, ``q``."""
    return (quat_left_matrix(p) @ quat_right_matrix(quat_conj(q)))[..., 1:, 1:]


class RewardKernel:
    """Batched reward for a fixed set of associated pose pairs.

    Equivalent to :func:`reward_batch`, but everything that does not depend
    on the candidate is precomputed. Sensor-B observations may carry pose
    noise ``(noise_t, noise_r)`` scaled per candidate; with
    ``b ⊗ Exp(s ξ) = cos(s|ξ|/2) b + sin(s|ξ|/2) c`` and ``c = b ⊗ (0, ξ/|ξ|)``
    the rotation errors stay bilinear in the stored poses and the lever-arm
    rotation is quadratic in the two coefficients, so no per-candidate
    quaternion products over the trajectory are needed. Arrays are kept
    component-major, ``(3, K, N)``.
    """

    def __init__(self, ref_q, ref_p, b_q, b_p, noise_t=None, noise_r=None,
                 squared_errors: bool = False, translation_scale: float = TRANSLATION_SCALE):
        ref_q = np.asarray(ref_q, dtype=float)
        ref_p = np.asarray(ref_p, dtype=float)
        b_q = np.asarray(b_q, dtype=float)
        self.n = n = len(ref_p)
        self.ref_p = np.ascontiguousarray(ref_p.T)[:, None, :]
        self.ref_mean = ref_p.mean(axis=0)
        self.ref_c = ref_p - self.ref_mean
        self.b_p = np.ascontiguousarray(np.asarray(b_p, dtype=float).T)[:, None, :]

        def flat(mats):
            return np.ascontiguousarray(mats.transpose(1, 0, 2)).reshape(3 * n, 3)

        self.R_bb = flat(quat_to_rotmat(b_q))
        self.outer_b = np.einsum("nc,nb->cbn", ref_q, b_q).reshape(16, n)
        self.noise_t = None
        self.half_angle = None
        if noise_t is not None:
            self.noise_t = np.ascontiguousarray(np.asarray(noise_t, dtype=float).T)[:, None, :]
        if noise_r is not None:
            xi = np.asarray(noise_r, dtype=float)
            theta = np.linalg.norm(xi, axis=1)
            axis = np.where(theta[:, None] > 0, xi / np.where(theta > 0, theta, 1.0)[:, None], 0.0)
            c = quat_mul(b_q, np.concatenate([np.zeros((n, 1)), axis], axis=1))
            self.half_angle = 0.5 * theta
            self.R_bc = flat(_sandwich_matrices(b_q, c) + _sandwich_matrices(c, b_q))
            self.R_cc = flat(_sandwich_matrices(c, c))
            self.outer_c = np.einsum("nc,nb->cbn", ref_q, c).reshape(16, n)
        self.squared_errors = squared_errors
        self.translation_scale = translation_scale

    def __call__(self, x_q, x_t, scale=None):
        """Rewards (K,) and degeneracy mask for candidates ``x_q`` (K, 4), ``x_t`` (K, 3).

        ``scale`` (K,) multiplies the stored noise per candidate (default 1).
        """
        x_q = np.atleast_2d(np.asarray(x_q, dtype=float))
        x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
        k, n = len(x_q), self.n
        s = np.ones(k) if scale is None else np.asarray(scale, dtype=float).reshape(k)
        qi = quat_conj(x_q)
        ti = -quat_rotate(qi, x_t)

        def lever(R):
            return (R @ ti.T).reshape(3, n, k).transpose(0, 2, 1)

        p_a = lever(self.R_bb) + self.b_p
        if self.half_angle is not None:
            h = s[:, None] * self.half_angle
            alpha, beta = np.cos(h), np.sin(h)
            p_a = (alpha**2 * (p_a - self.b_p) + alpha * beta * lever(self.R_bc)
                   + beta**2 * lever(self.R_cc) + self.b_p)
        if self.noise_t is not None:
            p_a = p_a + s[:, None] * self.noise_t
        # Umeyama on (3, K, N) point sets
        mu = p_a.mean(axis=-1)
        ce = p_a - mu[..., None]
        C = (ce.reshape(3 * k, n) @ self.ref_c).reshape(3, k, 3).transpose(1, 2, 0) / n
        U, sv, Vt = np.linalg.svd(C)
        d = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
        U[:, :, 2] *= np.where(d == 0, 1.0, d)[:, None]
        R = U @ Vt
        t = self.ref_mean - np.einsum("kij,jk->ki", R, mu)
        degenerate = (sv[:, 1] <= 1e-9 * sv[:, 0]) | (sv[:, 0] <= 1e-14)
        diff = np.einsum("kab,bkn->akn", R, p_a) + t.T[:, :, None] - self.ref_p
        e_t = np.sqrt(diff[0] ** 2 + diff[1] ** 2 + diff[2] ** 2)
        # rel = conj(r) ⊗ g ⊗ b' ⊗ conj(x), bilinear in (r, b')
        g = rotmat_to_quat(R)
        B = quat_left_matrix(g) @ quat_right_matrix(qi)
        H = np.einsum("cma,kab->mkcb", _CONJ_LEFT, B).reshape(4 * k, 16)
        rel = (H @ self.outer_b).reshape(4, k, n)
        if self.half_angle is not None:
            rel = alpha * rel + beta * (H @ self.outer_c).reshape(4, k, n)
        vec = np.sqrt(rel[1] ** 2 + rel[2] ** 2 + rel[3] ** 2)
        e_r = 2.0 * np.arctan2(vec, np.abs(rel[0]))
        reward = reward_from_errors(e_t, e_r, self.squared_errors, self.translation_scale)
        return np.where(degenerate, np.nan, reward), degenerate
