"""Bingham distribution on the unit quaternion sphere S³.

The density with respect to the surface measure of S³ is

.. math::
    p(x; M, Z) = \\frac{1}{N(Z)} \\exp(x^\\top M Z M^\\top x),

with ``M`` orthogonal and ``Z = diag(z1, z2, z3, 0)``, ``z1 <= z2 <= z3 <= 0``.
``N(Z)`` is evaluated by tensor Gauss-Legendre quadrature over hyperspherical
angles restricted to the positive orthant (the integrand is even in every
coordinate). The concentration peak sits at an interval endpoint of every
angle; for strong concentrations each angle's rule is split so that most
nodes fall inside the peak.

Sampling uses acceptance-rejection with an angular central Gaussian (ACG)
proposal whose concentration matrix is matched to the Bingham parameters.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SPHERE_AREA = 2.0 * np.pi**2
Z_FLOOR = -1.0e6
DEFAULT_NODES = 64


class SamplingError(RuntimeError):
    """Raised when the rejection sampler's acceptance rate collapses."""


@dataclass(frozen=True, eq=False)
class BinghamParams:
    """Orthogonal axes ``M`` (columns) and dispersion diagonal ``Z``.

    The last column of ``M`` is the mode; ``Z[-1]`` must be exactly 0.
    """

    M: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=float).reshape(4, 4)
        Z = np.array(self.Z, dtype=float).reshape(4)
        if not np.allclose(M.T @ M, np.eye(4), atol=1e-10, rtol=0.0):
            raise ValueError("M must be orthogonal")
        check_dispersion(Z)
        M.flags.writeable = False
        Z.flags.writeable = False
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "Z", Z)

    def quadratic_form(self) -> np.ndarray:
        """``M Z Mᵀ``."""
        return (self.M * self.Z) @ self.M.T


@dataclass(frozen=True, eq=False)
class AcgParams:
    """Symmetric positive-definite ACG concentration matrix ``Λ``."""

    Lambda: np.ndarray

    def __post_init__(self):
        L = np.array(self.Lambda, dtype=float).reshape(4, 4)
        if not np.allclose(L, L.T, atol=1e-12, rtol=0.0):
            raise ValueError("Lambda must be symmetric")
        if np.linalg.eigvalsh(L).min() <= 0.0:
            raise ValueError("Lambda must be positive definite")
        L.flags.writeable = False
        object.__setattr__(self, "Lambda", L)


def check_dispersion(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (4,):
        raise ValueError(f"Z must have 4 entries, got shape {Z.shape}")
    if Z[3] != 0.0:
        raise ValueError("last dispersion entry must be exactly 0")
    if np.any(np.diff(Z) < 0.0):
        raise ValueError(f"dispersion entries must be sorted ascending, got {Z}")
    if Z[0] < Z_FLOOR:
        raise ValueError(f"dispersion {Z[0]} below supported floor {Z_FLOOR}")
    return Z


# ---------------------------------------------------------------------------
# normalization constant
# ---------------------------------------------------------------------------
# peak half-width in units of 1/sqrt(|z|); exp(-PEAK_SPAN²) is far below 1e-16
PEAK_SPAN = 8.0
NEAR_FRACTION = 0.75


@functools.lru_cache(maxsize=8)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _angle_rule(n: int, z: float):
    """Nodes and weights on [0, π/2] for one hyperspherical angle.

    The integrand peaks at π/2 with width ~ 1/sqrt(|z|). When that width is
    small, the interval is split at ``π/2 - PEAK_SPAN/sqrt(|z|)`` and most
    nodes go to the peak side.
    """
    half = 0.5 * np.pi
    width = PEAK_SPAN / np.sqrt(-z) if z < 0 else np.inf
    if width >= 0.5 * half:
        x, w = _legendre(n)
        return 0.5 * half * (x + 1.0), 0.5 * half * w
    n_near = int(round(NEAR_FRACTION * n))
    cut = half - width
    xf, wf = _legendre(n - n_near)
    xn, wn = _legendre(n_near)
    nodes = np.concatenate([0.5 * cut * (xf + 1.0), cut + 0.5 * width * (xn + 1.0)])
    weights = np.concatenate([0.5 * cut * wf, 0.5 * width * wn])
    return nodes, weights


@functools.lru_cache(maxsize=256)
def _log_norm_const_cached(Z: tuple, n: int):
    """Product rule over u1 = cos a, u2 = sin a cos b, u3 = sin a sin b cos c,
    u4 = sin a sin b sin c with a, b, c in [0, π/2] and surface element
    sin²a sin b; the peak width of a, b, c is set by z1, z2, z3."""
    z1, z2, z3, _ = Z
    a, wa = _angle_rule(n, z1)
    b, wb = _angle_rule(n, z2)
    c, wc = _angle_rule(n, z3)
    ca2, sa2 = np.cos(a) ** 2, np.sin(a) ** 2
    cb2, sb2 = np.cos(b) ** 2, np.sin(b) ** 2
    cc2, sc2 = np.cos(c) ** 2, np.sin(c) ** 2
    # exponent z1 u1² + sin²a (z2 cos²b + z3 sin²b cos²c); u4 carries z4 = 0
    inner = z2 * cb2[:, None] + z3 * (sb2[:, None] * cc2[None, :])
    expo = z1 * ca2[:, None, None] + sa2[:, None, None] * inner[None]
    shift = expo.max()
    f = np.exp(expo - shift).reshape(n, n * n)
    wbc = (wb * np.sin(b))[:, None] * wc[None, :]
    wa = wa * sa2
    per_a = f @ wbc.ravel()
    total = wa @ per_a
    # moments of u2², u3², u4², which all carry a factor sin²a
    per_bc = ((wa * sa2) @ f).reshape(n, n) * wbc
    e1 = (wa * ca2) @ per_a / total
    e2 = per_bc.sum(axis=1) @ cb2 / total
    e3 = sb2 @ per_bc @ cc2 / total
    e4 = sb2 @ per_bc @ sc2 / total
    grad = np.array([e1, e2, e3, e4])
    return float(np.log(16.0 * total) + shift), grad


def log_norm_const(Z, nodes: int = DEFAULT_NODES):
    """Log normalization constant and its gradient.

    Parameters
    ----------
    Z : array of shape (4,)
        Dispersion diagonal, ascending, nonpositive, last entry 0, all >= Z_FLOOR.
    nodes : int
        Gauss-Legendre nodes per hyperspherical angle.

    Returns
    -------
    log_n : float
        ``log N(Z)`` with ``N(Z) = ∫_{S³} exp(Σ z_i u_i²) du``.
    grad : array of shape (4,)
        ``d log N / d z_i = E[u_i²]`` under the axis-aligned Bingham; sums to 1.
    """
    Z = check_dispersion(Z)
    log_n, grad = _log_norm_const_cached(tuple(float(z) for z in Z), int(nodes))
    return log_n, grad.copy()


def log_pdf(x, p: BinghamParams, nodes: int = DEFAULT_NODES):
    """Log density of unit quaternion(s) ``x`` (shape ``(..., 4)``)."""
    x = np.asarray(x, dtype=float)
    v = x @ p.M
    log_n, _ = log_norm_const(p.Z, nodes)
    return (v * v) @ p.Z - log_n


# ---------------------------------------------------------------------------
# ACG envelope and sampling
# ---------------------------------------------------------------------------
def solve_envelope_b(Z, tol: float = 1e-12) -> float:
    """Root ``b`` in (0, 4] of ``Σ_i 1/(b - 2 z_i) = 1``, by bisection.

    With ``z_i <= 0`` the left side decreases from +∞ (the ``z4 = 0`` term)
    and is at most 1 at ``b = 4``, so the root is unique and bracketed.
    """
    Z = check_dispersion(Z)
    lo, hi = 0.0, 4.0

    def f(b):
        return np.sum(1.0 / (b - 2.0 * Z)) - 1.0

    if f(hi) >= 0.0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def envelope(p: BinghamParams) -> AcgParams:
    """ACG concentration ``Λ = I - 2 M Z Mᵀ / b`` matched to ``p``.

    Eigenvalues are ``1 - 2 z_i / b >= 1``; the mode direction keeps 1.
    """
    b = solve_envelope_b(p.Z)
    L = np.eye(4) - 2.0 * p.quadratic_form() / b
    return AcgParams(0.5 * (L + L.T))


def envelope_constant(Z) -> float:
    """Tight bound ``C*`` with ``exp(xᵀMZMᵀx) <= C* (xᵀΛx)^-2`` on S³.

    On the sphere ``xᵀΛx = 1 + 2s/b`` with ``s = -xᵀMZMᵀx >= 0``, and
    ``e^{-s} (1 + 2s/b)²`` peaks at ``s = (4 - b)/2``.
    """
    b = solve_envelope_b(Z)
    return float(np.exp(-0.5 * (4.0 - b)) * (4.0 / b) ** 2)


def theoretical_acceptance_rate(p: BinghamParams, nodes: int = DEFAULT_NODES) -> float:
    """Expected acceptance probability of :func:`bingham_sample`.

    Ratio of the unnormalized Bingham mass ``N(Z)`` to the envelope mass
    ``C* ∫ (xᵀΛx)^-2 dx = C* 2π² / sqrt(det Λ)``.
    """
    log_n, _ = log_norm_const(p.Z, nodes)
    a = envelope(p)
    det = np.linalg.det(a.Lambda)
    return float(np.exp(log_n) * np.sqrt(det) / (SPHERE_AREA * envelope_constant(p.Z)))


def acg_log_pdf(x, a: AcgParams):
    """Log ACG density relative to the uniform probability measure on S³."""
    x = np.asarray(x, dtype=float)
    quad = np.einsum("...i,ij,...j->...", x, a.Lambda, x)
    return 0.5 * np.log(np.linalg.det(a.Lambda)) - 2.0 * np.log(quad)


def acg_sample(a: AcgParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` ACG draws: normalized zero-mean Gaussians with covariance ``Λ⁻¹``."""
    L = np.linalg.cholesky(a.Lambda)
    g = rng.standard_normal((n, 4))
    # Λ = L Lᵀ  =>  L⁻ᵀ g ~ N(0, Λ⁻¹)
    y = np.linalg.solve(L.T, g.T).T
    return y / np.linalg.norm(y, axis=1, keepdims=True)


class SampleStats(NamedTuple):
    proposals: int
    accepted: int

    @property
    def rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else float("nan")


def bingham_sample(p: BinghamParams, rng: np.random.Generator, n: int,
                   return_stats: bool = False, min_rate: float = 1e-3,
                   window: int = 10_000):
    """Exact Bingham draws by ACG rejection sampling.

    Returns an ``(n, 4)`` array of unit quaternions (and the proposal
    statistics when ``return_stats``). Raises :class:`SamplingError` if fewer
    than ``min_rate`` of the proposals are accepted once ``window`` proposals
    have been made.
    """
    a = envelope(p)
    log_c = np.log(envelope_constant(p.Z))
    A = p.quadratic_form()
    out = np.empty((n, 4))
    got = 0
    proposed = 0
    while got < n:
        batch = max(64, int(1.3 * (n - got)) + 16)
        x = acg_sample(a, rng, batch)
        u = rng.random(batch)
        log_f = np.einsum("ij,jk,ik->i", x, A, x)
        log_g = -2.0 * np.log(np.einsum("ij,jk,ik->i", x, a.Lambda, x))
        ok = np.log(u) < log_f - log_c - log_g
        idx = np.flatnonzero(ok)[: n - got]
        out[got:got + len(idx)] = x[idx]
        got += len(idx)
        # proposals beyond the last one needed are discarded, not counted
        proposed += batch if got < n else int(idx[-1]) + 1
        if proposed >= window and got / proposed < min_rate:
            raise SamplingError(
                f"acceptance rate {got / proposed:.2e} after {proposed} proposals"
            )
    if return_stats:
        return out, SampleStats(proposed, got)
    return out


class Mode(NamedTuple):
    quaternion: np.ndarray
    unique: bool


def mode(p: BinghamParams) -> Mode:
    """Principal axis paired with the zero dispersion entry.

    The sign is fixed to a nonnegative scalar part for reporting; ``-mode`` is
    an equally valid mode. ``unique`` is False when ``z3 > -1e-9``.
    """
    q = p.M[:, 3].copy()
    if q[0] < 0:
        q = -q
    return Mode(q, bool(p.Z[2] <= -1e-9))
