import mpmath
import numpy as np
import pytest
from scipy import stats
from scipy.stats import qmc

from rlcalib import bingham
from rlcalib.bingham import (
    AcgParams,
    BinghamParams,
    SamplingError,
    acg_log_pdf,
    acg_sample,
    bingham_sample,
    envelope,
    envelope_constant,
    log_norm_const,
    log_pdf,
    mode,
    solve_envelope_b,
    theoretical_acceptance_rate,
)

AREA = 2 * np.pi**2
Z_SAMPLER = (-30.0, -4.0, -4.0, 0.0)


def random_dispersion(rng, scale=50.0):
    z = np.sort(-scale * rng.random(3))
    return np.append(z, 0.0)


def random_orthogonal(rng):
    q, r = np.linalg.qr(rng.standard_normal((4, 4)))
    return q * np.sign(np.diag(r))


def equal_dispersion_log_n(z):
    """log N for Z = (z, z, z, 0): u4² ~ Beta(1/2, 3/2) under the uniform law."""
    return float(mpmath.log(AREA) + z + mpmath.log(mpmath.hyp1f1(0.5, 2, -z)))


def sobol_sphere(m, seed):
    """2**m scrambled-Sobol points pushed to uniform on S³."""
    u = qmc.Sobol(4, scramble=True, seed=seed).random_base2(m)
    g = stats.norm.ppf(np.clip(u, 1e-15, 1 - 1e-15))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def hopf_log_n(Z, n=40):
    """Independent quadrature in Hopf coordinates.

    x = (cos η cos ξ1, cos η sin ξ1, sin η cos ξ2, sin η sin ξ2), surface
    element sin η cos η; periodic ξ use the trapezoid rule.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    eta = np.pi / 4 * (x + 1)
    w_eta = np.pi / 4 * w * np.sin(eta) * np.cos(eta)
    xi = 2 * np.pi * np.arange(2 * n) / (2 * n)
    w_xi = 2 * np.pi / (2 * n)
    E, X1, X2 = np.meshgrid(eta, xi, xi, indexing="ij")
    pts = np.stack([np.cos(E) * np.cos(X1), np.cos(E) * np.sin(X1),
                    np.sin(E) * np.cos(X2), np.sin(E) * np.sin(X2)])
    f = np.exp(np.einsum("i,i...->...", Z, pts**2))
    return np.log(np.einsum("i,ijk->", w_eta, f) * w_xi**2)


class TestNormalization:
    def test_uniform_area(self):
        log_n, grad = log_norm_const(np.zeros(4))
        assert np.exp(log_n) == pytest.approx(AREA, abs=1e-6)
        np.testing.assert_allclose(grad, 0.25, atol=1e-12)

    @pytest.mark.parametrize("z", [-1.0, -30.0, -200.0, -3e3, -1e5])
    def test_equal_dispersion_closed_form(self, z):
        log_n, _ = log_norm_const([z, z, z, 0.0])
        assert log_n == pytest.approx(equal_dispersion_log_n(z), abs=1e-8)

    def test_gradient_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            Z = random_dispersion(rng, scale=rng.choice([1.0, 200.0, 5e4]))
            _, grad = log_norm_const(Z)
            assert abs(grad.sum() - 1) < 1e-6

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            Z = random_dispersion(rng, scale=100.0) - np.array([1, 1, 1, 0])
            _, grad = log_norm_const(Z)
            for i in range(3):
                h = 1e-4
                up, dn = Z.copy(), Z.copy()
                up[i] += h
                dn[i] -= h
                fd = (log_norm_const(up)[0] - log_norm_const(dn)[0]) / (2 * h)
                assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_independent_quadrature(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            Z = random_dispersion(rng, scale=40.0)
            log_n, _ = log_norm_const(Z)
            assert np.exp(hopf_log_n(Z) - log_n) == pytest.approx(1.0, abs=1e-7)

    def test_qmc_oracle(self):
        Z = np.array(Z_SAMPLER)
        reps_n, reps_m = [], []
        for seed in range(8):
            x = sobol_sphere(20, seed)
            f = np.exp(x**2 @ Z)
            reps_n.append(AREA * f.mean())
            reps_m.append((f[:, None] * x**2).mean(axis=0) / f.mean())
        n_hat, se_n = np.mean(reps_n), np.std(reps_n, ddof=1) / np.sqrt(8)
        m_hat = np.mean(reps_m, axis=0)
        se_m = np.std(reps_m, axis=0, ddof=1) / np.sqrt(8)
        log_n, grad = log_norm_const(Z)
        assert abs(np.exp(log_n) - n_hat) < 3 * se_n
        assert np.all(np.abs(grad - m_hat) < 3 * se_m)

    @pytest.mark.parametrize("Z", [
        (-1.0, -2.0, -3.0, 0.0),   # unsorted
        (-3.0, -2.0, -1.0, 0.1),   # last entry not zero
        (-2e6, -1.0, -1.0, 0.0),   # below floor
    ])
    def test_invalid_dispersion(self, Z):
        with pytest.raises(ValueError):
            log_norm_const(Z)

    def test_floor_is_supported(self):
        log_n, grad = log_norm_const([bingham.Z_FLOOR] * 3 + [0.0])
        assert log_n == pytest.approx(equal_dispersion_log_n(bingham.Z_FLOOR), abs=1e-8)


class TestDensity:
    def test_mode_value(self):
        rng = np.random.default_rng(3)
        p = BinghamParams(random_orthogonal(rng), random_dispersion(rng))
        log_n, _ = log_norm_const(p.Z)
        assert log_pdf(p.M[:, 3], p) == pytest.approx(-log_n, abs=1e-12)

    def test_antipodal_exact(self):
        rng = np.random.default_rng(4)
        p = BinghamParams(random_orthogonal(rng), random_dispersion(rng))
        x = rng.standard_normal((1000, 4))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        np.testing.assert_array_equal(log_pdf(x, p), log_pdf(-x, p))

    def test_uniform_density(self):
        p = BinghamParams(np.eye(4), np.zeros(4))
        x = sobol_sphere(6, 0)
        np.testing.assert_allclose(log_pdf(x, p), -np.log(AREA), atol=1e-12)

    def test_rejects_non_orthogonal(self):
        with pytest.raises(ValueError):
            BinghamParams(np.ones((4, 4)), np.zeros(4))

    def test_mode_is_argmax(self):
        rng = np.random.default_rng(5)
        p = BinghamParams(random_orthogonal(rng), np.array(Z_SAMPLER))
        x = rng.standard_normal((100_000, 4))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        best = x[np.argmax(log_pdf(x, p))]
        m = mode(p)
        assert m.unique
        assert log_pdf(m.quaternion, p) >= log_pdf(best, p)
        assert abs(best @ m.quaternion) > 0.99
        assert log_pdf(-m.quaternion, p) == log_pdf(m.quaternion, p)

    def test_axis_aligned_mode(self):
        m = mode(BinghamParams(np.eye(4), np.array(Z_SAMPLER)))
        np.testing.assert_array_equal(np.abs(m.quaternion), [0, 0, 0, 1])

    def test_uniform_mode_not_unique(self):
        assert not mode(BinghamParams(np.eye(4), np.zeros(4))).unique


class TestEnvelope:
    def test_uniform_root(self):
        assert solve_envelope_b(np.zeros(4)) == 4.0
        np.testing.assert_array_equal(envelope(BinghamParams(np.eye(4), np.zeros(4))).Lambda,
                                      np.eye(4))
        assert envelope_constant(np.zeros(4)) == 1.0

    @pytest.mark.parametrize("z", [-1.0, -4.0, -30.0, -1e4])
    def test_equal_dispersion_root(self, z):
        # 3/(b - 2z) + 1/b = 1  <=>  b² - (4 + 2z) b + 2z = 0
        s = 4 + 2 * z
        expected = (s + np.sqrt(s * s - 8 * z)) / 2
        assert solve_envelope_b([z, z, z, 0.0]) == pytest.approx(expected, abs=1e-10)

    def test_root_residual(self):
        rng = np.random.default_rng(6)
        for Z in [np.array(Z_SAMPLER)] + [random_dispersion(rng, 1e3) for _ in range(50)]:
            b = solve_envelope_b(Z)
            assert 0 < b <= 4
            assert abs(np.sum(1 / (b - 2 * Z)) - 1) < 1e-10

    def test_axis_aligned_eigenvalues(self):
        p = BinghamParams(np.eye(4), np.array([-1.0, -1.0, -1.0, 0.0]))
        b = 1 + np.sqrt(3)
        lam = envelope(p).Lambda
        np.testing.assert_allclose(lam, np.diag([1 + 2 / b] * 3 + [1.0]), atol=1e-10)
        assert np.all(np.linalg.eigvalsh(lam) > 0)

    def test_domination(self):
        rng = np.random.default_rng(7)
        for Z in (Z_SAMPLER, (-1e3, -50.0, -0.5, 0.0), (-2.0, -1.0, -1.0, 0.0)):
            p = BinghamParams(random_orthogonal(rng), np.array(Z))
            a = envelope(p)
            x = rng.standard_normal((1_000_000, 4))
            x /= np.linalg.norm(x, axis=1, keepdims=True)
            lhs = np.einsum("ij,jk,ik->i", x, p.quadratic_form(), x)
            rhs = np.log(envelope_constant(p.Z)) - 2 * np.log(
                np.einsum("ij,jk,ik->i", x, a.Lambda, x))
            assert np.all(lhs <= rhs + 1e-12)

    def test_envelope_touches_bingham(self):
        # the bound is tight: equality where xᵀMZMᵀx = -(4 - b)/2
        Z = np.array([-30.0, -30.0, -30.0, 0.0])
        p = BinghamParams(np.eye(4), Z)
        b = solve_envelope_b(Z)
        s = (4 - b) / 2
        x = np.array([np.sqrt(s / 30), 0, 0, np.sqrt(1 - s / 30)])
        lhs = x @ p.quadratic_form() @ x
        rhs = np.log(envelope_constant(Z)) - 2 * np.log(x @ envelope(p).Lambda @ x)
        assert lhs == pytest.approx(rhs, abs=1e-12)


class TestAcg:
    def test_unit_norm_and_isotropy(self):
        x = acg_sample(AcgParams(np.eye(4)), np.random.default_rng(8), 100_000)
        np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1, atol=1e-12)
        se = np.sqrt(np.var(x**2, axis=0) / len(x))
        assert np.all(np.abs((x**2).mean(axis=0) - 0.25) < 3 * se)

    def test_anisotropic_against_qmc(self):
        a = AcgParams(np.diag([5.0, 1.0, 1.0, 1.0]))
        x = acg_sample(a, np.random.default_rng(9), 100_000)
        u = sobol_sphere(20, 1)
        w = np.exp(acg_log_pdf(u, a))
        oracle = np.sum(w * u[:, 0] ** 2) / np.sum(w)
        se = np.std(x[:, 0] ** 2) / np.sqrt(len(x))
        assert abs((x[:, 0] ** 2).mean() - oracle) < 3 * se

    def test_density_normalized(self):
        a = AcgParams(np.diag([5.0, 2.0, 1.0, 0.5]))
        u = sobol_sphere(18, 2)
        assert np.exp(acg_log_pdf(u, a)).mean() == pytest.approx(1.0, abs=2e-3)


class TestSampler:
    def test_uniform_accepts_everything(self):
        p = BinghamParams(np.eye(4), np.zeros(4))
        _, st = bingham_sample(p, np.random.default_rng(10), 5000, return_stats=True)
        assert st.rate == 1.0

    def test_acceptance_rate_matches_theory(self):
        rng = np.random.default_rng(11)
        for Z in (Z_SAMPLER, (-1.0, -1.0, -1.0, 0.0), (-1e3, -1e3, -10.0, 0.0)):
            p = BinghamParams(random_orthogonal(rng), np.array(Z))
            _, st = bingham_sample(p, rng, 100_000, return_stats=True)
            assert abs(st.rate - theoretical_acceptance_rate(p)) < 0.02

    def test_two_sample_against_qmc(self):
        rng = np.random.default_rng(12)
        p = BinghamParams(random_orthogonal(rng), np.array(Z_SAMPLER))
        x = bingham_sample(p, rng, 100_000)
        A = p.quadratic_form()
        # oracle draws: importance resampling of Sobol sphere points
        u = sobol_sphere(22, 3) @ p.M.T
        w = np.exp(np.einsum("ij,jk,ik->i", u, A, u))
        pick = np.random.default_rng(13).choice(len(u), 100_000, p=w / w.sum())
        s_sampler = np.einsum("ij,jk,ik->i", x, A, x)
        s_oracle = np.einsum("ij,jk,ik->i", u[pick], A, u[pick])
        assert stats.ks_2samp(s_sampler, s_oracle).pvalue > 0.01

    def test_quadratic_statistics_antipodal(self):
        rng = np.random.default_rng(14)
        p = BinghamParams(random_orthogonal(rng), np.array(Z_SAMPLER))
        x = bingham_sample(p, rng, 20_000)
        np.testing.assert_array_equal(np.einsum("ni,nj->ij", x, x),
                                      np.einsum("ni,nj->ij", -x, -x))

    def test_second_moments_match_gradient(self):
        rng = np.random.default_rng(15)
        M = random_orthogonal(rng)
        p = BinghamParams(M, np.array(Z_SAMPLER))
        v = bingham_sample(p, rng, 100_000) @ M
        _, grad = log_norm_const(p.Z)
        se = np.std(v**2, axis=0) / np.sqrt(len(v))
        assert np.all(np.abs((v**2).mean(axis=0) - grad) < 4 * se)

    def test_collapse_detected(self, monkeypatch):
        p = BinghamParams(np.eye(4), np.array(Z_SAMPLER))
        monkeypatch.setattr(bingham, "envelope_constant", lambda Z: 1e12)
        with pytest.raises(SamplingError):
            bingham_sample(p, np.random.default_rng(16), 10)
