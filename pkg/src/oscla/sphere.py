"""Pseudospectral collocation on the round sphere.

Grid: Gauss-Legendre nodes in x = cos(theta) (poles excluded) times an
equispaced Fourier grid in the azimuth.  Scalar data on the grid is analyzed
per azimuthal mode m in a basis of orthonormal weighted Jacobi functions

    B_k(x) = n_k (1-x)^{beta/2} (1+x)^{alpha/2} P_k^{(beta,alpha)}(x),

with alpha = |m| and beta = |m - q|.  For charge q = 0 these are the
normalized associated Legendre functions and the scheme is the usual
Gauss-Legendre spherical-harmonic transform.  Nonzero q resolves sections of
a degree-q twisted line bundle in the single-chart parametrization (the
fibre-mode content of fields on a twisted projective bundle), which an
untwisted basis can only represent with algebraic accuracy.

Products B_k B_j are polynomials, so the quadrature underlying analysis is
exact up to the usual bandwidth limit.  Derivative tables d/dtheta and
d^2/dtheta^2 are evaluated analytically from the Jacobi three-term data at
the interior nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import lgamma, log

import numpy as np
from scipy.special import eval_jacobi


def gauss_legendre(n):
    """Nodes (ascending in x = cos theta) and weights on [-1, 1]."""
    return np.polynomial.legendre.leggauss(n)


def _jacobi_norm(k, beta, alpha):
    """log of || (1-x)^{beta/2} (1+x)^{alpha/2} P_k^{(beta,alpha)} ||_{L^2(dx)}."""
    num = (alpha + beta + 1) * log(2.0) + lgamma(k + alpha + 1) + lgamma(k + beta + 1)
    den = log(2 * k + alpha + beta + 1) + lgamma(k + 1) + lgamma(k + alpha + beta + 1)
    return 0.5 * (num - den)


@dataclass(frozen=True)
class ModeBasis:
    """Orthonormal radial basis for one (m, q) azimuthal/charge pair.

    B, dB, d2B have shape (nk, n_theta): values, d/dtheta, d^2/dtheta^2 at the
    grid nodes.  A = B * w_gl is the analysis matrix (coef = A @ values).
    """

    m: int
    q: int
    B: np.ndarray
    dB: np.ndarray
    d2B: np.ndarray
    A: np.ndarray

    @property
    def nk(self):
        return self.B.shape[0]


class SphereGrid:
    """Gauss-Legendre x Fourier collocation grid on S^2.

    Nodes are interior (no pole points).  x ascends, so theta descends;
    t = tan(theta/2) is the modulus of the stereographic chart coordinate
    z = t e^{i phi} centered at theta = 0.
    """

    def __init__(self, n_theta: int, n_phi: int | None = None):
        if n_phi is None:
            n_phi = n_theta
        if n_phi % 2 != 0:
            raise ValueError(f"azimuthal mode count must be even, got {n_phi}")
        if n_theta < 4:
            raise ValueError("need at least 4 colatitude nodes")
        self.n_theta = int(n_theta)
        self.n_phi = int(n_phi)
        self.x, self.w = gauss_legendre(self.n_theta)
        self.theta = np.arccos(self.x)
        self.sin_theta = np.sqrt(1.0 - self.x**2)
        self.t = np.sqrt((1.0 - self.x) / (1.0 + self.x))  # tan(theta/2)
        self.phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        # fft mode numbers; the Nyquist mode is dropped from every analysis
        self.m_fft = np.fft.fftfreq(self.n_phi, d=1.0 / self.n_phi).astype(int)
        self.m_max = self.n_phi // 2 - 1
        self._basis_cache: dict[tuple[int, int], ModeBasis] = {}
        self._stack_cache: dict = {}

    # -- geometry helpers ------------------------------------------------

    def chart_z(self):
        """Stereographic coordinate z = t e^{i phi} on the node grid."""
        return self.t[:, None] * np.exp(1j * self.phi[None, :])

    def area_weights(self):
        """Quadrature weights W_ij such that for a 2-form i*g dz∧dz̄ one has
        integral = sum(W * g); W = (1+t^2)^2/2 * w_gl * (2 pi / n_phi)."""
        fac = (1.0 + self.t**2) ** 2 / 2.0
        return (fac * self.w)[:, None] * np.full(self.n_phi, 2.0 * np.pi / self.n_phi)

    # -- bases -----------------------------------------------------------

    def basis(self, m: int, q: int = 0) -> ModeBasis:
        key = (m, q)
        hit = self._basis_cache.get(key)
        if hit is not None:
            return hit
        # (m, q) and (-m, -q) share exponents and therefore tables
        mirror = self._basis_cache.get((-m, -q))
        if mirror is not None:
            b = ModeBasis(m, q, mirror.B, mirror.dB, mirror.d2B, mirror.A)
            self._basis_cache[key] = b
            return b
        # (1-x)-exponent beta rules the chart-regular pole x=+1 (theta=0),
        # the (1+x)-exponent alpha the twisted pole x=-1 (theta=pi).
        beta = abs(m)
        alpha = abs(m - q)
        nk = self.n_theta - (alpha + beta + 1) // 2
        x = self.x
        if nk <= 0:
            empty = np.zeros((0, self.n_theta))
            b = ModeBasis(m, q, empty, empty, empty, empty)
            self._basis_cache[key] = b
            return b
        env = (1.0 - x) ** (beta / 2.0) * (1.0 + x) ** (alpha / 2.0)
        B = np.zeros((nk, self.n_theta))
        Bx = np.zeros_like(B)
        Bxx = np.zeros_like(B)
        for k in range(nk):
            n = np.exp(-_jacobi_norm(k, beta, alpha))
            P = eval_jacobi(k, beta, alpha, x)
            dP = 0.0 * x if k == 0 else 0.5 * (k + alpha + beta + 1) * eval_jacobi(k - 1, beta + 1, alpha + 1, x)
            if k >= 2:
                d2P = 0.25 * (k + alpha + beta + 1) * (k + alpha + beta + 2) * eval_jacobi(k - 2, beta + 2, alpha + 2, x)
            else:
                d2P = 0.0 * x
            # product rule on env * P at interior nodes
            e1 = -0.5 * beta / (1.0 - x) + 0.5 * alpha / (1.0 + x)
            e2 = e1**2 + (-0.5 * beta / (1.0 - x) ** 2 - 0.5 * alpha / (1.0 + x) ** 2)
            B[k] = n * env * P
            Bx[k] = n * env * (e1 * P + dP)
            Bxx[k] = n * env * (e2 * P + 2.0 * e1 * dP + d2P)
        # d/dtheta = -sin(theta) d/dx ;  d2/dtheta2 = (1-x^2) d2/dx2 - x d/dx
        dB = -self.sin_theta * Bx
        d2B = (1.0 - x**2) * Bxx - x * Bx
        A = B * self.w
        b = ModeBasis(m, q, B, dB, d2B, A)
        self._basis_cache[key] = b
        return b

    # -- stacked tables ----------------------------------------------------

    def _stacked(self, q: int):
        """Zero-padded (n_phi, nk_max, n_theta) tables for all kept modes at
        charge q, plus the per-slot (i m)-factors."""
        key = q
        hit = self._stack_cache.get(key)
        if hit is not None:
            return hit
        nk_max = self.n_theta
        shape = (self.n_phi, nk_max, self.n_theta)
        A = np.zeros(shape)
        B = np.zeros(shape)
        dB = np.zeros(shape)
        d2B = np.zeros(shape)
        for slot, m in enumerate(self.m_fft):
            if abs(m) > self.m_max:
                continue
            b = self.basis(m, q)
            if b.nk == 0:
                continue
            A[slot, :b.nk] = b.A
            B[slot, :b.nk] = b.B
            dB[slot, :b.nk] = b.dB
            d2B[slot, :b.nk] = b.d2B
        im = np.where(np.abs(self.m_fft) <= self.m_max, 1j * self.m_fft, 0.0)
        hit = {"A": A, "B": B, "dB": dB, "d2B": d2B, "im": im}
        self._stack_cache[key] = hit
        return hit

    # -- transforms on the trailing two axes ------------------------------

    def analyze_stacked(self, f, q: int = 0):
        """FFT in phi + batched Jacobi analysis at uniform charge q.

        Returns coefficients shaped (..., nk_max, n_phi-slots)."""
        F = np.fft.fft(np.asarray(f, dtype=complex), axis=-1) / self.n_phi
        A = self._stacked(q)["A"]
        # C[..., k, m] = sum_i A[m, k, i] F[..., i, m]
        Fm = np.moveaxis(F, -1, -2)                     # (..., m, i)
        C = np.matmul(A, Fm[..., None])[..., 0]          # (..., m, k)
        return np.moveaxis(C, -1, -2)

    def synthesize_stacked(self, C, which="id", q: int = 0):
        tabs = self._stacked(q)
        if which == "id":
            T, fac = tabs["B"], None
        elif which == "dtheta":
            T, fac = tabs["dB"], None
        elif which == "d2theta":
            T, fac = tabs["d2B"], None
        elif which == "dphi":
            T, fac = tabs["B"], tabs["im"]
        elif which == "d2phi":
            T, fac = tabs["B"], tabs["im"] ** 2
        elif which == "dtheta_dphi":
            T, fac = tabs["dB"], tabs["im"]
        else:
            raise ValueError(which)
        Cm = np.moveaxis(C, -1, -2)                      # (..., m, k)
        F = np.matmul(np.swapaxes(T, -1, -2), Cm[..., None])[..., 0]  # (..., m, i)
        F = np.moveaxis(F, -1, -2)                       # (..., i, m)
        if fac is not None:
            F = F * fac
        return np.fft.ifft(F * self.n_phi, axis=-1)

    def analyze(self, f, charge_of_mode=None):
        """FFT in phi + per-mode Jacobi analysis.

        f has shape (..., n_theta, n_phi).  Returns the list of per-mode
        coefficient arrays indexed by fft slot (None where dropped).
        charge_of_mode: optional callable m -> q.
        """
        F = np.fft.fft(np.asarray(f, dtype=complex), axis=-1) / self.n_phi
        out = []
        for slot, m in enumerate(self.m_fft):
            if abs(m) > self.m_max:
                out.append(None)
                continue
            q = 0 if charge_of_mode is None else int(charge_of_mode(m))
            basis = self.basis(m, q)
            if basis.nk == 0:
                out.append(None)
                continue
            # coef_k = sum_i A[k,i] F[..., i, slot]
            out.append(np.einsum("ki,...i->...k", basis.A, F[..., :, slot]))
        return out

    def synthesize(self, coeffs, which="id", charge_of_mode=None, out_dtype=complex):
        """Evaluate sum_k c_k D[B_k] e^{im phi} on the grid.

        which: 'id' | 'dtheta' | 'd2theta' and an extra factor (i m)^p applied
        through 'dphi' / 'd2phi' / 'dtheta_dphi' shortcuts.
        """
        shape = None
        for c in coeffs:
            if c is not None:
                shape = c.shape[:-1]
                break
        if shape is None:
            raise ValueError("all modes empty")
        F = np.zeros(shape + (self.n_theta, self.n_phi), dtype=complex)
        for slot, m in enumerate(self.m_fft):
            c = coeffs[slot]
            if c is None:
                continue
            q = 0 if charge_of_mode is None else int(charge_of_mode(m))
            basis = self.basis(m, q)
            if which == "id":
                T, fac = basis.B, 1.0
            elif which == "dtheta":
                T, fac = basis.dB, 1.0
            elif which == "d2theta":
                T, fac = basis.d2B, 1.0
            elif which == "dphi":
                T, fac = basis.B, 1j * m
            elif which == "d2phi":
                T, fac = basis.B, -(m**2)
            elif which == "dtheta_dphi":
                T, fac = basis.dB, 1j * m
            else:
                raise ValueError(which)
            F[..., :, slot] = fac * np.einsum("ki,...k->...i", T, c)
        return np.fft.ifft(F * self.n_phi, axis=-1).astype(out_dtype)

    def evaluate(self, coeffs, theta_pts, phi_pts, charge_of_mode=None):
        """Evaluate the analyzed field at arbitrary points (same-shape arrays)."""
        theta_pts = np.asarray(theta_pts, dtype=float)
        phi_pts = np.asarray(phi_pts, dtype=float)
        x = np.cos(theta_pts)
        vals = None
        for slot, m in enumerate(self.m_fft):
            c = coeffs[slot]
            if c is None:
                continue
            q = 0 if charge_of_mode is None else int(charge_of_mode(m))
            beta, alpha = abs(m), abs(m - q)
            nk = c.shape[-1]
            env = (1.0 - x) ** (beta / 2.0) * (1.0 + x) ** (alpha / 2.0)
            contrib = 0.0
            for k in range(nk):
                n = np.exp(-_jacobi_norm(k, beta, alpha))
                Bk = n * env * eval_jacobi(k, beta, alpha, x)
                contrib = contrib + c[..., k] * Bk
            vals = (0.0 if vals is None else vals) + contrib * np.exp(1j * m * phi_pts)
        return vals


@lru_cache(maxsize=32)
def shared_grid(n_theta: int, n_phi: int) -> SphereGrid:
    """Process-wide grid cache; grids are immutable after construction."""
    return SphereGrid(n_theta, n_phi)
