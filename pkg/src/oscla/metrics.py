"""Relative, base and total metrics on the catalogue models.

A relative metric is stored through its hermitian-weight data and potential:

    omega_X = i ddbar [ 2 log( h_0 |xi_0|^2 + h_1 |xi_1|^2 )^(1/2-free) + phi ] + pi^* nu

with per-summand primal weights h_i = e^{2 v_i} h_i*, backbone weights
h_0* = 1 and h_1* = (1+|z|^2)^{-d}.  The reference (v = 0, phi = 0, nu = 0)
restricts to the round metric of area 4 pi on every fibre (so fibrewise
Ric = omega; the fibre polarization is the square O(2) of the relative
hyperplane class).  All component arrays are adapted-frame blocks; see
`oscla.calculus` for the frame.

The backbone components are closed forms:

    a* = 2/(1+s_u)^2
    b* = -2 conj(mu) ubar /(1+s_u)^2
    c* = -4 (dz conj mu) s_u/(1+s_u) + 2 |mu|^2 s_u/(1+s_u)^2

with mu = (d/2) zbar/(1+|z|^2); weight corrections and potentials enter
through spectral i-ddbar of globally smooth scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import ModelError, ModelFibration, ScalarField, TwoFormField


class PositivityError(ModelError):
    """Raised when a constructed metric fails pointwise positivity."""

    def __init__(self, msg, worst_node=None, eigenvalue=None, k_min=None):
        super().__init__(msg)
        self.worst_node = worst_node
        self.eigenvalue = eigenvalue
        self.k_min = k_min


def backbone_components(model: ModelFibration):
    """Closed-form adapted-frame components of the reference omega_X."""
    fr = model.frame
    su = fr.su
    one = 1.0 + su
    a = 2.0 / one**2 + np.zeros(model.shape)
    b = -2.0 * fr.mub * np.conj(fr.u) / one**2 + np.zeros(model.shape, dtype=complex)
    c = (-4.0 * fr.dz_mub * su / one
         + 2.0 * (fr.mu * fr.mub).real * su / one**2) + np.zeros(model.shape)
    return a, b, c


def ddbar_components(model: ModelFibration, psi, off=0):
    """Adapted-frame components of i ddbar psi for a smooth scalar psi."""
    fr = model.frame
    vv, mix, hh = fr.ddbar(np.asarray(psi), off)
    return vv, mix, hh


def log1p_su_ddbar(model: ModelFibration):
    """Closed-form frame components of i ddbar log(1+s_u)."""
    fr = model.frame
    one = 1.0 + fr.su
    vv = 1.0 / one**2 + np.zeros(model.shape)
    mix = -fr.mub * np.conj(fr.u) / one**2 + np.zeros(model.shape, dtype=complex)
    hh = (-2.0 * fr.dz_mub * fr.su / one
          + (fr.mu * fr.mub).real * fr.su / one**2) + np.zeros(model.shape)
    return vv, mix, hh


@dataclass
class BaseMetric:
    """omega_B = scale * omega_FS + i ddbar psi_B on the base sphere."""

    model: ModelFibration
    scale: float = 1.0
    psi: np.ndarray | None = None  # base-grid potential (ntb, npb)

    def __post_init__(self):
        if self.scale <= 0:
            raise ModelError("base metric scale must be positive")
        self._density = None

    def density_2d(self):
        """HH density g_B on the base grid (ntb, npb)."""
        fr = self.model.frame
        g = self.scale * fr.g0b[:, :, 0, 0] + np.zeros(self.model.shape[:2])
        if self.psi is not None:
            g = g + fr.base.dz_dzb(np.asarray(self.psi, dtype=complex)).real
        if np.min(g) <= 0:
            raise PositivityError("base metric not positive")
        return g

    def density(self):
        """HH density g_B (pure base block; mix/vv vanish for pullbacks)."""
        if self._density is None:
            self._density = self.density_2d()[:, :, None, None] + np.zeros(self.model.shape)
        return self._density

    def volume(self):
        fr = self.model.frame
        return fr.integrate_base(np.ones(self.model.shape), self.density())

    def ricci_density_2d(self):
        """Ric(omega_B) as an HH density: -i ddbar log g_B."""
        fr = self.model.frame
        g = self.density_2d()
        g0 = fr.g0b[:, :, 0, 0]
        ratio = np.log(g / (self.scale * g0)) + 0j
        correction = fr.base.dz_dzb(ratio).real
        return 2.0 * g0 - correction

    def ricci_density(self):
        return self.ricci_density_2d()[:, :, None, None] + np.zeros(self.model.shape)

    def scalar_curvature_2d(self):
        return self.ricci_density_2d() / self.density_2d()

    def scalar_curvature(self):
        return self.scalar_curvature_2d()[:, :, None, None] + np.zeros(self.model.shape)


@dataclass
class RelativeMetric:
    """Relatively Kaehler form omega_X, fibrewise positive.

    v0, v1: log weight corrections on the base grid (dual to nothing: primal).
    phi: global smooth potential on X (tensor grid).
    nu_scale, nu_psi: harmonic multiple of omega_FS,B plus i ddbar of a base
    potential, added as a pullback two-form (HH block only).
    """

    model: ModelFibration
    v0: np.ndarray | None = None
    v1: np.ndarray | None = None
    phi: np.ndarray | None = None
    nu_scale: float = 0.0
    nu_psi: np.ndarray | None = None

    def __post_init__(self):
        self._comp = None
        self._volume = None

    # -- potentials --------------------------------------------------------

    def weight_correction_field(self):
        """W = 2 log[(e^{2 v0} + e^{2 v1} s_u)/(1 + s_u)]: the globally smooth
        potential difference produced by the weight corrections."""
        fr = self.model.frame
        if self.v0 is None and self.v1 is None:
            return None
        e0 = np.exp(2.0 * self.model.broadcast_base(self.v0)) if self.v0 is not None else 1.0
        e1 = np.exp(2.0 * self.model.broadcast_base(self.v1)) if self.v1 is not None else 1.0
        return 2.0 * np.log((e0 + e1 * fr.su) / (1.0 + fr.su))

    def fibre_potential(self):
        """Total smooth potential added to the round reference fibre metric."""
        W = self.weight_correction_field()
        parts = [p for p in (W, self.phi) if p is not None]
        if not parts:
            return np.zeros(self.model.shape)
        return sum(parts)

    # -- components ---------------------------------------------------------

    def components(self):
        """Adapted-frame blocks (a, b, c) of omega_X."""
        if self._comp is None:
            model = self.model
            a, b, c = backbone_components(model)
            pot = self.fibre_potential()
            if np.max(np.abs(pot)) > 0:
                dv, dm, dh = ddbar_components(model, pot)
                a = a + dv.real
                b = b + dm
                c = c + dh.real
            if self.nu_scale != 0.0:
                c = c + self.nu_scale * model.frame.g0b
            if self.nu_psi is not None:
                pb = model.broadcast_base(self.nu_psi)
                c = c + model.frame.dz_dzb(pb).real
            self._comp = (a, b, c)
        return self._comp

    def vv(self):
        return self.components()[0]

    def check_fibre_positive(self):
        a = self.vv()
        amin = float(np.min(a))
        if amin <= 0:
            idx = np.unravel_index(int(np.argmin(a)), a.shape)
            raise PositivityError(
                f"fibrewise positivity lost: VV eigenvalue {amin:.3e} at node {idx}",
                worst_node=idx, eigenvalue=amin)
        return amin

    def fibre_volumes(self):
        """V(b) = integral over the fibre of omega_b; base-grid array."""
        fr = self.model.frame
        V = fr.integrate_fibre(np.ones(self.model.shape), self.vv())
        return V[:, :, 0, 0].real

    def volume_constancy(self):
        V = self.fibre_volumes()
        mean = float(np.mean(V))
        return mean, float(np.max(np.abs(V - mean)))

    def perturbed(self, dphi):
        """omega_X + i ddbar dphi with recomputed caches."""
        dphi = dphi.values if isinstance(dphi, ScalarField) else np.asarray(dphi)
        phi = dphi if self.phi is None else self.phi + dphi
        out = RelativeMetric(self.model, self.v0, self.v1, phi,
                             self.nu_scale, self.nu_psi)
        out.check_fibre_positive()
        return out

    def with_pullback(self, scale=0.0, psi=None):
        ns = self.nu_scale + scale
        np_ = psi if self.nu_psi is None else (self.nu_psi + (psi if psi is not None else 0))
        return RelativeMetric(self.model, self.v0, self.v1, self.phi, ns, np_)

    def two_form(self):
        a, b, c = self.components()
        return TwoFormField(self.model, a, b, c)


def reference_relative_metric(model: ModelFibration) -> RelativeMetric:
    """The catalogue reference: fibrewise round Fubini-Study of the
    direct-sum hermitian metric with constant-curvature weights."""
    m = RelativeMetric(model)
    m.check_fibre_positive()
    return m


def perturb_metric(omega_X: RelativeMetric, phi) -> RelativeMetric:
    """omega_X + i ddbar phi; raises PositivityError with the worst node."""
    return omega_X.perturbed(phi)


@dataclass
class TotalMetric:
    """omega_k = k omega_B + omega_X + i ddbar (sum_j k^{p_j} psi_j)."""

    relative: RelativeMetric
    base: BaseMetric
    k: float
    corrections: list = field(default_factory=list)  # (array or ScalarField, power)

    def __post_init__(self):
        if self.k <= 0:
            raise ModelError("adiabatic parameter k must be positive")
        self.model = self.relative.model
        self._comp = None

    def correction_potential(self):
        pot = np.zeros(self.model.shape)
        for psi, p in self.corrections:
            v = psi.values if isinstance(psi, ScalarField) else np.asarray(psi)
            pot = pot + float(self.k) ** p * v
        return pot

    def components(self):
        if self._comp is None:
            a, b, c = self.relative.components()
            c = c + self.k * self.base.density()
            pot = self.correction_potential()
            if np.max(np.abs(pot)) > 0:
                dv, dm, dh = ddbar_components(self.model, pot)
                a = a + dv.real
                b = b + dm
                c = c + dh.real
            self._comp = (a, b, c)
        return self._comp

    def det(self):
        a, b, c = self.components()
        return a * c - (b * np.conj(b)).real

    def min_eigenvalue(self):
        a, b, c = self.components()
        tr = a + c
        disc = np.sqrt(np.maximum((a - c) ** 2 + 4 * (b * np.conj(b)).real, 0.0))
        return 0.5 * (tr - disc)

    def check_positive(self):
        ev = self.min_eigenvalue()
        emin = float(np.min(ev))
        if emin <= 0:
            idx = np.unravel_index(int(np.argmin(ev)), ev.shape)
            raise PositivityError(
                f"total metric not positive at k={self.k}: eigenvalue {emin:.3e} "
                f"at node {idx}; minimal admissible k ~ {self._bisect_k():.4g}",
                worst_node=idx, eigenvalue=emin, k_min=self._bisect_k())
        return emin

    def _bisect_k(self):
        """Smallest k keeping positivity, found by bisection."""
        def positive(k):
            tm = TotalMetric(self.relative, self.base, k, self.corrections)
            return float(np.min(tm.min_eigenvalue())) > 0

        lo, hi = self.k, max(2.0 * self.k, 1.0)
        while not positive(hi):
            hi *= 2.0
            if hi > 1e8:
                return float("inf")
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if positive(mid):
                hi = mid
            else:
                lo = mid
        return hi


def total_metric(omega_X: RelativeMetric, omega_B: BaseMetric, k: float,
                 corrections=None) -> TotalMetric:
    tm = TotalMetric(omega_X, omega_B, float(k), list(corrections or []))
    tm.check_positive()
    return tm
