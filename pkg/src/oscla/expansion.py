"""Exact curvature of the adiabatic metrics omega_k, their k-expansions with
fitted decay orders, and the linearized operators (assembled p o L_1, the
twisted base Lichnerowicz, finite-difference linearization probes).

Expansion conventions (validated by decay fits):

    Lambda_k  = Lambda_V + k^{-1} Lambda_B + O(k^{-2})
    Delta_k   = Delta_V + k^{-1} Delta_H + O(k^{-2})
    Ric(w_k)  = rho + Ric(w_B) - k^{-1} i ddbar(Lambda_B w_X) + O(k^{-2})
    S(w_k)    = S(w_b) + k^{-1}[S(w_B) + Lam_B rho_H + Delta_V(Lam_B (w_X)_H)]
                + O(k^{-2})

The sign of the order-k^{-1} Ricci term follows from Ric = -i ddbar log det;
with it, the scalar expansion above holds with the positive vertical
Laplacian, which is what makes the optimal-symplectic-connection field the
E-component of the k^{-1} coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .metrics import BaseMetric, RelativeMetric, TotalMetric, log1p_su_ddbar
from .models import ModelError, ModelFibration, ScalarField, TwoFormField


# ---------------------------------------------------------------------------
# exact curvature of omega_k
# ---------------------------------------------------------------------------

def ricci_total(tm: TotalMetric):
    """Adapted-frame components of Ric(omega_k)."""
    model = tm.model
    fr = model.frame
    A, B, C = tm.components()
    det = (A * C - B * np.conj(B)).real
    astar = 2.0 / (1.0 + fr.su) ** 2
    norm = astar * fr.g0b
    logD = np.log(det / norm)
    dv, dm, dh = fr.ddbar(logD.astype(complex))
    lv, lm_, lh = log1p_su_ddbar(model)
    ric_vv = -dv.real + 2.0 * lv
    ric_mix = -dm + 2.0 * lm_
    ric_hh = -dh.real + 2.0 * lh + (2.0 + model.d) * fr.g0b
    return ric_vv + np.zeros(model.shape), ric_mix + np.zeros(model.shape, complex), \
        ric_hh + np.zeros(model.shape)


def contract_total(tm: TotalMetric, beta_vv, beta_mix, beta_hh):
    """Lambda_{omega_k} beta = tr(G^{-1} B) for frame component blocks."""
    A, B, C = tm.components()
    det = (A * C - B * np.conj(B)).real
    return ((C * beta_vv - B * np.conj(beta_mix) - np.conj(B) * beta_mix
             + A * beta_hh) / det).real


def exact_scalar(tm: TotalMetric):
    """S(omega_k) = Lambda_k Ric(omega_k), no expansion."""
    rv, rm, rh = ricci_total(tm)
    return contract_total(tm, rv, rm, rh)


def form_inner_total(tm: TotalMetric, a1, m1, h1, a2, m2, h2):
    """<alpha, beta>_{omega_k} = tr(G^{-1} A G^{-1} B) for (1,1) blocks."""
    A, B, C = tm.components()
    det = (A * C - B * np.conj(B)).real
    # G^{-1} = (1/det) [[C, -B], [-conj(B), A]]
    # X = G^{-1} A_mat, Y = G^{-1} B_mat, value = tr(X Y)
    x11 = (C * a1 - B * np.conj(m1)) / det
    x12 = (C * m1 - B * h1) / det
    x21 = (-np.conj(B) * a1 + A * np.conj(m1)) / det
    x22 = (-np.conj(B) * m1 + A * h1) / det
    y11 = (C * a2 - B * np.conj(m2)) / det
    y12 = (C * m2 - B * h2) / det
    y21 = (-np.conj(B) * a2 + A * np.conj(m2)) / det
    y22 = (-np.conj(B) * m2 + A * h2) / det
    return (x11 * y11 + x12 * y21 + x21 * y12 + x22 * y22).real


def grad_pair_total(tm: TotalMetric, df, dg):
    """<grad f, grad g>_{omega_k} = 2 Re(g^{j kbar} E_j f conj(E_k g));
    df, dg are (E_u ., E_z .) tuples."""
    A, B, C = tm.components()
    det = (A * C - B * np.conj(B)).real
    fu, fz = df
    gu, gz = dg
    val = (C * fu * np.conj(gu) - B * fu * np.conj(gz)
           - np.conj(B) * fz * np.conj(gu) + A * fz * np.conj(gz)) / det
    return 2.0 * val.real


def frame_grads(model: ModelFibration, f):
    fr = model.frame
    F = fr.full(f)
    return fr.e_u(F), fr.e_z(F)


def scalar_linearization(tm: TotalMetric, phi, S=None, lich=None):
    """d/dt S(omega_k + t i ddbar phi) = -D*D phi + (1/2)<grad S, grad phi>."""
    if lich is None:
        lich = lichnerowicz_total(tm, phi)
    if S is None:
        S = exact_scalar(tm)
    gp = grad_pair_total(tm, frame_grads(tm.model, S), frame_grads(tm.model, phi))
    return -lich + 0.5 * gp


def lichnerowicz_total(tm: TotalMetric, phi, grad="real", S=None):
    """Full-space Lichnerowicz of omega_k applied pointwise:
    D*D phi = Delta^2 phi + <Ric, i ddbar phi> + (1/2) <grad S, grad phi>
    (complex gradient pairing on request for the reality diagnostics)."""
    model = tm.model
    fr = model.frame
    vals = fr.full(phi.values if isinstance(phi, ScalarField) else phi)
    pv, pm, ph = fr.ddbar(vals)
    lap = -contract_total(tm, pv, pm, ph)
    lv, lmx, lh = fr.ddbar(lap.astype(complex))
    lap2 = -contract_total(tm, lv, lmx, lh)
    rv, rm, rh = ricci_total(tm)
    cross = form_inner_total(tm, rv, rm, rh, pv, pm, ph)
    if S is None:
        S = exact_scalar(tm)
    if grad == "real":
        gterm = 0.5 * grad_pair_total(tm, frame_grads(model, S),
                                      frame_grads(model, vals))
        return lap2 + cross + gterm
    # complex pairing: 2 g^{j kbar} d_j S d_kbar phi (no symmetrization)
    A, B, C = tm.components()
    det = (A * C - B * np.conj(B)).real
    Su, Sz = frame_grads(model, S)
    # conj-frame derivatives of phi: E_ub phi = conj(E_u conj(phi)) etc.
    fub = fr.dub(vals)
    fzb = fr.e_zb(vals)
    gterm = 2.0 * (C * Su * fub - B * Su * fzb
                   - np.conj(B) * Sz * fub + A * Sz * fzb) / det
    return lap2 + cross + gterm


# ---------------------------------------------------------------------------
# predicted expansion coefficients
# ---------------------------------------------------------------------------

def expansion_terms(omega_X: RelativeMetric, omega_B: BaseMetric, quantity: str,
                    test_form: TwoFormField = None, test_fn=None):
    """Order-0 and order-1 coefficient fields of the adiabatic expansion."""
    model = omega_X.model
    if quantity == "contraction":
        if test_form is None:
            raise ModelError("contraction expansion needs a test two-form")
        c0 = geo.contract(test_form, omega_X, mode="vertical")
        c1 = geo.contract(test_form, omega_X, omega_B, mode="horizontal")
        return c0, c1
    if quantity == "laplacian":
        if test_fn is None:
            raise ModelError("laplacian expansion needs a test function")
        return (geo.vertical_laplacian(test_fn, omega_X),
                geo.horizontal_laplacian(test_fn, omega_X, omega_B))
    if quantity == "ricci":
        rho = geo.relative_ricci(omega_X)
        base_ric = omega_B.ricci_density()
        order0 = TwoFormField(model, rho.vv, rho.mix, rho.hh + base_ric)
        own = omega_X.two_form()
        lam_B = geo.split_hh(own, omega_X) / omega_B.density()
        dv, dm, dh = model.frame.ddbar(lam_B.astype(complex))
        order1 = TwoFormField(model, -dv.real, -dm, -dh.real)
        return order0, order1
    if quantity == "scalar":
        S0 = geo.fibre_scalar_curvature(omega_X)
        rho = geo.relative_ricci(omega_X)
        gB = omega_B.density()
        lam_rhoH = geo.split_hh(rho, omega_X) / gB
        own = omega_X.two_form()
        lam_wH = geo.split_hh(own, omega_X) / gB
        S1 = (omega_B.scalar_curvature() + lam_rhoH
              + geo.vertical_laplacian(lam_wH, omega_X))
        return S0, S1
    raise ModelError(f"unknown expansion quantity {quantity!r}")


# ---------------------------------------------------------------------------
# decay fits
# ---------------------------------------------------------------------------

@dataclass
class ExpansionReport:
    quantity: str
    k_samples: list
    residual_norms: list
    slope: float
    slope_stderr: float
    intercept: float

    @property
    def confidence_interval(self):
        return (self.slope - 2 * self.slope_stderr, self.slope + 2 * self.slope_stderr)

    def rows(self):
        return [{"k": k, "residual": r} for k, r in
                zip(self.k_samples, self.residual_norms)]


def loglog_slope(k_samples, norms):
    lk = np.log(np.asarray(k_samples, dtype=float))
    ln = np.log(np.maximum(np.asarray(norms, dtype=float), 1e-300))
    A = np.vstack([lk, np.ones_like(lk)]).T
    coef, res, *_ = np.linalg.lstsq(A, ln, rcond=None)
    slope, intercept = coef
    n = len(lk)
    if n > 2:
        resid = ln - A @ coef
        s2 = float(resid @ resid) / (n - 2)
        sxx = float(np.sum((lk - lk.mean()) ** 2))
        stderr = np.sqrt(s2 / sxx)
    else:
        stderr = 0.0
    return float(slope), float(stderr), float(intercept)


def _sup(x):
    return float(np.max(np.abs(x)))


def decay_fit(omega_X: RelativeMetric, omega_B: BaseMetric, quantity: str,
              order: int = 1, k_samples=(20.0, 40.0, 80.0, 160.0),
              corrections=None, test_form=None, test_fn=None,
              subtract_mean=False) -> ExpansionReport:
    """Fit the log-log decay slope of (exact - predicted through order k^{-order}).

    With `subtract_mean` the residual field is replaced by its deviation from
    its grid mean at each k (the Prop-4.5-style statement that the remainder
    is constant to the next order).
    """
    if len(k_samples) < 4 or max(k_samples) / min(k_samples) < 8:
        raise ModelError("slope fit needs >= 4 k-values spanning a factor >= 8")
    model = omega_X.model
    norms = []
    if quantity == "contraction":
        c0, c1 = expansion_terms(omega_X, omega_B, quantity, test_form=test_form)
    elif quantity == "laplacian":
        c0, c1 = expansion_terms(omega_X, omega_B, quantity, test_fn=test_fn)
    elif quantity in ("ricci", "scalar"):
        c0, c1 = expansion_terms(omega_X, omega_B, quantity)
    else:
        raise ModelError(f"unknown expansion quantity {quantity!r}")
    for k in k_samples:
        tm = TotalMetric(omega_X, omega_B, float(k), list(corrections or []))
        tm.check_positive()
        if quantity == "scalar":
            resid = exact_scalar(tm) - c0 - c1 / k
        elif quantity == "ricci":
            rv, rm, rh = ricci_total(tm)
            pv = c0.vv + c1.vv / k
            pm = c0.mix + c1.mix / k
            ph = c0.hh + c1.hh / k
            resid = max(_sup(rv - pv), _sup(rm - pm), _sup(rh - ph))
            norms.append(resid)
            continue
        elif quantity == "laplacian":
            pv, pm, ph = model.frame.ddbar(model.frame.full(test_fn))
            lap_exact = -contract_total(tm, pv, pm, ph)
            resid = lap_exact - c0 - c1 / k
        else:  # contraction
            exact = contract_total(tm, test_form.vv, test_form.mix, test_form.hh)
            resid = exact - c0 - c1 / k
        if order == 0:
            resid = resid + c1 / k
        if subtract_mean:
            resid = resid - np.mean(resid)
        norms.append(_sup(resid))
    slope, stderr, intercept = loglog_slope(k_samples, norms)
    return ExpansionReport(quantity, list(k_samples), norms, slope, stderr, intercept)


# ---------------------------------------------------------------------------
# the order-one correction l_1
# ---------------------------------------------------------------------------

def solve_order_one(omega_X: RelativeMetric, omega_B: BaseMetric,
                    Eb: geo.PotentialBundle = None, tol=1e-6):
    """l_1 in C^infty_R with the fibrewise Lichnerowicz solve
    D_V* D_V l_1 = (S_1)_R, so that omega_k + k^{-1} i ddbar l_1 removes the
    non-constant R-part of the k^{-1} scalar coefficient.

    Errors when the hypotheses fail: the base part of S_1 must be constant
    (twisted cscK base) and the E-part must be a global potential (extremal
    symplectic connection)."""
    from .correction import solve_R_step
    from .osc import R_apply, R_norm

    model = omega_X.model
    if Eb is None:
        Eb = geo.build_potential_bundle(omega_X)
    _, S1 = expansion_terms(omega_X, omega_B, "scalar")
    dec = geo.decompose(S1, omega_X, Eb)
    base_var = float(np.max(np.abs(dec.phi_B - np.mean(dec.phi_B))))
    scale = max(_sup(S1), 1e-300)
    if base_var / scale > tol:
        raise ModelError(
            f"S_1 base component is not constant (relative variation "
            f"{base_var / scale:.3e}): omega_B is not twisted cscK for this model")
    if Eb.rank and _sup(dec.phi_E) / scale > 1e-12:
        rf = R_apply(dec.phi_E, omega_X, check_potential=False)
        _, l2 = R_norm(rf, omega_X, omega_B)
        if l2 / max(_sup(dec.phi_E), 1e-300) > tol:
            raise ModelError(
                f"S_1 E-component is not a global holomorphy potential "
                f"(R-residual {l2:.3e}): omega_X is not an extremal "
                f"symplectic connection")
    l1 = solve_R_step(dec.phi_R, omega_X)
    return l1, dec


# ---------------------------------------------------------------------------
# assembled p o L_1
# ---------------------------------------------------------------------------

@dataclass
class AssembledOperator:
    """Galerkin matrix of the order-k^{-1} Lichnerowicz coefficient on E.

    Sections: the momentum sector uses real base harmonics; on twisted models
    the charged sectors use monopole-harmonic base functions of charge +-d so
    the global potentials are exactly representable.  matrix is hermitian PSD;
    mass is the L^2(omega_X ^ omega_B) Gram matrix of the sections.
    """

    model: ModelFibration
    sections: list              # fields on X (complex arrays)
    labels: list
    matrix: np.ndarray
    mass: np.ndarray
    sv_threshold: float = 1e-6

    @property
    def size(self):
        return len(self.sections)

    def hermiticity(self):
        M = self.matrix
        return float(np.max(np.abs(M - M.conj().T)) / max(np.max(np.abs(M)), 1e-300))

    def spectrum(self):
        """Eigenvalues of the mass-whitened matrix (ascending)."""
        Lw = np.linalg.cholesky(self.mass)
        Li = np.linalg.inv(Lw)
        A = Li @ self.matrix @ Li.conj().T
        return np.linalg.eigvalsh(0.5 * (A + A.conj().T))

    def nullspace_dimension(self):
        ev = self.spectrum()
        top = max(abs(ev[-1]), 1e-300)
        return int(np.sum(np.abs(ev) < self.sv_threshold * top))


def _base_harmonics(grid, l_max):
    """Real spherical harmonics on the base grid, l = 0..l_max."""
    out = []
    for l in range(l_max + 1):
        for m in range(0, min(l, grid.m_max) + 1):
            co = [None] * len(grid.m_fft)
            for slot, mm in enumerate(grid.m_fft):
                if abs(mm) > grid.m_max:
                    continue
                nb = grid.basis(mm, 0)
                arr = np.zeros((nb.nk,), complex)
                if abs(mm) == m and 0 <= l - m < nb.nk:
                    arr[l - m] = 1.0 if mm >= 0 else (0.0 if m else 1.0)
                co[slot] = arr
            f = grid.synthesize(co).real
            out.append((f"Y{l}{m}re", f))
            if m > 0:
                co = [None] * len(grid.m_fft)
                for slot, mm in enumerate(grid.m_fft):
                    if abs(mm) > grid.m_max:
                        continue
                    nb = grid.basis(mm, 0)
                    arr = np.zeros((nb.nk,), complex)
                    if mm == m and 0 <= l - m < nb.nk:
                        arr[l - m] = 1j
                    elif mm == -m and 0 <= l - m < nb.nk:
                        arr[l - m] = -1j
                    co[slot] = arr
                out.append((f"Y{l}{m}im", grid.synthesize(co).real))
    return out


def _charged_base_functions(grid, l_max, q):
    """Monopole-harmonic base functions of charge q (complex 2D arrays)."""
    out = []
    for m in range(-min(l_max, grid.m_max), min(l_max, grid.m_max) + 1):
        nb = grid.basis(m, q)
        keep = max(0, l_max + 1 - (abs(m) + abs(m - q) + 1) // 2)
        for kk in range(min(keep, nb.nk)):
            co = [None] * len(grid.m_fft)
            for slot, mm in enumerate(grid.m_fft):
                if abs(mm) > grid.m_max:
                    continue
                nbm = grid.basis(mm, q)
                arr = np.zeros((nbm.nk,), complex)
                if mm == m:
                    arr[kk] = 1.0
                co[slot] = arr
            f = grid.synthesize(co, charge_of_mode=lambda _m, _q=q: _q)
            out.append((f"Z{m}k{kk}q{q}", f))
            count += 1
    return out


def assemble_pL1(omega_X: RelativeMetric, omega_B: BaseMetric,
                 Eb: geo.PotentialBundle, base_basis_size: int = 5,
                 sv_threshold=1e-6) -> AssembledOperator:
    """Galerkin assembly M[phi, psi] = int <R phi, R psi> omega_X ^ omega_B."""
    from .osc import R_apply

    if base_basis_size < 4:
        raise ModelError("base Galerkin basis truncation must be >= 4")
    model = omega_X.model
    fr = model.frame
    a = omega_X.vv()
    gB = omega_B.density()
    su, u = fr.su, fr.u
    h_mom = (su - 1.0) / (su + 1.0)
    h_c = 2.0 * np.conj(u) / (1.0 + su)     # h_x - i h_y, fibre mode -1
    sections = []
    labels = []
    for name, chi in _base_harmonics(model.base_grid, base_basis_size):
        sections.append(model.broadcast_base(chi) * h_mom)
        labels.append(f"mom:{name}")
    charged = _charged_base_functions(model.base_grid, base_basis_size, model.d)
    for name, zeta in charged:
        zf = np.asarray(zeta)[:, :, None, None]
        sections.append(zf * h_c)
        labels.append(f"c:{name}")
        sections.append(np.conj(zf) * np.conj(h_c))
        labels.append(f"cbar:{name}")
    n = len(sections)
    Rs = [R_apply(s, omega_X, check_potential=False) for s in sections]
    weight = a * a  # <.,.> against omega_X ^ omega_B collapses to a^2
    M = np.zeros((n, n), complex)
    W = np.zeros((n, n), complex)
    wb = model.base_grid.area_weights()[:, :, None, None]
    wf = model.fibre_grid.area_weights()[None, None, :, :]
    wtot = wb * wf
    for i in range(n):
        for j in range(i, n):
            M[i, j] = np.sum(Rs[i] * np.conj(Rs[j]) * weight * wtot)
            M[j, i] = np.conj(M[i, j])
            W[i, j] = np.sum(sections[i] * np.conj(sections[j]) * a * gB * wtot)
            W[j, i] = np.conj(W[i, j])
    return AssembledOperator(model, sections, labels, M, W, sv_threshold)


def endomorphism_kernel_oracle(model: ModelFibration):
    """Independent count of ker(R) on E (complexified): global vertical
    automorphisms = h^0(End(O + O(d))) minus scalars, by Riemann-Roch on
    split line bundles: h^0(O(k)) = max(0, k+1)."""
    d = model.d
    def h0(k):
        return max(0, k + 1)
    return h0(0) + h0(0) + h0(d) + h0(-d) - 1
