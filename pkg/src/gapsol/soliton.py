"""Supercell assembly of the envelope ansatz and the direct Newton corrector.

The physical approximation at omega = omega* + Omega*eps^2 is

    u_ans(x) = eps * sum_j A_j(eps x) p_{n*}(x, k^(j)) exp(i k^(j).x)

on an S x S supercell of primitive cells with periodic boundary conditions
(admissible because gap solitons decay exponentially).  Every k^(j) must be
commensurate with the supercell reciprocal grid; S is chosen by continued
fractions when the level set is away from Gamma.

The Maxwell residual R(u) = curl' curl' u - omega^2 (eps u + F(u)) is
evaluated pseudospectrally; the corrector runs Newton iterations restricted
to the PT-symmetric subspace, with MINRES inner solves preconditioned by
the constant-coefficient shifted Maxwell operator.  Nondimensional units
mu0 = eps0 = c = 1 throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, minres

from .lattice import BravaisLattice
from .medium import PeriodicScalarField, SusceptibilityField
from .cme import EnvelopeState

__all__ = [
    "SupercellGrid",
    "GapSolitonApprox",
    "commensurate_supercell",
    "envelope_on_grid",
    "assemble_ansatz",
    "kerr",
    "residual",
    "magnetic_field",
    "newton_correct",
    "pt_defect",
    "pt_project",
    "bloch_transform",
    "inverse_bloch_transform",
    "bloch_convolve",
]


# ---------------------------------------------------------------------------
# supercell grid
# ---------------------------------------------------------------------------

@dataclass
class SupercellGrid:
    """S x S primitive cells, `percell` samples per cell per direction.

    Samples sit at x = (i - Ntot/2)/percell * a1 + (j - Ntot/2)/percell * a2,
    so the grid maps onto itself under x -> -x (index negation mod Ntot).
    """

    lattice: BravaisLattice
    S: int
    percell: int
    kappa: float
    eps_param: float = 0.0
    omega: float = 0.0
    commensuration_error: float = 0.0

    def __post_init__(self):
        self.Ntot = self.S * self.percell
        if self.Ntot % 2 != 0:
            raise ValueError("supercell grid must have an even sample count")
        mi = (np.fft.fftfreq(self.Ntot, d=1.0 / self.Ntot)).astype(int)
        g1, g2 = np.meshgrid(mi, mi, indexing="ij")
        q = (g1[..., None] * self.lattice.b1 + g2[..., None] * self.lattice.b2) / self.S
        self._ktilde = np.empty((3, self.Ntot, self.Ntot))
        self._ktilde[0] = q[..., 0]
        self._ktilde[1] = q[..., 1]
        self._ktilde[2] = self.kappa
        self._q2 = q[..., 0] ** 2 + q[..., 1] ** 2

    @property
    def area(self) -> float:
        return self.lattice.cell_area * self.S**2

    def fractional(self):
        """Per-axis fractional lattice coordinates of the samples."""
        f = (np.arange(self.Ntot) - self.Ntot // 2) / self.percell
        return f, f

    def coords(self) -> np.ndarray:
        f1, f2 = self.fractional()
        return (f1[:, None, None] * self.lattice.a1[None, None, :]
                + f2[None, :, None] * self.lattice.a2[None, None, :])

    def tile_cell(self, values: np.ndarray) -> np.ndarray:
        """Tile cell samples (N1, N2) over the supercell grid, exactly."""
        n1, n2 = values.shape
        if n1 % self.percell or n2 % self.percell:
            raise ValueError("cell grid must be a multiple of the per-cell resolution")
        i = np.arange(self.Ntot) - self.Ntot // 2
        i1 = (i % self.percell) * (n1 // self.percell)
        i2 = (i % self.percell) * (n2 // self.percell)
        return values[np.ix_(i1, i2)]

    # -- spectral operators -------------------------------------------------

    def curl(self, u: np.ndarray) -> np.ndarray:
        """curl' u = (d1, d2, i kappa) x u, pseudospectral, u of shape (3, N, N)."""
        uhat = sfft.fft2(u, axes=(-2, -1))
        out = 1j * np.cross(self._ktilde, uhat, axisa=0, axisb=0, axisc=0)
        return sfft.ifft2(out, axes=(-2, -1))

    def divergence(self, u: np.ndarray) -> np.ndarray:
        uhat = sfft.fft2(u, axes=(-2, -1))
        div = 1j * np.einsum("d...,d...->...", self._ktilde, uhat)
        return sfft.ifft2(div)

    def curl_curl(self, u: np.ndarray) -> np.ndarray:
        uhat = sfft.fft2(u, axes=(-2, -1))
        kt = self._ktilde
        cc = -np.cross(kt, np.cross(kt, uhat, axisa=0, axisb=0, axisc=0),
                       axisa=0, axisb=0, axisc=0)
        return sfft.ifft2(cc, axes=(-2, -1))

    def l2_norm(self, u: np.ndarray) -> float:
        return float(np.linalg.norm(u) * np.sqrt(self.area) / self.Ntot)

    def h2_norm(self, u: np.ndarray) -> float:
        """Discrete Sobolev norm (sum over modes of (1+|q|^2)^2 |uhat|^2 |D|)^(1/2)."""
        uhat = sfft.fft2(u, axes=(-2, -1)) / self.Ntot**2
        w = (1.0 + self._q2) ** 2
        return float(np.sqrt(np.sum(w * np.abs(uhat) ** 2) * self.area))


def commensurate_supercell(lattice: BravaisLattice, kpoints, S_min: int,
                           tol: float = 1e-8, S_max: int = 4096):
    """Smallest S >= S_min making every k^(j) lie on the supercell k-grid.

    k^(j) = (r1 b1 + r2 b2)/S must hold with integers r to tolerance `tol`;
    rational approximations come from continued fractions of the fractional
    coordinates.  Returns (S, max commensuration error).
    """
    kpoints = np.atleast_2d(np.asarray(kpoints, dtype=float))
    B = np.column_stack([lattice.b1, lattice.b2])
    fracs = np.array([np.linalg.solve(B, k) for k in kpoints]).ravel()
    denom = 1
    for fr in fracs:
        f = Fraction(fr).limit_denominator(S_max)
        if abs(float(f) - fr) > tol:
            raise ValueError(f"fractional coordinate {fr} not commensurable "
                             f"within {tol} at denominators <= {S_max}")
        denom = denom * f.denominator // math.gcd(denom, f.denominator)
    S = ((max(S_min, denom) + denom - 1) // denom) * denom
    err = float(max(abs(np.rint(fr * S) / S - fr) for fr in fracs))
    return S, err


# ---------------------------------------------------------------------------
# ansatz assembly
# ---------------------------------------------------------------------------

@dataclass
class GapSolitonApprox:
    grid: SupercellGrid
    u: np.ndarray                      # (3, Ntot, Ntot) ansatz field
    u_corr: np.ndarray | None = None
    h: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def intensity(self) -> np.ndarray:
        fld = self.u_corr if self.u_corr is not None else self.u
        return np.sum(np.abs(fld) ** 2, axis=0)


def envelope_on_grid(A: EnvelopeState, grid: SupercellGrid, eps_param: float) -> np.ndarray:
    """A_j(eps_param * x) sampled on the supercell grid (spectral interpolation).

    With x = f1 a1 + f2 a2 the interpolation phase splits per Fourier column:
    phase(i,j;m,n) = f1(i) P_n(m) + f2(j) Q_n(m) + L (xi_m + xi_n), so the sum
    over (m, n) runs as an n-loop of small matrix products.
    """
    f1, f2 = grid.fractional()
    M = A.M
    Ahat = sfft.fft2(A.fields, axes=(-2, -1)) / M**2
    xi = A.freqs()
    a1, a2 = grid.lattice.a1, grid.lattice.a2
    out = np.zeros((A.N, grid.Ntot, grid.Ntot), dtype=complex)
    for n in range(M):
        P = eps_param * (xi * a1[0] + xi[n] * a1[1])   # coefficient of f1, (M,)
        Q = eps_param * (xi * a2[0] + xi[n] * a2[1])   # coefficient of f2, (M,)
        base = A.L * (xi + xi[n])
        ph1 = np.exp(1j * (np.outer(f1, P) + base[None, :]))   # (Ntot, M)
        ph2 = np.exp(1j * np.outer(Q, f2))                     # (M, Ntot)
        for j in range(A.N):
            out[j] += (ph1 * Ahat[j, :, n][None, :]) @ ph2
    return out


def assemble_ansatz(edge_kpoints, pairs, A: EnvelopeState, eps_param: float,
                    grid: SupercellGrid, decay_tol: float = 1e-6) -> GapSolitonApprox:
    """u_ans = eps * sum_j A_j(eps x) p_j(x) exp(i k^(j).x) on the supercell.

    `pairs` are the phase-fixed Bloch eigenpairs at `edge_kpoints` (cell
    fields on a grid commensurate with grid.percell).  Rejects envelopes
    whose boundary ring exceeds `decay_tol` times the peak (the supercell
    would truncate the soliton).
    """
    if A.boundary_decay() > decay_tol:
        need = 2 * A.L / max(eps_param * np.sqrt(grid.lattice.cell_area), 1e-300)
        raise ValueError(
            f"envelope does not decay inside the box (ring/peak = "
            f"{A.boundary_decay():.2e}); a supercell of >= {need:.0f} cells "
            f"or a larger envelope domain is needed")
    kpoints = np.atleast_2d(np.asarray(edge_kpoints, dtype=float))
    env = envelope_on_grid(A, grid, eps_param)
    x = grid.coords()
    u = np.zeros((3, grid.Ntot, grid.Ntot), dtype=complex)
    for kj, pair, envj in zip(kpoints, pairs, env):
        ptile = np.stack([grid.tile_cell(pair.p_values[c]) for c in range(3)])
        phase = np.exp(1j * (x @ kj))
        u += envj[None, :, :] * ptile * phase[None, :, :]
    u *= eps_param
    grid.eps_param = eps_param
    return GapSolitonApprox(grid, u, diagnostics={"envelope_decay": float(A.boundary_decay())})


# ---------------------------------------------------------------------------
# Kerr nonlinearity, residual, magnetic field
# ---------------------------------------------------------------------------

def kerr(u: np.ndarray, chi: SusceptibilityField,
         grid: SupercellGrid | None = None) -> np.ndarray:
    """F_d(u) = sum chi_sym_{a,b,c,d} u_a u_b conj(u_c), chi tiled periodically."""
    if grid is not None and chi.is_isotropic:
        chi0 = grid.tile_cell(chi.chi0.values)
        uu = np.einsum("a...,a...->...", u, u)
        absq = np.einsum("a...,a...->...", u, np.conj(u))
        return chi0 * (uu * np.conj(u) + 2.0 * absq * u)
    return chi.kerr(u)


def kerr_derivative(u: np.ndarray, v: np.ndarray, chi: SusceptibilityField,
                    grid: SupercellGrid | None = None) -> np.ndarray:
    """dF(u)[v], real-linear in v."""
    if grid is not None and chi.is_isotropic:
        chi0 = grid.tile_cell(chi.chi0.values)
        uu = np.einsum("a...,a...->...", u, u)
        uv = np.einsum("a...,a...->...", u, v)
        ucv = np.einsum("a...,a...->...", u, np.conj(v))
        vcu = np.einsum("a...,a...->...", v, np.conj(u))
        absq = np.einsum("a...,a...->...", u, np.conj(u))
        return chi0 * (2.0 * uv * np.conj(u) + uu * np.conj(v)
                       + 2.0 * (ucv + vcu) * u + 2.0 * absq * v)
    return chi.kerr_derivative(u, v)


def residual(u: np.ndarray, omega: float, eps: PeriodicScalarField,
             chi: SusceptibilityField | None, grid: SupercellGrid):
    """R = curl' curl' u - omega^2 (eps u + F(u)) with L2/H2 norms.

    Returns (R, {"res_L2", "res_H2", "u_L2", "u_H2"}).
    """
    eps_tiled = grid.tile_cell(eps.values)
    R = grid.curl_curl(u) - omega**2 * (eps_tiled[None] * u)
    if chi is not None:
        R -= omega**2 * kerr(u, chi, grid)
    norms = {
        "res_L2": grid.l2_norm(R),
        "res_H2": grid.h2_norm(R),
        "u_L2": grid.l2_norm(u),
        "u_H2": grid.h2_norm(u),
    }
    return R, norms


def magnetic_field(u: np.ndarray, omega: float, grid: SupercellGrid) -> np.ndarray:
    """h = -(i/omega) curl' u (nondimensional units)."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    return (-1j / omega) * grid.curl(u)


# ---------------------------------------------------------------------------
# PT symmetry on the supercell
# ---------------------------------------------------------------------------

def _reflect(u: np.ndarray) -> np.ndarray:
    out = u[..., ::-1, ::-1]
    return np.roll(out, (1, 1), axis=(-2, -1))


def pt_defect(u: np.ndarray) -> float:
    nrm = np.linalg.norm(u)
    if nrm == 0.0:
        return 0.0
    return float(np.linalg.norm(_reflect(u) - np.conj(u)) / nrm)


def pt_project(u: np.ndarray) -> np.ndarray:
    return 0.5 * (u + np.conj(_reflect(u)))


# ---------------------------------------------------------------------------
# Newton corrector
# ---------------------------------------------------------------------------

def _precond_inverse(grid: SupercellGrid, omega: float, eps_mean: float) -> np.ndarray:
    """Per-mode inverse of curlcurl + omega^2 eps_mean I (SPD), (N, N, 3, 3)."""
    kt = np.moveaxis(grid._ktilde, 0, -1)              # (N, N, 3)
    kt2 = np.einsum("...d,...d->...", kt, kt)
    eye = np.eye(3)
    Mmat = (kt2[..., None, None] * eye
            - kt[..., :, None] * kt[..., None, :]
            + (omega**2 * eps_mean) * eye)
    return np.linalg.inv(Mmat)


def newton_correct(approx: GapSolitonApprox, omega: float,
                   eps: PeriodicScalarField, chi: SusceptibilityField,
                   rel_tol: float = 1e-9, max_iter: int = 25,
                   max_krylov: int = 6000, verbose: bool = False) -> GapSolitonApprox:
    """Direct Newton solve of the full nonlinear problem near u_ans.

    Solves curl' curl' u = omega^2 (eps u + F(u)) with PT projection per
    iteration; inner linear solves use preconditioned MINRES (the real
    Jacobian is symmetric).  Stops at ||R(u)||_L2 <= rel_tol * ||u||_L2.
    Raises RuntimeError on divergence (three consecutive residual rises) or
    on inner-solve stagnation (omega too close to the spectrum).
    """
    grid = approx.grid
    eps_tiled = grid.tile_cell(eps.values)
    u = pt_project(approx.u.copy())
    shape = u.shape
    pinv = _precond_inverse(grid, omega, float(eps.values.mean()))
    nreal = 2 * u.size

    def to_real(v):
        return np.concatenate([v.real.ravel(), v.imag.ravel()])

    def to_complex(x):
        half = x.size // 2
        return x[:half].reshape(shape) + 1j * x[half:].reshape(shape)

    def res_field(v):
        return (grid.curl_curl(v)
                - omega**2 * (eps_tiled[None] * v + kerr(v, chi, grid)))

    def precvec(x):
        v = to_complex(x)
        vhat = sfft.fft2(v, axes=(-2, -1))
        w = np.einsum("mnde,emn->dmn", pinv, vhat)
        return to_real(sfft.ifft2(w, axes=(-2, -1)))

    history = []
    rises = 0
    iters_used = 0
    trial = u
    for it in range(max_iter):
        R = res_field(u)
        rn = grid.l2_norm(R)
        un = max(grid.l2_norm(u), 1e-300)
        history.append(rn)
        if verbose:
            print(f"  newton iter {it}: |R| = {rn:.3e} (|u| = {un:.3e})")
        if rn <= rel_tol * un:
            break
        if len(history) >= 2 and history[-1] > history[-2]:
            rises += 1
            if rises >= 3:
                raise RuntimeError(f"Newton corrector diverged: residuals {history}")
        u_frozen = u

        def matvec(x):
            v = to_complex(x)
            Jv = (grid.curl_curl(v)
                  - omega**2 * (eps_tiled[None] * v
                                + kerr_derivative(u_frozen, v, chi, grid)))
            return to_real(Jv)

        Jop = LinearOperator((nreal, nreal), matvec=matvec, dtype=float)
        Pop = LinearOperator((nreal, nreal), matvec=precvec, dtype=float)
        inner_tol = max(1e-12, min(1e-4, 0.1 * rn / un))
        sol, status = minres(Jop, to_real(-R), M=Pop, rtol=inner_tol,
                             maxiter=max_krylov)
        if status != 0:
            raise RuntimeError(
                f"linear Maxwell solve stagnated at Newton iteration {it} "
                f"(status {status}); omega may sit too close to the spectrum")
        delta = to_complex(sol)
        step = 1.0
        for _ in range(8):
            trial = pt_project(u + step * delta)
            if grid.l2_norm(res_field(trial)) < rn or step < 1e-3:
                break
            step *= 0.5
        u = trial
        iters_used = it + 1
    else:
        raise RuntimeError(f"Newton corrector did not converge: residuals {history}")

    err = u - approx.u
    diag = dict(approx.diagnostics)
    diag.update({
        "newton_iters": iters_used,
        "residual_history": history,
        "err_L2": grid.l2_norm(err),
        "err_H2": grid.h2_norm(err),
        "pt_defect": pt_defect(u),
    })
    return GapSolitonApprox(grid, approx.u, u_corr=u, diagnostics=diag)


# ---------------------------------------------------------------------------
# discrete Bloch transform on the supercell
# ---------------------------------------------------------------------------

def bloch_transform(u: np.ndarray, lattice: BravaisLattice, S: int):
    """Discrete Bloch transform of a supercell-periodic field.

    `u` has shape (..., Ntot, Ntot), sampled at x = (i/n) a1 + (j/n) a2 with
    n = Ntot/S (corner-origin convention).  Returns (ut, kgrid):

        ut[..., m1, m2, i, j]  --  the periodic field ut(x, k_m) on the
                                   n x n cell grid, for the S x S k-grid;
        kgrid[m1, m2, :]       --  k_m = (c1 b1 + c2 b2)/S, centered branch.

    Normalization: ut(x, k) = (S^2/|B|) sum_K chat(k+K) e^{iK.x}.  Then the
    convolution identity T(fg) = Tf *_B Tg holds exactly with the Riemann
    weight |B|/S^2, Parseval reads sum_k (|B|/S^2) ||ut(., k)||^2_{L2(Q)}
    = ||u||^2_{L2(D)} / |B|, and the inverse is
    u(x) = sum_k (|B|/S^2) ut(x, k) e^{ik.x}.
    """
    Ntot = u.shape[-1]
    if u.shape[-2] != Ntot or Ntot % S:
        raise ValueError("field shape is not commensurate with the supercell")
    n = Ntot // S
    chat = sfft.fft2(u, axes=(-2, -1)) / Ntot**2
    g = (np.fft.fftfreq(Ntot, d=1.0 / Ntot)).astype(int)
    mk = ((g + S // 2) % S) - S // 2        # centered k-branch
    j = (g - mk) // S                        # reciprocal-lattice index
    kidx = mk % S
    jidx = j % n
    ut_spec = np.zeros(u.shape[:-2] + (S, S, n, n), dtype=complex)
    src = np.arange(Ntot)
    ut_spec[..., kidx[:, None], kidx[None, :], jidx[:, None], jidx[None, :]] = \
        chat[..., src[:, None], src[None, :]]
    alpha = S**2 / lattice.bz_area
    ut = sfft.ifft2(ut_spec, axes=(-2, -1)) * (n**2) * alpha
    fr = (np.fft.fftfreq(S, d=1.0 / S) * S).astype(int)
    kgrid = (fr[:, None, None] * lattice.b1[None, None, :]
             + fr[None, :, None] * lattice.b2[None, None, :]) / S
    return ut, kgrid


def inverse_bloch_transform(ut: np.ndarray, lattice: BravaisLattice, S: int) -> np.ndarray:
    """Inverse of `bloch_transform`."""
    n = ut.shape[-1]
    Ntot = S * n
    alpha = S**2 / lattice.bz_area
    spec = sfft.fft2(ut, axes=(-2, -1)) / (n**2 * alpha)
    chat = np.zeros(ut.shape[:-4] + (Ntot, Ntot), dtype=complex)
    g = (np.fft.fftfreq(Ntot, d=1.0 / Ntot)).astype(int)
    mk = ((g + S // 2) % S) - S // 2
    j = (g - mk) // S
    kidx = mk % S
    jidx = j % n
    src = np.arange(Ntot)
    chat[..., src[:, None], src[None, :]] = \
        spec[..., kidx[:, None], kidx[None, :], jidx[:, None], jidx[None, :]]
    return sfft.ifft2(chat * Ntot**2, axes=(-2, -1))


def bloch_convolve(ft: np.ndarray, gt: np.ndarray, lattice: BravaisLattice,
                   S: int) -> np.ndarray:
    """(ft *_B gt)(x, k) = sum_l w ft(x, k - l) gt(x, l), w = |B|/S^2.

    Out-of-branch arguments wrap through the quasiperiodicity
    ut(x, k + K) = e^{-iK.x} ut(x, k): dressing with e^{ik.x} turns the
    wrapped convolution into a plain cyclic one over the k-grid.
    """
    n = ft.shape[-1]
    dress = _k_dressing(lattice, S, n)
    F = ft * dress
    G = gt * dress
    Fk = sfft.fftn(F, axes=(-4, -3))
    Gk = sfft.fftn(G, axes=(-4, -3))
    conv = sfft.ifftn(Fk * Gk, axes=(-4, -3))     # cyclic sum over l
    w = lattice.bz_area / S**2
    return conv * w / dress


def _k_dressing(lattice: BravaisLattice, S: int, n: int) -> np.ndarray:
    """e^{i k_m . x} on the (S, S, n, n) index set of a Bloch-transformed field."""
    fr = (np.fft.fftfreq(S, d=1.0 / S) * S).astype(int)
    kgrid = (fr[:, None, None] * lattice.b1[None, None, :]
             + fr[None, :, None] * lattice.b2[None, None, :]) / S
    f = np.arange(n) / n
    x = (f[:, None, None] * lattice.a1[None, None, :]
         + f[None, :, None] * lattice.a2[None, None, :])
    phase = np.einsum("abd,ijd->abij", kgrid, x)
    return np.exp(1j * phase)
