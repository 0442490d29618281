"""Coupled mode equations at a gap edge.

The envelopes A_1..A_N on the slow plane satisfy, for j = 1..N,

    G_j(A) = Omega*A_j
             + (1/2) * (H_j,11 d^2_y1 + H_j,22 d^2_y2 + 2 H_j,12 d_y1 d_y2) A_j
             + sum_{(a,b,g) in sigma_j} I^j_{a,b,g} A_a A_b conj(A_g)  = 0,

with H_j the band Hessians at the level-set points k^(j), sigma_j the
resonance sets (k^(a) + k^(b) - k^(g) - k^(j) in Lambda*), and I^j the
cubic couplings computed from the Bloch waves.  Envelopes live on a
periodic square [-L, L)^2 with spectral derivatives; PT symmetry
(A = conj(A(-.))) is enforced by projection and removes the phase and
shift invariances so Newton's method has an invertible linearization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .lattice import BravaisLattice
from .medium import PeriodicScalarField, SusceptibilityField
from .bands import BandEdge
from . import bloch

__all__ = [
    "CmeSystem",
    "EnvelopeState",
    "resonance_sets",
    "coupling_coefficients",
    "build_cme_system",
    "cme_residual",
    "cme_jacobian_apply",
    "cme_jacobian_dense",
    "solve_newton",
    "gaussian_initial",
    "nondegeneracy_check",
    "save_cme_json",
    "load_cme_json",
    "save_envelope",
    "load_envelope",
]


# ---------------------------------------------------------------------------
# system assembly
# ---------------------------------------------------------------------------

def resonance_sets(edge: BandEdge, lattice: BravaisLattice,
                   tol: float = 1e-10) -> list:
    """sigma_j = {(a, b, g): k^(a) + k^(b) - k^(g) - k^(j) in Lambda*}.

    Indices are 0-based; (j, j, j) always belongs to sigma_j.
    """
    ks = edge.kpoints
    N = len(ks)
    sigmas = []
    for j in range(N):
        sj = []
        for a in range(N):
            for b in range(N):
                for g in range(N):
                    v = ks[a] + ks[b] - ks[g] - ks[j]
                    if lattice.is_reciprocal_vector(v, tol=tol):
                        sj.append((a, b, g))
        sigmas.append(sj)
    return sigmas


def coupling_coefficients(edge: BandEdge, medium: PeriodicScalarField,
                          chi: SusceptibilityField, pairs: list,
                          sigmas: list | None = None) -> list:
    """Cubic couplings I^j_{a,b,g} over the resonance sets.

    `pairs` holds the phase-fixed Bloch eigenpairs at the level-set points,
    in the same order as edge.kpoints.  The Bloch phases of the lattice
    mismatch K0 = k^(a)+k^(b)-k^(g)-k^(j) enter through the full waves
    u = p exp(i k.x), reduced here to the periodic factor exp(i K0.x).

    Returns a list of dicts {(a, b, g): I} per j.
    """
    lattice = medium.lattice
    ks = edge.kpoints
    N = len(ks)
    if sigmas is None:
        sigmas = resonance_sets(edge, lattice)
    for pr in pairs:
        if not pr.phase_fixed:
            raise ValueError("coupling coefficients need PT-phase-fixed Bloch pairs")
    shape = pairs[0].p_values.shape[-2:]
    grid_x = PeriodicScalarField(lattice, np.zeros(shape)).grid_points()
    omega_star = edge.omega_star
    B = np.column_stack([lattice.b1, lattice.b2])
    out = []
    for j in range(N):
        coeffs = {}
        for (a, b, g) in sigmas[j]:
            v = ks[a] + ks[b] - ks[g] - ks[j]
            m = np.rint(np.linalg.solve(B, v))
            K0 = B @ m  # exact reciprocal vector for the phase factor
            phase = np.exp(1j * (grid_x @ K0))
            pa, pb = pairs[a].p_values, pairs[b].p_values
            pg, pj = pairs[g].p_values, pairs[j].p_values
            integ = _chi_quartic(chi, pa, pb, pg, pj) * phase
            val = (omega_star / 2.0) * integ.mean() * lattice.cell_area
            coeffs[(a, b, g)] = complex(val)
        out.append(coeffs)
    return out


def _chi_quartic(chi: SusceptibilityField, ua, ub, ug, uj) -> np.ndarray:
    """sum_{abcd} sym_{a,b,c,d} ua_a ub_b conj(ug_c) conj(uj_d), pointwise."""
    cg, cj = np.conj(ug), np.conj(uj)
    if chi.is_isotropic:
        chi0 = chi.chi0.values
        dot = lambda f, g: np.einsum("a...,a...->...", f, g)
        return chi0 * (dot(ua, ub) * dot(cg, cj)
                       + dot(ua, cg) * dot(ub, cj)
                       + dot(ua, cj) * dot(ub, cg))
    sym = chi.symmetrized()
    sub = "abcd" if sym.ndim == 4 else "abcd..."
    return np.einsum(f"{sub},a...,b...,c...,d...->...", sym, ua, ub, cg, cj)


@dataclass
class CmeSystem:
    """Gap-edge data feeding the coupled mode equations."""

    omega_star: float
    Omega: int
    hessians: np.ndarray          # (N, 2, 2)
    sigmas: list                  # list of [(a, b, g), ...], 0-based
    couplings: list               # list of {(a, b, g): complex}
    kpoints: np.ndarray | None = None

    def __post_init__(self):
        self.hessians = np.asarray(self.hessians, dtype=float)
        if self.Omega not in (-1, +1):
            raise ValueError("Omega must be +1 or -1")

    @property
    def N(self) -> int:
        return len(self.hessians)

    def max_imag_coupling(self) -> float:
        vals = [abs(complex(I).imag) for cj in self.couplings for I in cj.values()]
        return max(vals) if vals else 0.0

    @classmethod
    def normalized(cls, hessian=((1.0, 0.0), (0.0, 1.0)), Omega=-1, coupling=1.0):
        """Single-component system with prescribed H, Omega and I_111."""
        return cls(omega_star=1.0, Omega=Omega,
                   hessians=np.array([hessian], dtype=float),
                   sigmas=[[(0, 0, 0)]],
                   couplings=[{(0, 0, 0): complex(coupling)}])


def build_cme_system(edge: BandEdge, medium: PeriodicScalarField,
                     chi: SusceptibilityField, pairs: list) -> CmeSystem:
    sigmas = resonance_sets(edge, medium.lattice)
    coups = coupling_coefficients(edge, medium, chi, pairs, sigmas)
    return CmeSystem(edge.omega_star, edge.Omega, edge.hessians,
                     sigmas, coups, kpoints=edge.kpoints)


# ---------------------------------------------------------------------------
# envelope state
# ---------------------------------------------------------------------------

@dataclass
class EnvelopeState:
    """Envelopes A_j on the periodic square [-L, L)^2, M x M samples."""

    fields: np.ndarray          # (N, M, M) complex
    L: float

    def __post_init__(self):
        self.fields = np.ascontiguousarray(self.fields, dtype=complex)
        if self.fields.ndim != 3 or self.fields.shape[1] != self.fields.shape[2]:
            raise ValueError("fields must have shape (N, M, M)")

    @property
    def N(self) -> int:
        return self.fields.shape[0]

    @property
    def M(self) -> int:
        return self.fields.shape[1]

    @property
    def dy(self) -> float:
        return 2.0 * self.L / self.M

    def coords(self) -> np.ndarray:
        y = -self.L + self.dy * np.arange(self.M)
        return y

    def freqs(self) -> np.ndarray:
        return np.fft.fftfreq(self.M, d=self.dy) * 2.0 * np.pi

    def norm(self) -> float:
        return float(np.linalg.norm(self.fields) * self.dy)

    def pt_defect(self) -> float:
        nrm = np.linalg.norm(self.fields)
        if nrm == 0.0:
            return 0.0
        refl = np.roll(self.fields[:, ::-1, ::-1], (1, 1), axis=(1, 2))
        return float(np.linalg.norm(self.fields - np.conj(refl)) / nrm)

    def pt_project(self) -> "EnvelopeState":
        refl = np.roll(self.fields[:, ::-1, ::-1], (1, 1), axis=(1, 2))
        return EnvelopeState(0.5 * (self.fields + np.conj(refl)), self.L)

    def boundary_decay(self) -> float:
        """max |A| on the outermost grid ring over max |A|."""
        mags = np.abs(self.fields)
        peak = mags.max()
        if peak == 0.0:
            return 0.0
        ring = max(mags[:, 0, :].max(), mags[:, -1, :].max(),
                   mags[:, :, 0].max(), mags[:, :, -1].max())
        return float(ring / peak)

    def interpolate(self, y: np.ndarray) -> np.ndarray:
        """Spectral evaluation of every A_j at points y of shape (..., 2)."""
        M = self.M
        Ahat = np.fft.fft2(self.fields, axes=(-2, -1)) / M**2
        xi = self.freqs()
        ph1 = np.exp(1j * np.multiply.outer(y[..., 0] + self.L, xi))
        ph2 = np.exp(1j * np.multiply.outer(y[..., 1] + self.L, xi))
        # A(y) = sum_{m,n} Ahat[m,n] e^{i xi_m (y1+L)} e^{i xi_n (y2+L)}
        return np.einsum("...m,...n,jmn->j...", ph1, ph2, Ahat)


def _freqs(M: int, dy: float):
    """(full, odd) angular frequency arrays; `odd` zeroes the Nyquist mode.

    First derivatives use the odd convention so the mixed-derivative symbol
    stays even on the discrete torus (real circulant, symmetric operator).
    """
    xi = np.fft.fftfreq(M, d=dy) * 2.0 * np.pi
    xi_odd = xi.copy()
    if M % 2 == 0:
        xi_odd[M // 2] = 0.0
    return xi, xi_odd


def _linear_symbol(sys: CmeSystem, j: int, M: int, dy: float) -> np.ndarray:
    """Fourier symbol of Omega + (1/2)(H11 d11 + H22 d22 + 2 H12 d12)."""
    H = sys.hessians[j]
    xi, xi_odd = _freqs(M, dy)
    return (sys.Omega
            - 0.5 * (H[0, 0] * xi[:, None] ** 2 + H[1, 1] * xi[None, :] ** 2
                     + 2.0 * H[0, 1] * xi_odd[:, None] * xi_odd[None, :]))


def cme_residual(sys: CmeSystem, A: EnvelopeState) -> np.ndarray:
    """G(A) per component, shape (N, M, M)."""
    if A.N != sys.N:
        raise ValueError("component count mismatch")
    Ahat = np.fft.fft2(A.fields, axes=(-2, -1))
    G = np.empty_like(A.fields)
    for j in range(sys.N):
        G[j] = np.fft.ifft2(_linear_symbol(sys, j, A.M, A.dy) * Ahat[j])
        for (a, b, g), I in sys.couplings[j].items():
            G[j] += I * A.fields[a] * A.fields[b] * np.conj(A.fields[g])
    return G


def cme_jacobian_apply(sys: CmeSystem, A: EnvelopeState, V: np.ndarray) -> np.ndarray:
    """Directional derivative dG(A)[V]; real-linear in V, shape (N, M, M)."""
    Vhat = np.fft.fft2(V, axes=(-2, -1))
    out = np.empty_like(V)
    for j in range(sys.N):
        out[j] = np.fft.ifft2(_linear_symbol(sys, j, A.M, A.dy) * Vhat[j])
        for (a, b, g), I in sys.couplings[j].items():
            out[j] += I * (V[a] * A.fields[b] * np.conj(A.fields[g])
                           + A.fields[a] * V[b] * np.conj(A.fields[g])
                           + A.fields[a] * A.fields[b] * np.conj(V[g]))
    return out


# ---------------------------------------------------------------------------
# Newton solver in the PT subspace
# ---------------------------------------------------------------------------

def _to_real(V: np.ndarray) -> np.ndarray:
    return np.concatenate([V.real.ravel(), V.imag.ravel()])


def _to_complex(x: np.ndarray, shape) -> np.ndarray:
    half = x.size // 2
    return x[:half].reshape(shape) + 1j * x[half:].reshape(shape)


def _pt_project_fields(F: np.ndarray) -> np.ndarray:
    refl = np.roll(F[:, ::-1, ::-1], (1, 1), axis=(1, 2))
    return 0.5 * (F + np.conj(refl))


def gaussian_initial(sys: CmeSystem, L: float = 20.0, M: int = 128,
                     amp_scale: float = 1.0) -> EnvelopeState:
    """Anisotropic Gaussians aligned to each Hessian's eigenvectors.

    The amplitude comes from the constant-envelope balance
    |A|^2 = |Omega| / |sum_j I|, scaled by `amp_scale`.
    """
    y = -L + (2.0 * L / M) * np.arange(M)
    Y1, Y2 = np.meshgrid(y, y, indexing="ij")
    fields = np.empty((sys.N, M, M), dtype=complex)
    for j in range(sys.N):
        evals, evecs = np.linalg.eigh(sys.hessians[j])
        Itot = sum(abs(v) for v in sys.couplings[j].values())
        amp = amp_scale * np.sqrt(abs(sys.Omega) / max(Itot, 1e-300))
        u = evecs[0, 0] * Y1 + evecs[1, 0] * Y2
        v = evecs[0, 1] * Y1 + evecs[1, 1] * Y2
        # width ~ sqrt(|H eigenvalue| / |Omega|) per principal axis
        w1 = np.sqrt(abs(evals[0]) / abs(sys.Omega))
        w2 = np.sqrt(abs(evals[1]) / abs(sys.Omega))
        fields[j] = amp * np.exp(-(u / w1) ** 2 / 2.0 - (v / w2) ** 2 / 2.0)
    return EnvelopeState(fields, L).pt_project()


@dataclass
class NewtonInfo:
    converged: bool
    iterations: int
    residuals: list
    trivial: bool
    pt_defect: float
    message: str = ""


def solve_newton(sys: CmeSystem, A0: EnvelopeState, tol_factor: float = 1e-10,
                 max_iter: int = 40, krylov_tol: float = 1e-12,
                 trivial_norm: float = 1e-8):
    """Newton iteration for G(A) = 0 restricted to the PT subspace.

    Linear solves use MINRES (the real-variable Jacobian is symmetric)
    preconditioned by the inverse modulus of the second-order symbol.
    Returns (EnvelopeState, NewtonInfo); stops when

        ||G(A)|| <= tol_factor * max(1, ||A||^3)

    in the discrete L2 norm.  Raises RuntimeError on divergence or on PT
    drift beyond 1e-8.
    """
    if A0.pt_defect() > 1e-8:
        raise ValueError("initial guess is not PT-symmetric")
    A = A0.pt_project()
    sysN, M, L = sys.N, A.M, A.L
    shape = (sysN, M, M)
    dy = A.dy

    precon = np.empty((sysN, M, M))
    for j in range(sysN):
        second_order = _linear_symbol(sys, j, M, A.dy) - sys.Omega
        precon[j] = 1.0 / (1.0 + np.abs(second_order))

    def res_norm(G):
        return float(np.linalg.norm(G) * dy)

    def matvec(x):
        V = _to_complex(x, shape)
        return _to_real(cme_jacobian_apply(sys, A, V))

    def precvec(x):
        V = _to_complex(x, shape)
        W = np.fft.ifft2(precon * np.fft.fft2(V, axes=(-2, -1)), axes=(-2, -1))
        return _to_real(W)

    nreal = 2 * sysN * M * M
    residuals = []
    rises = 0
    for it in range(max_iter):
        G = cme_residual(sys, A)
        rn = res_norm(G)
        residuals.append(rn)
        anorm = float(np.linalg.norm(A.fields) * dy)
        if rn <= tol_factor * max(1.0, anorm**3):
            info = NewtonInfo(True, it, residuals, anorm < trivial_norm,
                              A.pt_defect())
            return A, info
        if len(residuals) >= 2 and residuals[-1] > residuals[-2]:
            rises += 1
            if rises >= 3:
                raise RuntimeError(
                    f"Newton diverged; residual history {residuals}")
        Jop = LinearOperator((nreal, nreal), matvec=matvec, dtype=float)
        Pop = LinearOperator((nreal, nreal), matvec=precvec, dtype=float)
        rhs = _to_real(-G)
        sol, status = minres(Jop, rhs, M=Pop, rtol=krylov_tol, maxiter=400)
        if status != 0:
            # fall back to an unpreconditioned longer run before giving up
            sol, status = minres(Jop, rhs, rtol=krylov_tol, maxiter=2000)
            if status != 0:
                raise RuntimeError(f"linear solve stagnated at iteration {it}")
        delta = _to_complex(sol, shape)
        # damped step: backtrack on the residual norm
        step = 1.0
        for _ in range(8):
            trial = EnvelopeState(_pt_project_fields(A.fields + step * delta), L)
            if res_norm(cme_residual(sys, trial)) < rn or step < 1e-3:
                break
            step *= 0.5
        A = trial
        if A.pt_defect() > 1e-8:
            raise RuntimeError("iterate drifted out of the PT subspace")
    raise RuntimeError(f"no convergence in {max_iter} iterations; residuals {residuals}")


# ---------------------------------------------------------------------------
# dense Jacobian and non-degeneracy diagnostics
# ---------------------------------------------------------------------------

def _spectral_dense_block(sys: CmeSystem, j: int, M: int, L: float) -> np.ndarray:
    """Dense M^2 x M^2 real matrix of Omega + second-order part for mode j."""
    dy = 2.0 * L / M
    sym = _linear_symbol(sys, j, M, dy)
    col_c = np.fft.ifft2(sym)    # first column of the circulant operator
    assert np.abs(col_c.imag).max() < 1e-12 * max(np.abs(col_c.real).max(), 1.0)
    col = col_c.real
    idx = np.arange(M)
    di = (idx[:, None] - idx[None, :]) % M
    # C[(p1,p2),(q1,q2)] = col[p1-q1 mod M, p2-q2 mod M]
    C = col[di[:, None, :, None], di[None, :, None, :]]
    return C.reshape(M * M, M * M)


def cme_jacobian_dense(sys: CmeSystem, A: EnvelopeState) -> np.ndarray:
    """Real 2N M^2 x 2N M^2 Jacobian in (Re A_1, Im A_1, ..., Im A_N) blocks."""
    N, M, L = sys.N, A.M, A.L
    n2 = M * M
    J = np.zeros((2 * N * n2, 2 * N * n2))
    for j in range(N):
        C = _spectral_dense_block(sys, j, M, L)
        rj, ij = 2 * j * n2, (2 * j + 1) * n2
        J[rj:rj + n2, rj:rj + n2] += C
        J[ij:ij + n2, ij:ij + n2] += C
    # pointwise cubic-derivative blocks
    F = A.fields
    for j in range(N):
        for (a, b, g), I in sys.couplings[j].items():
            # derivative wrt A_m splits into the three slots
            for m, term in ((a, F[b] * np.conj(F[g])),
                            (b, F[a] * np.conj(F[g]))):
                dR = (I * term).ravel()          # dN_j = I * term * v_m
                _scatter(J, j, m, n2, dR.real, -dR.imag, dR.imag, dR.real)
            termg = F[a] * F[b]
            dG = (I * termg).ravel()             # dN_j = I * termg * conj(v_g)
            _scatter(J, j, g, n2, dG.real, dG.imag, dG.imag, -dG.real)
    return J


def _scatter(J, j, m, n2, rr, ri, ir, ii):
    """Add diagonal blocks d(Re G_j, Im G_j)/d(Re A_m, Im A_m)."""
    rj, ij = 2 * j * n2, (2 * j + 1) * n2
    rm, im = 2 * m * n2, (2 * m + 1) * n2
    idx = np.arange(n2)
    J[rj + idx, rm + idx] += rr
    J[rj + idx, im + idx] += ri
    J[ij + idx, rm + idx] += ir
    J[ij + idx, im + idx] += ii


def _real_blocks(V: np.ndarray) -> np.ndarray:
    """(N, M, M) complex -> interleaved real vector matching the dense Jacobian."""
    N = V.shape[0]
    return np.concatenate([np.concatenate([V[j].real.ravel(), V[j].imag.ravel()])
                           for j in range(N)])


def _pt_involution(V: np.ndarray) -> np.ndarray:
    refl = np.roll(V[:, ::-1, ::-1], (1, 1), axis=(1, 2))
    return np.conj(refl)


def nondegeneracy_check(sys: CmeSystem, A: EnvelopeState,
                        null_tol_factor: float = 1e-6) -> dict:
    """Kernel diagnostics of the real-variable CME Jacobian at A.

    Expects (for a nontrivial non-degenerate solution) exactly three
    near-null singular values whose vectors span {d_y1 A, d_y2 A, iA}, and
    a PT-restricted Jacobian bounded away from zero.  Works through the
    symmetric eigendecomposition (the Jacobian is symmetric, so singular
    values are |eigenvalues| and eigenvectors classify by PT parity).
    """
    J = cme_jacobian_dense(sys, A)
    asym = np.abs(J - J.T).max() / max(np.abs(J).max(), 1e-300)
    if asym > 1e-10:
        raise AssertionError(f"dense Jacobian unexpectedly asymmetric ({asym:.2e})")
    evals, evecs = np.linalg.eigh(0.5 * (J + J.T))
    svals = np.abs(evals)
    order = np.argsort(svals)
    svals_sorted = svals[order]
    null_tol = null_tol_factor * float(np.median(svals_sorted))
    n_null = int(np.sum(svals_sorted < null_tol))

    trivial = bool(np.linalg.norm(A.fields) * A.dy < 1e-8)
    report = {
        "smallest_singular_values": svals_sorted[:6].tolist(),
        "null_tol": null_tol,
        "null_count": n_null,
        "trivial": trivial,
        "applicable": not trivial,
    }
    if trivial:
        return report

    near = svals_sorted[3] if len(svals_sorted) > 3 else np.inf
    report["near_degenerate"] = bool(near < 10 * null_tol)
    report["nondegenerate"] = (n_null == 3) and not report["near_degenerate"]

    # invariance modes: d_y1 A, d_y2 A, iA (spectral derivatives)
    xi = A.freqs()
    Ahat = np.fft.fft2(A.fields, axes=(-2, -1))
    d1 = np.fft.ifft2(1j * xi[:, None] * Ahat, axes=(-2, -1))
    d2 = np.fft.ifft2(1j * xi[None, :] * Ahat, axes=(-2, -1))
    modes = np.column_stack([_real_blocks(d1), _real_blocks(d2),
                             _real_blocks(1j * A.fields)])
    Qm, _ = np.linalg.qr(modes)
    kernel = evecs[:, order[:3]]
    # principal angles between the numeric kernel and the invariance span
    s = np.linalg.svd(Qm.T @ kernel, compute_uv=False)
    report["subspace_angle"] = float(np.arccos(np.clip(s.min(), -1.0, 1.0)))

    # PT parity of eigenvectors: smallest singular value in the even sector
    pt_min = np.inf
    for idx in order:
        v = evecs[:, idx]
        Vc = _blocks_to_complex(v, sys.N, A.M)
        tv = _real_blocks(_pt_involution(Vc))
        even = np.linalg.norm(tv - v)
        odd = np.linalg.norm(tv + v)
        if even < odd:
            pt_min = svals[idx]
            break
    report["pt_restricted_min_sv"] = float(pt_min)
    report["pt_invertible"] = bool(pt_min > null_tol)
    return report


def _blocks_to_complex(x: np.ndarray, N: int, M: int) -> np.ndarray:
    n2 = M * M
    out = np.empty((N, M, M), dtype=complex)
    for j in range(N):
        re = x[2 * j * n2:(2 * j + 1) * n2].reshape(M, M)
        im = x[(2 * j + 1) * n2:(2 * j + 2) * n2].reshape(M, M)
        out[j] = re + 1j * im
    return out


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_cme_json(sys: CmeSystem, path) -> None:
    doc = {
        "omega_star": repr(sys.omega_star),
        "Omega": sys.Omega,
        "hessians": [[[repr(float(x)) for x in row] for row in H] for H in sys.hessians],
        "sigmas": [[list(t) for t in sj] for sj in sys.sigmas],
        "couplings": [
            {",".join(map(str, key)): [repr(v.real), repr(v.imag)]
             for key, v in cj.items()}
            for cj in sys.couplings
        ],
        "kpoints": sys.kpoints.tolist() if sys.kpoints is not None else None,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_cme_json(path) -> CmeSystem:
    doc = json.loads(Path(path).read_text())
    couplings = []
    for cj in doc["couplings"]:
        out = {}
        for key, (re, im) in cj.items():
            a, b, g = map(int, key.split(","))
            out[(a, b, g)] = complex(float(re), float(im))
        couplings.append(out)
    kpts = np.array(doc["kpoints"]) if doc["kpoints"] is not None else None
    return CmeSystem(float(doc["omega_star"]), doc["Omega"],
                     np.array([[[float(x) for x in row] for row in H]
                               for H in doc["hessians"]]),
                     [[tuple(t) for t in sj] for sj in doc["sigmas"]],
                     couplings, kpoints=kpts)


def save_envelope(A: EnvelopeState, path) -> None:
    path = Path(path)
    A.fields.astype("<c16").tofile(path)
    sidecar = {"N": A.N, "L": A.L, "M": A.M, "PT": True, "dtype": "<c16"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1))


def load_envelope(path) -> EnvelopeState:
    path = Path(path)
    sc = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    fields = np.fromfile(path, dtype=sc["dtype"]).reshape(sc["N"], sc["M"], sc["M"])
    return EnvelopeState(fields, sc["L"])
