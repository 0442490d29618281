"""Plane-wave Bloch eigenproblems at fixed wave vector k.

The magnetic-field operator curl'_k (1/eps) curl'_k is discretized in a
basis of transverse plane waves: for each reciprocal vector K (integer box
|m1|,|m2| <= cutoff) the shifted wave vector is

    ktilde(K) = (k1 + K1, k2 + K2, kappa),

a real 3-vector (kappa != 0), and e1(K), e2(K) is a real orthonormal pair
spanning its orthogonal complement.  Fields q = sum c_{K,m} e_m(K) e^{iK.x}
then satisfy the divergence constraint div'_k q = 0 exactly per mode, and
the L2(Q)-normalized basis makes the mass matrix the identity.

The electric-field eigenfunction is recovered as

    p = i / (eps * omega) * curl'_k q,

which is automatically eps-normalized: int_Q eps |p|^2 = a_k(q, q)/omega^2 = 1.

Discrete residual identities hold exactly in the resolved-mode sense, i.e.
after projecting onto the |m_i| <= cutoff Fourier box of the sample grid;
all residual helpers below use that projection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .lattice import BravaisLattice
from .medium import PeriodicScalarField

__all__ = [
    "TransverseBasis",
    "BlochEigenpair",
    "ProjectionSet",
    "transverse_basis",
    "assemble_h_operator",
    "solve_eigenpairs",
    "solve_bloch",
    "recover_e_field",
    "fix_phase",
    "helmholtz_decompose",
    "grid_curl_k",
    "box_project",
    "cell_inner",
    "save_eigenpairs",
    "load_eigenpairs",
]

DENSE_LIMIT = 2000
OMEGA_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# transverse basis
# ---------------------------------------------------------------------------

@dataclass
class TransverseBasis:
    lattice: BravaisLattice
    k: np.ndarray            # (2,)
    kappa: float
    cutoff: int
    kvecs: np.ndarray        # (nK, 2) reciprocal vectors
    mindices: np.ndarray     # (nK, 2) integer indices
    ktilde: np.ndarray       # (nK, 3)
    pol: np.ndarray          # (nK, 2, 3) real orthonormal pairs

    @property
    def n_waves(self) -> int:
        return len(self.kvecs)

    @property
    def dim(self) -> int:
        return 2 * self.n_waves

    def field_coefficients(self, coeffs: np.ndarray) -> np.ndarray:
        """Map basis coefficients (dim,) to per-wave 3-vectors (nK, 3)."""
        c = coeffs.reshape(self.n_waves, 2)
        return np.einsum("nm,nmd->nd", c, self.pol.astype(complex))


def _polarization_pair(ktilde: np.ndarray) -> np.ndarray:
    """Real orthonormal e1, e2 perpendicular to the real 3-vector ktilde."""
    n = ktilde / np.linalg.norm(ktilde)
    # pick the coordinate axis least aligned with n for a stable cross product
    axis = np.zeros(3)
    axis[np.argmin(np.abs(n))] = 1.0
    e1 = np.cross(n, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return np.stack([e1, e2])


def transverse_basis(lattice: BravaisLattice, k, kappa: float, cutoff: int | None,
                     grid_shape=None) -> TransverseBasis:
    """Transverse plane-wave basis at (k, kappa).

    With an integer `cutoff` the reciprocal vectors form the |m_i| <= cutoff
    box.  With ``cutoff=None`` the basis spans every FFT mode of
    `grid_shape` ("full-grid" mode): the discrete cell operator then equals
    the pseudospectral operator on that grid, with no truncation tail.
    """
    if kappa == 0:
        raise ValueError("kappa must be nonzero (transverse basis undefined)")
    k = np.asarray(k, dtype=float).reshape(2)
    if cutoff is None:
        if grid_shape is None:
            raise ValueError("full-grid basis needs grid_shape")
        n1, n2 = grid_shape
        m1 = (np.fft.fftfreq(n1, d=1.0 / n1)).astype(int)
        m2 = (np.fft.fftfreq(n2, d=1.0 / n2)).astype(int)
        g1, g2 = np.meshgrid(m1, m2, indexing="ij")
        mind = np.stack([g1.ravel(), g2.ravel()], axis=-1)
        kvecs = mind @ np.vstack([lattice.b1, lattice.b2])
    else:
        kvecs, mind = lattice.reciprocal_vectors(cutoff)
    ktilde = np.column_stack([kvecs + k[None, :], np.full(len(kvecs), float(kappa))])
    pol = np.array([_polarization_pair(kt) for kt in ktilde])
    return TransverseBasis(lattice, k, float(kappa), cutoff, kvecs, mind, ktilde, pol)


# ---------------------------------------------------------------------------
# operator assembly and eigensolve
# ---------------------------------------------------------------------------

def _coeff_lookup(fft_coeffs: np.ndarray, dm: np.ndarray) -> np.ndarray:
    """fft_coeffs[(dm1, dm2) mod grid] for an (..., 2) integer index array."""
    n1, n2 = fft_coeffs.shape
    return fft_coeffs[dm[..., 0] % n1, dm[..., 1] % n2]


def assemble_h_operator(medium: PeriodicScalarField, k, kappa: float, cutoff: int | None):
    """Hermitian matrix of curl'_k (1/eps) curl'_k in the transverse basis.

    Entry ((K,m),(K',m')) = (ktilde(K) x e_m(K)) . (ktilde(K') x e_m'(K'))
    * ihat(K - K') with ihat the Fourier coefficients of 1/eps taken from
    the sample grid of `medium`.  ``cutoff=None`` uses every grid mode.

    Returns (matrix, basis).
    """
    basis = transverse_basis(medium.lattice, k, kappa, cutoff, grid_shape=medium.shape)
    n1, n2 = medium.shape
    if cutoff is not None and (n1 < 2 * cutoff + 1 or n2 < 2 * cutoff + 1):
        raise ValueError("medium grid under-resolves the requested cutoff")
    eta = np.fft.fft2(1.0 / medium.values) / (n1 * n2)
    # cross products c_m(K) = ktilde(K) x e_m(K), flattened over (K, m)
    cross = np.cross(basis.ktilde[:, None, :], basis.pol)  # (nK, 2, 3)
    cflat = cross.reshape(basis.dim, 3)
    dm = basis.mindices[:, None, :] - basis.mindices[None, :, :]  # (nK, nK, 2)
    eta_mat = _coeff_lookup(eta, dm)
    eta_big = np.repeat(np.repeat(eta_mat, 2, axis=0), 2, axis=1)
    M = (cflat @ cflat.T).astype(complex) * eta_big
    herm_defect = np.abs(M - M.conj().T).max()
    if herm_defect > 1e-12 * max(np.abs(M).max(), 1.0):
        raise AssertionError(f"assembled operator not Hermitian ({herm_defect:.2e})")
    return M, basis


def solve_eigenpairs(matrix: np.ndarray, count: int):
    """Lowest `count` eigenpairs of a Hermitian matrix, ascending.

    Dense below DENSE_LIMIT, shift-invert Lanczos above.  Eigenvalues are
    clipped-checked against the nonnegativity of the operator.
    """
    n = matrix.shape[0]
    count = min(count, n)
    if n <= DENSE_LIMIT:
        vals, vecs = scipy.linalg.eigh(matrix)
        vals, vecs = vals[:count], vecs[:, :count]
    else:
        from scipy.sparse.linalg import eigsh
        try:
            vals, vecs = eigsh(matrix, k=count, sigma=0.0, which="LM")
        except Exception as exc:  # pragma: no cover - diagnostic path
            raise RuntimeError(f"iterative eigensolver failed: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    if vals.min() < -1e-10 * max(1.0, abs(vals).max()):
        raise AssertionError(f"negative eigenvalue {vals.min():.3e} in a nonnegative operator")
    return vals, vecs


# ---------------------------------------------------------------------------
# grid-side spectral operators
# ---------------------------------------------------------------------------

def _grid_ktilde(lattice: BravaisLattice, shape, k, kappa: float) -> np.ndarray:
    """(N1, N2, 3) shifted wave vectors for every FFT mode of the grid."""
    n1, n2 = shape
    m1 = np.fft.fftfreq(n1, d=1.0 / n1)
    m2 = np.fft.fftfreq(n2, d=1.0 / n2)
    kv = (m1[:, None, None] * lattice.b1[None, None, :]
          + m2[None, :, None] * lattice.b2[None, None, :])
    kt = np.empty((n1, n2, 3))
    kt[..., :2] = kv + np.asarray(k, float)[None, None, :]
    kt[..., 2] = kappa
    return kt


def grid_curl_k(field: np.ndarray, lattice: BravaisLattice, k, kappa: float) -> np.ndarray:
    """curl'_k of a (3, N1, N2) grid field, pseudospectral."""
    fhat = np.fft.fft2(field, axes=(-2, -1))
    kt = _grid_ktilde(lattice, field.shape[-2:], k, kappa)
    out = 1j * np.cross(np.moveaxis(kt, -1, 0), fhat, axisa=0, axisb=0, axisc=0)
    return np.fft.ifft2(out, axes=(-2, -1))


def box_project(field: np.ndarray, cutoff: int | None) -> np.ndarray:
    """Zero out Fourier modes outside the |m_i| <= cutoff box (no-op if None)."""
    if cutoff is None:
        return field
    fhat = np.fft.fft2(field, axes=(-2, -1))
    n1, n2 = field.shape[-2:]
    m1 = np.abs(np.fft.fftfreq(n1, d=1.0 / n1))
    m2 = np.abs(np.fft.fftfreq(n2, d=1.0 / n2))
    mask = (m1[:, None] <= cutoff) & (m2[None, :] <= cutoff)
    return np.fft.ifft2(fhat * mask, axes=(-2, -1))


def cell_inner(f: np.ndarray, g: np.ndarray, lattice: BravaisLattice,
               weight: np.ndarray | None = None) -> complex:
    """<f, g> = int_Q w f . conj(g) dx by the midpoint rule."""
    prod = f * np.conj(g)
    if prod.ndim == 3:
        prod = prod.sum(axis=0)
    if weight is not None:
        prod = prod * weight
    return complex(prod.mean() * lattice.cell_area)


# ---------------------------------------------------------------------------
# eigenpairs with E-field recovery
# ---------------------------------------------------------------------------

@dataclass
class BlochEigenpair:
    """One Bloch band at fixed k: H-field coefficients and E-field samples."""

    basis: TransverseBasis
    band: int                 # 1-based
    omega: float
    q_coeffs: np.ndarray      # (dim,) coefficients in the transverse basis
    p_values: np.ndarray      # (3, N1, N2) E-field eigenfunction samples
    simple_margin: float      # distance of omega^2 to its neighbors
    phase_fixed: bool = False
    pt_defect: float = np.nan
    degenerate: bool = False

    @property
    def k(self) -> np.ndarray:
        return self.basis.k

    @property
    def kappa(self) -> float:
        return self.basis.kappa

    def q_values(self, shape) -> np.ndarray:
        """H-field eigenfunction samples on an N1 x N2 grid, L2(Q)-normalized."""
        amp = self.basis.field_coefficients(self.q_coeffs)
        return _waves_to_grid(self.basis, amp, shape) / np.sqrt(self.basis.lattice.cell_area)

    def p_at(self, x: np.ndarray) -> np.ndarray:
        """Spectral evaluation of p at arbitrary points x (shape (..., 2))."""
        phat = np.fft.fft2(self.p_values, axes=(-2, -1))
        n1, n2 = self.p_values.shape[-2:]
        m1 = np.fft.fftfreq(n1, d=1.0 / n1)
        m2 = np.fft.fftfreq(n2, d=1.0 / n2)
        kv = (m1[:, None, None] * self.basis.lattice.b1[None, None, :]
              + m2[None, :, None] * self.basis.lattice.b2[None, None, :])
        phase = np.exp(1j * np.tensordot(x, np.moveaxis(kv, -1, 0), axes=([-1], [0])))
        return np.tensordot(phase, phat, axes=([-2, -1], [-2, -1])) / (n1 * n2)


def _waves_to_grid(basis: TransverseBasis, amplitudes: np.ndarray, shape) -> np.ndarray:
    """Samples of sum_K amp(K) e^{iK.x} on the cell grid, (3, N1, N2)."""
    n1, n2 = shape
    spec = np.zeros((3, n1, n2), dtype=complex)
    for (m1, m2), amp in zip(basis.mindices, amplitudes):
        spec[:, m1 % n1, m2 % n2] += amp
    return np.fft.ifft2(spec, axes=(-2, -1)) * (n1 * n2)


def recover_e_field(medium: PeriodicScalarField, basis: TransverseBasis,
                    omega2: float, q_coeffs: np.ndarray) -> np.ndarray:
    """p = i/(eps*omega) curl'_k q on the medium grid, eps-normalized."""
    if omega2 <= OMEGA_FLOOR**2:
        raise ValueError(f"omega^2 = {omega2:.3e} below floor; E-field recovery undefined")
    omega = float(np.sqrt(omega2))
    amp = basis.field_coefficients(q_coeffs)          # (nK, 3)
    curl_amp = 1j * np.cross(basis.ktilde, amp)       # exact per-mode curl
    q_norm = 1.0 / np.sqrt(medium.lattice.cell_area)  # L2(Q)-orthonormal waves
    curl_q = _waves_to_grid(basis, curl_amp, medium.shape) * q_norm
    p = (1j / omega) * curl_q / medium.values[None, :, :]
    # enforce the eps-weighted normalization exactly
    nrm = np.sqrt(cell_inner(p, p, medium.lattice, weight=medium.values).real)
    return p / nrm


def solve_bloch(medium: PeriodicScalarField, k, kappa: float, cutoff: int,
                n_bands: int, gap_tol_rel: float = 1e-6,
                fix_pt_phase: bool = True) -> list:
    """Assemble, solve, recover and (optionally) phase-fix the lowest bands."""
    M, basis = assemble_h_operator(medium, k, kappa, cutoff)
    want = min(n_bands + 1, M.shape[0])  # one extra band for the margin
    vals, vecs = solve_eigenpairs(M, want)
    pairs = []
    for n in range(min(n_bands, len(vals))):
        w2 = float(vals[n])
        neighbors = []
        if n > 0:
            neighbors.append(abs(w2 - vals[n - 1]))
        if n + 1 < len(vals):
            neighbors.append(abs(w2 - vals[n + 1]))
        margin = float(min(neighbors)) if neighbors else np.inf
        gap_tol = gap_tol_rel * max(1.0, abs(w2))
        p = recover_e_field(medium, basis, w2, vecs[:, n])
        pair = BlochEigenpair(
            basis=basis, band=n + 1, omega=float(np.sqrt(max(w2, 0.0))),
            q_coeffs=vecs[:, n].copy(), p_values=p,
            simple_margin=margin, degenerate=bool(margin <= gap_tol))
        if fix_pt_phase:
            pair = fix_phase(pair)
        pairs.append(pair)
    return pairs


# ---------------------------------------------------------------------------
# PT phase fixing
# ---------------------------------------------------------------------------

def _reflect_grid(field: np.ndarray) -> np.ndarray:
    """Samples of x -> f(-x) for trailing (N1, N2) axes."""
    out = field[..., ::-1, ::-1]
    return np.roll(out, (1, 1), axis=(-2, -1))


def pt_defect(field: np.ndarray) -> float:
    """|| f(-x) - conj(f) || / ||f|| on the grid."""
    nrm = np.linalg.norm(field)
    if nrm == 0.0:
        return 0.0
    return float(np.linalg.norm(_reflect_grid(field) - np.conj(field)) / nrm)


def fix_phase(pair: BlochEigenpair) -> BlochEigenpair:
    """Multiply by e^{i alpha} minimizing the PT defect ||p(-x) - conj(p)||.

    The optimal alpha satisfies e^{2 i alpha} = conj(c)/|c| with
    c = <p(-x), conj(p)>; the remaining sign is chosen so the cell mean of
    the first component with nonnegligible mean has positive real part.
    For near-degenerate eigenvalues the phase is marked unreliable
    (`phase_fixed` stays False) and the defect is reported as is.
    """
    p = pair.p_values
    if pair.degenerate:
        return replace(pair, pt_defect=pt_defect(p), phase_fixed=False)
    c = np.vdot(np.conj(p), _reflect_grid(p))  # <p(-x), conj(p)>
    alpha = 0.0 if abs(c) == 0 else -0.5 * np.angle(c)
    q = p * np.exp(1j * alpha)
    # sign convention: first component with a significant cell mean gets
    # a positive real part
    means = q.reshape(3, -1).mean(axis=1)
    scale = np.abs(q).max()
    for m in means:
        if abs(m) > 1e-8 * scale:
            if m.real < 0:
                q = -q
            break
    new_q = pair.q_coeffs * np.exp(1j * alpha)
    return replace(pair, p_values=q, q_coeffs=new_q,
                   pt_defect=pt_defect(q), phase_fixed=True)


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

class ProjectionSet:
    """P_k, Q_k, P^eps_k, Q^eps_k, eps*P_k, I - eps*P_k for a reference mode.

    The reference mode must be eps-normalized (<p, eps p> = 1); P uses the
    properly normalized L2 projection so that every member is idempotent.
    """

    WHICH = ("P", "Q", "Peps", "Qeps", "epsP", "epsQ")

    def __init__(self, p_ref: np.ndarray, eps: PeriodicScalarField):
        self.p = p_ref
        self.eps = eps
        self.lattice = eps.lattice
        nrm_eps = cell_inner(p_ref, p_ref, self.lattice, weight=eps.values).real
        if abs(nrm_eps - 1.0) > 1e-8:
            raise ValueError("reference mode is not eps-normalized")
        self._l2_nrm = cell_inner(p_ref, p_ref, self.lattice).real

    def apply(self, which: str, f: np.ndarray) -> np.ndarray:
        p, eps, lat = self.p, self.eps.values[None, :, :], self.lattice
        if which == "P":
            return (cell_inner(f, p, lat) / self._l2_nrm) * p
        if which == "Q":
            return f - self.apply("P", f)
        if which == "Peps":
            return cell_inner(f, p, lat, weight=self.eps.values) * p
        if which == "Qeps":
            return f - self.apply("Peps", f)
        if which == "epsP":
            return cell_inner(f, p, lat) * (eps * p)
        if which == "epsQ":
            return f - self.apply("epsP", f)
        raise ValueError(f"unknown projection {which!r}")


# ---------------------------------------------------------------------------
# shifted Helmholtz decomposition
# ---------------------------------------------------------------------------

def helmholtz_decompose(f: np.ndarray, lattice: BravaisLattice, k, kappa: float):
    """Split f = w + grad'_k psi with w L2-orthogonal to all grad'_k g.

    Solves the coercive form S_k(psi, phi) = <f, grad'_k phi> spectrally;
    per Fourier mode this is the orthogonal projection onto ktilde(K).
    Requires kappa != 0 (else |ktilde| may vanish and S_k loses coercivity).
    """
    if kappa == 0:
        raise ValueError("kappa must be nonzero for the shifted Helmholtz split")
    fhat = np.fft.fft2(f, axes=(-2, -1))
    kt = np.moveaxis(_grid_ktilde(lattice, f.shape[-2:], k, kappa), -1, 0)
    kt2 = np.einsum("d...,d...->...", kt, kt)
    psi_hat = -1j * np.einsum("d...,d...->...", kt, fhat) / kt2
    grad_hat = 1j * kt * psi_hat[None, ...]
    grad = np.fft.ifft2(grad_hat, axes=(-2, -1))
    return f - grad, grad


# ---------------------------------------------------------------------------
# archives: binary arrays + JSON sidecar
# ---------------------------------------------------------------------------

def save_eigenpairs(pairs: list, path) -> None:
    path = Path(path)
    stack = np.stack([p.p_values for p in pairs])
    stack.astype("<c16").tofile(path)
    b = pairs[0].basis
    sidecar = {
        "k": b.k.tolist(),
        "kappa": b.kappa,
        "cutoff": b.cutoff,
        "bands": [p.band for p in pairs],
        "omegas": [p.omega for p in pairs],
        "shape": list(stack.shape),
        "dtype": "<c16",
        "a1": b.lattice.a1.tolist(),
        "a2": b.lattice.a2.tolist(),
        "normalization": "eps-weighted",
        "phase": "PT",
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1))


def load_eigenpairs(path):
    """Load archived p-fields; returns (sidecar dict, (n_bands, 3, N1, N2) array)."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.fromfile(path, dtype=sidecar["dtype"]).reshape(sidecar["shape"])
    return sidecar, data
