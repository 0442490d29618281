"""Periodic material data: dielectric profile and cubic susceptibility.

Scalar fields are stored as real samples on a cell-fractional N1 x N2 grid,
sample (i, j) at x = (i/N1)*a1 + (j/N2)*a2, so non-rectangular cells need
no resampling.  Fourier coefficients are midpoint-rule (FFT) approximations
of (1/|Q|) * integral_Q f(x) exp(-i K.x) dx.

The cubic susceptibility defaults to the isotropic Kerr model

    chi3_{a,b,c,d} = chi0(x) * (d_ab d_cd + d_ac d_bd + d_ad d_bc) / 3

whose symmetrization chi3_{c,b,a,d} + chi3_{a,c,b,d} + chi3_{a,b,c,d}
equals chi0(x) * (d_ab d_cd + d_ac d_bd + d_ad d_bc).  A fully general
81-component (possibly x-dependent) tensor is supported as well.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import BravaisLattice

__all__ = [
    "PeriodicScalarField",
    "SusceptibilityField",
    "AssumptionReport",
    "fourier_coefficients",
    "synthesize",
    "disk_medium",
    "ring_medium",
    "constant_field",
    "isotropic_kerr",
    "check_assumptions",
    "save_field",
    "load_field",
]


@dataclass
class PeriodicScalarField:
    """Real scalar field sampled on the cell-fractional grid of `lattice`."""

    lattice: BravaisLattice
    values: np.ndarray  # (N1, N2) real

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2D sample array")

    @property
    def shape(self):
        return self.values.shape

    def grid_points(self) -> np.ndarray:
        """(N1, N2, 2) physical coordinates of the samples."""
        n1, n2 = self.values.shape
        f1 = np.arange(n1) / n1
        f2 = np.arange(n2) / n2
        return (f1[:, None, None] * self.lattice.a1[None, None, :]
                + f2[None, :, None] * self.lattice.a2[None, None, :])

    def mean(self) -> float:
        return float(self.values.mean())

    def fft_coefficients(self) -> np.ndarray:
        """Full DFT coefficient array c[m1 % N1, m2 % N2] (cyclic index)."""
        n1, n2 = self.values.shape
        return np.fft.fft2(self.values) / (n1 * n2)

    def parity_defect(self) -> float:
        """max |f(x) - f(-x)| / max |f| on the sample grid."""
        rev = _reflect(self.values)
        denom = np.abs(self.values).max()
        if denom == 0.0:
            return 0.0
        return float(np.abs(self.values - rev).max() / denom)

    def reciprocal(self) -> "PeriodicScalarField":
        return PeriodicScalarField(self.lattice, 1.0 / self.values)


def _reflect(values: np.ndarray) -> np.ndarray:
    """Samples of x -> f(-x); exact on the cell-fractional grid."""
    out = values[::-1, ...][:, ::-1, ...] if values.ndim >= 2 else values[::-1]
    return np.roll(out, 1, axis=(0, 1)) if values.ndim >= 2 else np.roll(out, 1)


def fourier_coefficients(fld: PeriodicScalarField, cutoff: int) -> dict:
    """Coefficients {(m1, m2): c} for K = m1*b1 + m2*b2, |m_i| <= cutoff.

    Requires at least 2*cutoff + 1 samples per direction (Nyquist).
    """
    n1, n2 = fld.shape
    if n1 < 2 * cutoff + 1 or n2 < 2 * cutoff + 1:
        raise ValueError(
            f"grid {n1}x{n2} under-resolves cutoff {cutoff}; "
            f"need >= {2 * cutoff + 1} samples per direction")
    c = fld.fft_coefficients()
    out = {}
    for m1 in range(-cutoff, cutoff + 1):
        for m2 in range(-cutoff, cutoff + 1):
            out[(m1, m2)] = complex(c[m1 % n1, m2 % n2])
    return out


def synthesize(lattice: BravaisLattice, coeffs: dict, shape) -> PeriodicScalarField:
    """Build the grid samples of sum_K c_K exp(i K.x) from a coefficient map."""
    n1, n2 = shape
    spec = np.zeros((n1, n2), dtype=complex)
    for (m1, m2), c in coeffs.items():
        spec[m1 % n1, m2 % n2] += c
    vals = np.fft.ifft2(spec) * (n1 * n2)
    if np.abs(vals.imag).max() > 1e-10 * max(np.abs(vals.real).max(), 1.0):
        raise ValueError("coefficient map violates conjugate symmetry")
    return PeriodicScalarField(lattice, vals.real)


# ---------------------------------------------------------------------------
# parametric media
# ---------------------------------------------------------------------------

def constant_field(lattice: BravaisLattice, value: float, n: int = 32) -> PeriodicScalarField:
    return PeriodicScalarField(lattice, np.full((n, n), float(value)))


def _centered_radius(lattice: BravaisLattice, n: int) -> np.ndarray:
    """Distance from the nearest lattice point, sampled on the n x n grid."""
    f = np.arange(n) / n
    f1, f2 = np.meshgrid(f, f, indexing="ij")
    # wrap fractional coordinates into [-1/2, 1/2) before mapping to x
    f1 = (f1 + 0.5) % 1.0 - 0.5
    f2 = (f2 + 0.5) % 1.0 - 0.5
    x = f1[..., None] * lattice.a1 + f2[..., None] * lattice.a2
    r = np.linalg.norm(x, axis=-1)
    # near cell corners a neighboring lattice point can be closer
    for m1 in (-1, 0, 1):
        for m2 in (-1, 0, 1):
            if m1 == 0 and m2 == 0:
                continue
            shift = lattice.lattice_vector(m1, m2)
            r = np.minimum(r, np.linalg.norm(x - shift, axis=-1))
    return r


def _smooth(lattice: BravaisLattice, values: np.ndarray, width_cells: float) -> np.ndarray:
    """Periodic Gaussian mollifier, width in grid cells."""
    if width_cells <= 0:
        return values
    n1, n2 = values.shape
    k1 = np.fft.fftfreq(n1) * n1
    k2 = np.fft.fftfreq(n2) * n2
    s1 = width_cells / n1
    s2 = width_cells / n2
    g = np.exp(-2.0 * np.pi**2 * ((k1[:, None] * s1) ** 2 + (k2[None, :] * s2) ** 2))
    return np.fft.ifft2(np.fft.fft2(values) * g).real


def disk_medium(lattice: BravaisLattice, radius: float, eps_in: float,
                eps_out: float, n: int = 64, smooth_cells: float = 2.0) -> PeriodicScalarField:
    """eps = eps_in inside |x| < radius (around each lattice point), else eps_out."""
    r = _centered_radius(lattice, n)
    vals = np.where(r < radius, eps_in, eps_out).astype(float)
    return PeriodicScalarField(lattice, _smooth(lattice, vals, smooth_cells))


def ring_medium(lattice: BravaisLattice, r_inner: float, r_outer: float,
                eps_ring: float, eps_bg: float, n: int = 64,
                smooth_cells: float = 2.0) -> PeriodicScalarField:
    """eps = eps_ring for r_inner <= |x| <= r_outer, else eps_bg."""
    r = _centered_radius(lattice, n)
    vals = np.where((r >= r_inner) & (r <= r_outer), eps_ring, eps_bg).astype(float)
    return PeriodicScalarField(lattice, _smooth(lattice, vals, smooth_cells))


def cosine_medium(lattice: BravaisLattice, base: float = 2.0, amp: float = 1.0,
                  n: int = 64, axis: int = 0) -> PeriodicScalarField:
    """eps(x) = base + amp*cos(K1 . x) with K1 the first reciprocal vector."""
    f = np.arange(n) / n
    phase = 2.0 * np.pi * f
    vals = base + amp * (np.cos(phase)[:, None] if axis == 0 else np.cos(phase)[None, :])
    return PeriodicScalarField(lattice, np.broadcast_to(vals, (n, n)).copy())


# ---------------------------------------------------------------------------
# cubic susceptibility
# ---------------------------------------------------------------------------

_EYE3 = np.eye(3)
# (d_ab d_cd + d_ac d_bd + d_ad d_bc), shape (3,3,3,3)
_ISO_SYM = (np.einsum("ab,cd->abcd", _EYE3, _EYE3)
            + np.einsum("ac,bd->abcd", _EYE3, _EYE3)
            + np.einsum("ad,bc->abcd", _EYE3, _EYE3))


@dataclass
class SusceptibilityField:
    """Cubic susceptibility chi3 with its symmetrized tensor.

    Either `chi0` is given (isotropic Kerr model, chi3 = chi0*ISO/3) or a
    raw `tensor` with shape (3,3,3,3) (constant) or (3,3,3,3,N1,N2).
    """

    lattice: BravaisLattice
    chi0: PeriodicScalarField | None = None
    tensor: np.ndarray | None = None
    _sym: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if (self.chi0 is None) == (self.tensor is None):
            raise ValueError("give exactly one of chi0 or tensor")
        if self.tensor is not None:
            self.tensor = np.asarray(self.tensor, dtype=float)
            if self.tensor.shape[:4] != (3, 3, 3, 3):
                raise ValueError("tensor must have shape (3,3,3,3[,N1,N2])")
            # chi3_{c,b,a,d} + chi3_{a,c,b,d} + chi3_{a,b,c,d}
            self._sym = (np.einsum("cbad...->abcd...", self.tensor)
                         + np.einsum("acbd...->abcd...", self.tensor)
                         + self.tensor)

    @property
    def is_isotropic(self) -> bool:
        return self.chi0 is not None

    def symmetrized(self) -> np.ndarray:
        """Symmetrized tensor; isotropic profile factored out when present."""
        if self.is_isotropic:
            return _ISO_SYM
        return self._sym

    def chi0_values(self) -> np.ndarray:
        if not self.is_isotropic:
            raise ValueError("not an isotropic model")
        return self.chi0.values

    def parity_defect(self) -> float:
        if self.is_isotropic:
            return self.chi0.parity_defect()
        if self.tensor.ndim == 4:
            return 0.0
        rev = _reflect_tensor_grid(self.tensor)
        denom = np.abs(self.tensor).max()
        return 0.0 if denom == 0 else float(np.abs(self.tensor - rev).max() / denom)

    # -- Kerr contraction ---------------------------------------------------

    def kerr(self, u: np.ndarray) -> np.ndarray:
        """F_d(u) = sum_{abc} sym_{a,b,c,d} u_a u_b conj(u_c).

        `u` has shape (3, ...) with trailing grid axes matching the profile.
        """
        u = np.asarray(u)
        if self.is_isotropic:
            chi0 = self.chi0.values
            uu = np.einsum("a...,a...->...", u, u)
            absq = np.einsum("a...,a...->...", u, np.conj(u))
            return chi0 * (uu * np.conj(u) + 2.0 * absq * u)
        sym = self._sym
        if sym.ndim == 4:
            return np.einsum("abcd,a...,b...,c...->d...", sym, u, u, np.conj(u))
        return np.einsum("abcd...,a...,b...,c...->d...", sym, u, u, np.conj(u))

    def kerr_derivative(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Directional derivative dF(u)[v] (real-linear in v)."""
        u = np.asarray(u)
        v = np.asarray(v)
        if self.is_isotropic:
            chi0 = self.chi0.values
            uu = np.einsum("a...,a...->...", u, u)
            uv = np.einsum("a...,a...->...", u, v)
            u_cv = np.einsum("a...,a...->...", u, np.conj(v))
            v_cu = np.einsum("a...,a...->...", v, np.conj(u))
            return chi0 * (2.0 * uv * np.conj(u) + uu * np.conj(v)
                           + 2.0 * (u_cv + v_cu) * u
                           + 2.0 * np.einsum("a...,a...->...", u, np.conj(u)) * v)
        sym = self._sym
        sub = "abcd" if sym.ndim == 4 else "abcd..."
        return (np.einsum(f"{sub},a...,b...,c...->d...", sym, v, u, np.conj(u))
                + np.einsum(f"{sub},a...,b...,c...->d...", sym, u, v, np.conj(u))
                + np.einsum(f"{sub},a...,b...,c...->d...", sym, u, u, np.conj(v)))


def _reflect_tensor_grid(t: np.ndarray) -> np.ndarray:
    out = t[..., ::-1, ::-1]
    return np.roll(out, 1, axis=(-2, -1))


def isotropic_kerr(eps_like: PeriodicScalarField, profile=None) -> SusceptibilityField:
    """Isotropic Kerr susceptibility; constant chi0 = 1 unless a profile is given."""
    lattice = eps_like.lattice
    if profile is None:
        profile = PeriodicScalarField(lattice, np.ones_like(eps_like.values))
    elif np.isscalar(profile):
        profile = PeriodicScalarField(lattice, np.full_like(eps_like.values, float(profile)))
    return SusceptibilityField(lattice, chi0=profile)


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    positivity: bool
    evenness_eps: bool
    evenness_chi: bool
    realness: bool
    min_eps: float
    eps_parity_defect: float
    chi_parity_defect: float

    def all_ok(self) -> bool:
        return self.positivity and self.evenness_eps and self.evenness_chi and self.realness

    def as_dict(self) -> dict:
        return {
            "positivity": self.positivity,
            "evenness_eps": self.evenness_eps,
            "evenness_chi": self.evenness_chi,
            "realness": self.realness,
            "min_eps": self.min_eps,
            "eps_parity_defect": self.eps_parity_defect,
            "chi_parity_defect": self.chi_parity_defect,
        }


def check_assumptions(eps: PeriodicScalarField,
                      chi: SusceptibilityField | None = None,
                      parity_tol: float = 1e-10) -> AssumptionReport:
    """Report positivity of eps, realness, and evenness of eps and chi3."""
    eps_defect = eps.parity_defect()
    chi_defect = chi.parity_defect() if chi is not None else 0.0
    realness = bool(np.isrealobj(eps.values))
    if chi is not None and not chi.is_isotropic:
        realness = realness and bool(np.isrealobj(chi.tensor))
    return AssumptionReport(
        positivity=bool(eps.values.min() > 0.0),
        evenness_eps=bool(eps_defect < parity_tol),
        evenness_chi=bool(chi_defect < parity_tol),
        realness=realness,
        min_eps=float(eps.values.min()),
        eps_parity_defect=float(eps_defect),
        chi_parity_defect=float(chi_defect),
    )


# ---------------------------------------------------------------------------
# file I/O: flat little-endian float64 + JSON sidecar
# ---------------------------------------------------------------------------

def save_field(fld: PeriodicScalarField, path) -> None:
    path = Path(path)
    fld.values.astype("<f8").tofile(path)
    sidecar = {
        "shape": list(fld.shape),
        "dtype": "<f8",
        "a1": fld.lattice.a1.tolist(),
        "a2": fld.lattice.a2.tolist(),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1))


def load_field(path) -> PeriodicScalarField:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    vals = np.fromfile(path, dtype=sidecar["dtype"]).reshape(sidecar["shape"])
    lat = BravaisLattice(np.array(sidecar["a1"]), np.array(sidecar["a2"]))
    return PeriodicScalarField(lat, vals)
