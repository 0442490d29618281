"""Bravais-lattice geometry, reciprocal lattice and Brillouin-zone reduction.

All lattices are two dimensional.  A lattice is specified by two linearly
independent vectors ``a1, a2``; the reciprocal basis ``b1, b2`` satisfies
``a_i . b_j = 2*pi*delta_ij``.  The Brillouin zone is the Wigner-Seitz cell
of the reciprocal lattice; membership on the boundary is resolved by a
fixed lexicographic tie-break so that every k-vector has exactly one
representative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BravaisLattice",
    "KPath",
    "reciprocal_basis",
    "high_symmetry_points",
]

_DEGENERACY_TOL = 1e-12


def reciprocal_basis(a1, a2):
    """Reciprocal vectors ``b1, b2`` with ``a_i . b_j = 2*pi*delta_ij``.

    Raises ValueError if ``a1, a2`` are (numerically) linearly dependent.
    """
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    A = np.column_stack([a1, a2])
    det = np.linalg.det(A)
    scale = np.linalg.norm(a1) * np.linalg.norm(a2)
    if abs(det) <= _DEGENERACY_TOL * max(scale, 1e-300):
        raise ValueError("lattice vectors are linearly dependent")
    # rows of 2*pi*A^{-1} are b1, b2
    B = 2.0 * np.pi * np.linalg.inv(A)
    return B[0].copy(), B[1].copy()


@dataclass(frozen=True)
class BravaisLattice:
    """2D Bravais lattice with its reciprocal basis.

    Construct directly from ``a1, a2`` or through the ``square`` /
    ``hexagonal`` presets.
    """

    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray = field(init=False, repr=False)
    b2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a1 = np.asarray(self.a1, dtype=float).reshape(2)
        a2 = np.asarray(self.a2, dtype=float).reshape(2)
        b1, b2 = reciprocal_basis(a1, a2)
        for name, val in (("a1", a1), ("a2", a2), ("b1", b1), ("b2", b2)):
            object.__setattr__(self, name, val)
            val.setflags(write=False)

    # -- presets ----------------------------------------------------------

    @classmethod
    def square(cls, a0: float = 1.0) -> "BravaisLattice":
        return cls(np.array([a0, 0.0]), np.array([0.0, a0]))

    @classmethod
    def hexagonal(cls, a0: float = 1.0) -> "BravaisLattice":
        return cls(np.array([a0, 0.0]), np.array([a0 / 2.0, a0 * np.sqrt(3.0) / 2.0]))

    # -- basic geometry ----------------------------------------------------

    @property
    def cell_area(self) -> float:
        return abs(float(self.a1[0] * self.a2[1] - self.a1[1] * self.a2[0]))

    @property
    def bz_area(self) -> float:
        return abs(float(self.b1[0] * self.b2[1] - self.b1[1] * self.b2[0]))

    def lattice_vector(self, m1: int, m2: int) -> np.ndarray:
        return m1 * self.a1 + m2 * self.a2

    def reciprocal_vector(self, m1: int, m2: int) -> np.ndarray:
        return m1 * self.b1 + m2 * self.b2

    def reciprocal_vectors(self, cutoff: int):
        """All K = m1*b1 + m2*b2 with |m1|,|m2| <= cutoff.

        Returns (kvecs, mindices): arrays of shape (n, 2) with the integer
        indices in row-major (m1, m2) order, m2 fastest.
        """
        ms = np.arange(-cutoff, cutoff + 1)
        m1, m2 = np.meshgrid(ms, ms, indexing="ij")
        mind = np.stack([m1.ravel(), m2.ravel()], axis=-1)
        kvecs = mind @ np.vstack([self.b1, self.b2])
        return kvecs, mind

    # -- membership / reduction --------------------------------------------

    def is_reciprocal_vector(self, v, tol: float = 1e-10) -> bool:
        """True iff v lies on the reciprocal lattice within tol*(1+|v|)."""
        if tol <= 0:
            raise ValueError("tol must be positive")
        v = np.asarray(v, dtype=float)
        B = np.column_stack([self.b1, self.b2])
        m = np.rint(np.linalg.solve(B, v))
        res = np.linalg.norm(B @ m - v)
        return bool(res < tol * (1.0 + np.linalg.norm(v)))

    def reduce_to_bz(self, k) -> np.ndarray:
        """Representative of k in the (first) Brillouin zone.

        The returned k' satisfies k' - k in Lambda* and minimizes |k'|;
        boundary ties are broken by picking the lexicographically smallest
        representative.
        """
        k = np.asarray(k, dtype=float)
        if not np.all(np.isfinite(k)):
            raise ValueError("k must be finite")
        B = np.column_stack([self.b1, self.b2])
        frac = np.linalg.solve(B, k)
        base = np.rint(frac)
        ms = np.arange(-2, 3)
        m1, m2 = np.meshgrid(ms, ms, indexing="ij")
        shifts = np.stack([m1.ravel(), m2.ravel()], axis=-1) + base
        cands = k - shifts @ np.vstack([self.b1, self.b2])
        norms = np.linalg.norm(cands, axis=1)
        best = norms.min()
        near = cands[norms <= best + 1e-12 * (1.0 + best)]
        # lexicographic tie-break on (k1, k2)
        order = np.lexsort((near[:, 1], near[:, 0]))
        return near[order[0]].copy()

    # -- point group ---------------------------------------------------------

    def point_group(self) -> np.ndarray:
        """Orthogonal maps O with O*Lambda = Lambda, as an (n, 2, 2) array.

        Found by enumerating integer matrices M with entries in {-1, 0, 1}
        and testing whether A M A^{-1} is orthogonal (A = [a1 a2]).  This
        covers every 2D Bravais point group (C2 up to C6v).
        """
        A = np.column_stack([self.a1, self.a2])
        Ainv = np.linalg.inv(A)
        ops = []
        vals = (-1, 0, 1)
        for m11 in vals:
            for m12 in vals:
                for m21 in vals:
                    for m22 in vals:
                        M = np.array([[m11, m12], [m21, m22]], dtype=float)
                        if abs(np.linalg.det(M)) != 1.0:
                            continue
                        O = A @ M @ Ainv
                        if np.allclose(O.T @ O, np.eye(2), atol=1e-10):
                            ops.append(O)
        return np.array(ops)


def high_symmetry_points(lattice: BravaisLattice) -> dict:
    """Named high-symmetry k-points for the square and hexagonal presets.

    Square: Gamma, X = b1/2, M = (b1+b2)/2.
    Hexagonal: Gamma, M = (b1+b2)/2 (edge midpoint), K (zone corner).
    """
    pts = {"Gamma": np.zeros(2)}
    n_ops = len(lattice.point_group())
    if n_ops >= 12:  # hexagonal
        pts["M"] = lattice.reduce_to_bz((lattice.b1 + lattice.b2) / 2.0)
        # zone corner: equidistant from 0, b1+b2 and b1 (a vertex of the
        # Wigner-Seitz hexagon); construct from the two adjacent face planes
        K1 = lattice.b1 + lattice.b2
        K2 = lattice.b1
        Bmat = np.vstack([K1, K2])
        rhs = 0.5 * np.array([K1 @ K1, K2 @ K2])
        pts["K"] = lattice.reduce_to_bz(np.linalg.solve(Bmat, rhs))
    else:  # square / rectangular
        pts["X"] = lattice.reduce_to_bz(lattice.b1 / 2.0)
        pts["M"] = lattice.reduce_to_bz((lattice.b1 + lattice.b2) / 2.0)
    return pts


@dataclass
class KPath:
    """Piecewise-linear path through named k-space vertices.

    ``segments_counts[i]`` samples are placed on segment i, endpoint
    excluded except for the final segment, so consecutive samples have
    strictly increasing arclength.
    """

    names: list
    vertices: np.ndarray        # (n_vert, 2)
    segment_counts: list

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if len(self.names) != len(self.vertices):
            raise ValueError("one name per vertex required")
        if len(self.segment_counts) != len(self.vertices) - 1:
            raise ValueError("need one sample count per segment")
        if any(c < 1 for c in self.segment_counts):
            raise ValueError("segment counts must be >= 1")

    @classmethod
    def through(cls, lattice: BravaisLattice, names, counts) -> "KPath":
        pts = high_symmetry_points(lattice)
        verts = [pts[n] for n in names]
        return cls(list(names), np.array(verts), list(counts))

    def kpoints(self) -> np.ndarray:
        out = []
        nseg = len(self.segment_counts)
        for i, cnt in enumerate(self.segment_counts):
            v0, v1 = self.vertices[i], self.vertices[i + 1]
            tmax = 1.0 if i == nseg - 1 else 1.0 - 1.0 / cnt
            # exclude the endpoint on interior segments to avoid duplicates
            npts = cnt + 1 if i == nseg - 1 else cnt
            ts = np.linspace(0.0, tmax, npts)
            out.append(v0[None, :] + ts[:, None] * (v1 - v0)[None, :])
        return np.vstack(out)

    def arclength(self) -> np.ndarray:
        ks = self.kpoints()
        seg = np.linalg.norm(np.diff(ks, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def vertex_arclengths(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])
