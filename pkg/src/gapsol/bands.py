"""Band structure sweeps, spectral gaps and gap-edge analysis.

A band structure is the table omega_n(k) over a k-path or a Brillouin-zone
filling grid.  Gap detection always works on a BZ grid: a gap is a maximal
open interval (max_k omega_n, min_k omega_{n+1}) of positive width.  The
semi-infinite region below the first band is not listed as a gap; the
bottom-of-spectrum edge (relevant when the first band has a strict minimum)
is exposed separately through `locate_floor_edge`.

Edge location refines extrema by iterated quadratic surface fits, verifies
simplicity margins, detects the symmetry orbit of the level set via the
lattice point group, and estimates the band Hessians with Richardson-checked
central differences.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lattice import BravaisLattice
from .medium import PeriodicScalarField
from . import bloch

__all__ = [
    "BandStructure",
    "BandEdge",
    "Gap",
    "band_solver",
    "sweep",
    "bz_grid",
    "find_gaps",
    "locate_edge",
    "locate_floor_edge",
    "hessian",
    "lipschitz_probe",
    "simplicity_fraction",
    "save_band_csv",
    "save_edge_json",
    "load_edge_json",
]


def band_solver(medium: PeriodicScalarField, kappa: float, cutoff, n_max: int):
    """Callable k -> ascending omega_n(k), n = 1..n_max."""
    def solver(k):
        M, _ = bloch.assemble_h_operator(medium, k, kappa, cutoff)
        vals, _ = bloch.solve_eigenpairs(M, n_max)
        return np.sqrt(np.clip(vals, 0.0, None))
    return solver


@dataclass
class BandStructure:
    lattice: BravaisLattice
    kpoints: np.ndarray          # (nk, 2)
    omegas: np.ndarray           # (nk, n_max) ascending per row
    kind: str = "path"           # "path" | "grid"
    grid_shape: tuple | None = None
    arclength: np.ndarray | None = None
    meta: dict | None = None

    @property
    def n_bands(self) -> int:
        return self.omegas.shape[1]

    def band_range(self, n: int):
        """(min, max) of band n (1-based) over the sampled set."""
        col = self.omegas[:, n - 1]
        return float(col.min()), float(col.max())


def bz_grid(lattice: BravaisLattice, n: int) -> np.ndarray:
    """Symmetric (odd n x odd n) fractional grid of the Brillouin zone."""
    if n % 2 == 0:
        n += 1  # keep the grid symmetric under k -> -k
    fr = (np.arange(n) - n // 2) / n
    f1, f2 = np.meshgrid(fr, fr, indexing="ij")
    ks = f1.ravel()[:, None] * lattice.b1 + f2.ravel()[:, None] * lattice.b2
    return np.array([lattice.reduce_to_bz(k) for k in ks])


def sweep(medium: PeriodicScalarField, kappa: float, kset, n_max: int,
          cutoff, threads: int = 1, kind: str = "path",
          arclength=None) -> BandStructure:
    """Lowest n_max bands at every k in kset; deterministic for fixed inputs."""
    kset = np.asarray(kset, dtype=float)
    if kset.ndim != 2 or kset.shape[0] == 0:
        raise ValueError("kset must be a nonempty (nk, 2) array")
    solver = band_solver(medium, kappa, cutoff, n_max)

    def run_one(i):
        try:
            return solver(kset[i])
        except Exception as exc:
            raise RuntimeError(f"eigensolve failed at k = {kset[i]}: {exc}") from exc

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_one, range(len(kset))))
    else:
        rows = [run_one(i) for i in range(len(kset))]
    omegas = np.array(rows)
    meta = {"kappa": kappa, "cutoff": cutoff, "n_max": n_max,
            "medium_shape": list(medium.shape)}
    return BandStructure(medium.lattice, kset, omegas, kind=kind,
                         grid_shape=None, arclength=arclength, meta=meta)


# ---------------------------------------------------------------------------
# gaps
# ---------------------------------------------------------------------------

@dataclass
class Gap:
    lo: float
    hi: float
    lower_band: int
    upper_band: int

    @property
    def width(self) -> float:
        return self.hi - self.lo


def find_gaps(bs: BandStructure) -> list:
    """Maximal open intervals between consecutive bands, ascending."""
    if bs.kind != "grid":
        raise ValueError("gap detection requires a BZ-filling grid sweep")
    gaps = []
    for n in range(1, bs.n_bands):
        lo = float(bs.omegas[:, n - 1].max())
        hi = float(bs.omegas[:, n].min())
        if hi > lo:
            gaps.append(Gap(lo, hi, n, n + 1))
    return gaps


# ---------------------------------------------------------------------------
# edges
# ---------------------------------------------------------------------------

@dataclass
class BandEdge:
    omega_star: float
    Omega: int                  # +1: gap above the edge, -1: gap below
    n_star: int                 # 1-based band index
    kpoints: np.ndarray         # (N, 2) level set
    hessians: np.ndarray        # (N, 2, 2)
    simple_margins: np.ndarray  # (N,) omega^2 distances to neighbor bands

    @property
    def N(self) -> int:
        return len(self.kpoints)

    def definiteness(self) -> int:
        """+1 if every Hessian is positive definite, -1 if negative definite."""
        signs = set()
        for H in self.hessians:
            ev = np.linalg.eigvalsh(H)
            if ev.min() > 0:
                signs.add(+1)
            elif ev.max() < 0:
                signs.add(-1)
            else:
                raise ValueError("indefinite or degenerate band Hessian")
        if len(signs) != 1:
            raise ValueError("Hessians disagree in definiteness across the level set")
        return signs.pop()


def _refine_extremum(solver, band: int, k0: np.ndarray, minimize: bool,
                     h0: float, tol: float, max_iter: int = 40):
    """Iterated 3x3 quadratic-fit refinement of a band extremum."""
    k = np.asarray(k0, dtype=float).copy()
    h = h0
    for _ in range(max_iter):
        offs = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
        pts = k[None, :] + h * offs
        vals = np.array([solver(p)[band - 1] for p in pts])
        # quadratic model w = c0 + g.x + x.H x/2 through the 9 samples
        X = np.column_stack([
            np.ones(9), offs[:, 0], offs[:, 1],
            offs[:, 0] ** 2 / 2, offs[:, 1] ** 2 / 2, offs[:, 0] * offs[:, 1],
        ])
        coef, *_ = np.linalg.lstsq(X, vals, rcond=None)
        g = coef[1:3]
        H = np.array([[coef[3], coef[5]], [coef[5], coef[4]]])
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            step = np.zeros(2)
        sign = 1.0 if minimize else -1.0
        ev = np.linalg.eigvalsh(sign * H)
        if ev.min() <= 0 or np.linalg.norm(step) > 2.0:
            # model not trustworthy at this scale; shrink around grid best
            best = vals.argmin() if minimize else vals.argmax()
            k = pts[best]
            h *= 0.5
            continue
        k = k + h * step
        if h * np.linalg.norm(step) < tol:
            if h > 16 * tol:
                h *= 0.25  # confirm at a finer stencil before accepting
                continue
            break
        h = max(min(h, 2 * h * np.linalg.norm(step)), tol)
    return k, float(solver(k)[band - 1])


def _orbit(lattice: BravaisLattice, k: np.ndarray, tol: float) -> np.ndarray:
    """Point-group orbit of k reduced to the BZ, deduplicated."""
    ops = lattice.point_group()
    images = [lattice.reduce_to_bz(O @ k) for O in ops]
    uniq = []
    for p in images:
        if not any(np.linalg.norm(p - q) < tol for q in uniq):
            uniq.append(p)
    order = np.lexsort(([p[1] for p in uniq], [p[0] for p in uniq]))
    return np.array([uniq[i] for i in order])


def locate_edge_solver(lattice: BravaisLattice, solver, bs: BandStructure,
                       gap: Gap, side: str, refine_tol: float = 1e-8,
                       gap_tol_rel: float = 1e-6, edge_tol: float = 1e-6,
                       orbit_tol: float = 1e-5, hessian_h: float = 1e-3) -> BandEdge:
    """Edge location against an arbitrary k -> omegas callable (see locate_edge)."""
    if side == "lower":
        n_star, minimize, Omega = gap.lower_band, False, +1
    elif side == "upper":
        n_star, minimize, Omega = gap.upper_band, True, -1
    else:
        raise ValueError("side must be 'lower' or 'upper'")
    col = bs.omegas[:, n_star - 1]
    i0 = col.argmin() if minimize else col.argmax()
    k_ref, w_star = _refine_extremum(solver, n_star, bs.kpoints[i0], minimize,
                                     h0=_grid_spacing(bs), tol=refine_tol)
    k_ref = lattice.reduce_to_bz(k_ref)
    level = _orbit(lattice, k_ref, orbit_tol)
    # per-point verification: edge consistency + simplicity
    margins, hessians, kept = [], [], []
    for kj in level:
        vals = solver(kj)
        wj = vals[n_star - 1]
        if abs(wj - w_star) > max(edge_tol, 10 * refine_tol) * max(1.0, abs(w_star)):
            raise ValueError(
                f"level-set candidate {kj} misses omega* by {abs(wj - w_star):.3e}")
        margin = _solver_margin(vals, n_star)
        if margin <= gap_tol_rel * max(1.0, w_star**2):
            raise ValueError(
                f"eigenvalue at level-set point {kj} is not simple "
                f"(margin {margin:.3e}); geometric simplicity is required")
        H = hessian(solver, n_star, kj, h=hessian_h)
        margins.append(margin)
        hessians.append(H)
        kept.append(kj)
    edge = BandEdge(float(w_star), Omega, n_star, np.array(kept),
                    np.array(hessians), np.array(margins))
    edge.definiteness()  # raises on indefinite/degenerate Hessians
    return edge


def _solver_margin(vals, band: int) -> float:
    w2 = vals[band - 1] ** 2
    neighbors = []
    if band >= 2:
        neighbors.append(abs(w2 - vals[band - 2] ** 2))
    if band < len(vals):
        neighbors.append(abs(w2 - vals[band] ** 2))
    return float(min(neighbors)) if neighbors else np.inf


def locate_edge(medium: PeriodicScalarField, kappa: float, cutoff,
                bs: BandStructure, gap: Gap, side: str, **kw) -> BandEdge:
    """Locate and refine one gap edge: omega*, Omega, n*, level set, Hessians.

    side="lower": edge = top of band `gap.lower_band` (Omega = +1).
    side="upper": edge = bottom of band `gap.upper_band` (Omega = -1).
    """
    n_star = gap.lower_band if side == "lower" else gap.upper_band
    solver = band_solver(medium, kappa, cutoff, n_star + 1)
    return locate_edge_solver(medium.lattice, solver, bs, gap, side, **kw)


def locate_floor_edge(medium: PeriodicScalarField, kappa: float, cutoff,
                      bs: BandStructure, refine_tol: float = 1e-8,
                      **kw) -> BandEdge:
    """Bottom-of-spectrum edge: minimum of band 1 (semi-infinite gap below).

    omega* = min_k omega_1(k), Omega = -1 (omega* - eps^2 lies outside the
    spectrum).  Same refinement, simplicity and Hessian checks as
    `locate_edge`.
    """
    gap = Gap(0.0, float(bs.omegas[:, 0].min()), 0, 1)
    return locate_edge(medium, kappa, cutoff, bs, gap, side="upper",
                       refine_tol=refine_tol, **kw)


def _grid_spacing(bs: BandStructure) -> float:
    ks = bs.kpoints
    d = np.linalg.norm(ks[None, :, :] - ks[:, None, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(np.median(d.min(axis=1)))


# ---------------------------------------------------------------------------
# Hessians
# ---------------------------------------------------------------------------

def hessian(solver, band: int, k0, h: float = 1e-3, richardson_tol: float = 1e-4,
            max_retries: int = 3) -> np.ndarray:
    """Central-difference Hessian of omega_band at k0 with a Richardson check.

    The 9-point stencil second differences at steps h and h/2 must agree to
    `richardson_tol` relative; on disagreement the step is halved and the
    estimate retried.  Band crossings inside the stencil raise.
    """
    k0 = np.asarray(k0, dtype=float)

    def stencil(hh):
        def w(i, j):
            vals = solver(k0 + np.array([i, j]) * hh)
            _check_crossing(vals, band, k0)
            return vals[band - 1]
        w0 = w(0, 0)
        hxx = (w(1, 0) - 2 * w0 + w(-1, 0)) / hh**2
        hyy = (w(0, 1) - 2 * w0 + w(0, -1)) / hh**2
        hxy = (w(1, 1) - w(1, -1) - w(-1, 1) + w(-1, -1)) / (4 * hh**2)
        return np.array([[hxx, hxy], [hxy, hyy]])

    for _ in range(max_retries):
        Hh = stencil(h)
        Hh2 = stencil(h / 2)
        scale = max(np.abs(Hh2).max(), 1e-12)
        if np.abs(Hh - Hh2).max() / scale < richardson_tol:
            # Richardson extrapolation of the O(h^2) error
            return (4.0 * Hh2 - Hh) / 3.0
        h *= 0.5
    raise RuntimeError(
        f"Hessian stencils at h and h/2 disagree beyond {richardson_tol:.1e} "
        f"after {max_retries} step reductions")


def _check_crossing(vals, band, k0):
    if band >= 2 and vals[band - 1] - vals[band - 2] < 1e-12:
        raise RuntimeError(f"band crossing below band {band} inside the stencil at {k0}")
    if band < len(vals) and vals[band] - vals[band - 1] < 1e-12:
        raise RuntimeError(f"band crossing above band {band} inside the stencil at {k0}")


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

def lipschitz_probe(bs: BandStructure) -> np.ndarray:
    """Per-band max |omega_n^2(k) - omega_n^2(k')| / |k - k'| over neighbors."""
    ks = bs.kpoints
    d = np.linalg.norm(ks[None, :, :] - ks[:, None, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    spacing = d.min() * (1.0 + 1e-9)
    out = np.zeros(bs.n_bands)
    pairs = np.argwhere((d <= spacing * 1.0001) & np.isfinite(d))
    w2 = bs.omegas**2
    for i, j in pairs:
        if i < j:
            quot = np.abs(w2[i] - w2[j]) / d[i, j]
            out = np.maximum(out, quot)
    return out


def simplicity_fraction(bs: BandStructure, band: int, gap_tol_rel: float = 1e-6) -> float:
    """Fraction of sampled k at which band `band` is simple by margin."""
    w2 = bs.omegas**2
    n = band - 1
    margins = np.full(len(w2), np.inf)
    if n > 0:
        margins = np.minimum(margins, np.abs(w2[:, n] - w2[:, n - 1]))
    if n + 1 < bs.n_bands:
        margins = np.minimum(margins, np.abs(w2[:, n + 1] - w2[:, n]))
    tol = gap_tol_rel * np.maximum(1.0, w2[:, n])
    return float(np.mean(margins > tol))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_band_csv(bs: BandStructure, path) -> None:
    path = Path(path)
    arc = bs.arclength
    if arc is None:
        seg = np.linalg.norm(np.diff(bs.kpoints, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k_index", "k1", "k2", "arclength"]
                   + [f"omega_{n}" for n in range(1, bs.n_bands + 1)])
        for i, (k, om) in enumerate(zip(bs.kpoints, bs.omegas)):
            w.writerow([i, repr(float(k[0])), repr(float(k[1])), repr(float(arc[i]))]
                       + [repr(float(x)) for x in om])


def save_edge_json(edge: BandEdge, path) -> None:
    doc = {
        "omega_star": edge.omega_star,
        "Omega": edge.Omega,
        "n_star": edge.n_star,
        "N": edge.N,
        "kpoints": edge.kpoints.tolist(),
        "hessians": edge.hessians.tolist(),
        "simple_margins": edge.simple_margins.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_edge_json(path) -> BandEdge:
    doc = json.loads(Path(path).read_text())
    return BandEdge(doc["omega_star"], doc["Omega"], doc["n_star"],
                    np.array(doc["kpoints"]), np.array(doc["hessians"]),
                    np.array(doc["simple_margins"]))
