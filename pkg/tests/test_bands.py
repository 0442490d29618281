import numpy as np
import pytest

from gapsol.lattice import BravaisLattice, KPath
from gapsol import medium as med
from gapsol import bands


def square_2pi():
    return BravaisLattice.square(2 * np.pi)


def cosine_eps(n=48):
    return med.cosine_medium(square_2pi(), base=2.0, amp=1.0, n=n)


def homogeneous_omegas(lattice, k, kappa, n, cutoff=4):
    """Closed form: sorted multiset of sqrt(|k+K|^2 + kappa^2)."""
    kvecs, _ = lattice.reciprocal_vectors(cutoff)
    w = np.sqrt(np.sum((kvecs + np.asarray(k)) ** 2, axis=1) + kappa**2)
    return np.sort(np.repeat(w, 2))[:n]


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def test_sweep_homogeneous_closed_form():
    lat = square_2pi()
    eps = med.constant_field(lat, 1.0, n=16)
    path = KPath.through(lat, ["Gamma", "X"], [10])
    ks = path.kpoints()
    bs = bands.sweep(eps, 1.0, ks, 6, 3, kind="path", arclength=path.arclength())
    for k, om in zip(bs.kpoints, bs.omegas):
        expect = homogeneous_omegas(lat, k, 1.0, 6, cutoff=3)
        assert np.max(np.abs(om - expect)) < 1e-10 * expect.max()


def test_sweep_deterministic_and_threaded():
    eps = cosine_eps(32)
    ks = bands.bz_grid(eps.lattice, 3)
    bs1 = bands.sweep(eps, 1.0, ks, 3, 2, kind="grid")
    bs2 = bands.sweep(eps, 1.0, ks, 3, 2, kind="grid", threads=4)
    assert np.array_equal(bs1.omegas, bs2.omegas)


def test_sweep_cosine_vs_oracle_on_grid():
    import oracles
    eps = cosine_eps(48)
    ks = bands.bz_grid(eps.lattice, 3)
    bs = bands.sweep(eps, 1.0, ks, 2, 2, kind="grid")
    for k, om in zip(bs.kpoints, bs.omegas):
        oracle = np.sqrt(np.clip(
            oracles.dense_h_oracle(eps.values, eps.lattice, k, 1.0, 2, 2), 0, None))
        assert np.max(np.abs(om - oracle)) < 1e-10 * max(1.0, oracle.max())


def test_band_evenness_on_symmetric_grid():
    eps = cosine_eps(32)
    ks = bands.bz_grid(eps.lattice, 5)
    bs = bands.sweep(eps, 1.0, ks, 4, 2, kind="grid")
    lookup = {tuple(np.round(k, 10)): om for k, om in zip(bs.kpoints, bs.omegas)}
    for k, om in zip(bs.kpoints, bs.omegas):
        km = tuple(np.round(eps.lattice.reduce_to_bz(-k), 10))
        assert km in lookup
        assert np.max(np.abs(lookup[km] - om)) < 1e-8 * max(1.0, om.max())


def test_sweep_rejects_empty_kset():
    with pytest.raises(ValueError):
        bands.sweep(cosine_eps(16), 1.0, np.zeros((0, 2)), 2, 1)


# ---------------------------------------------------------------------------
# gaps
# ---------------------------------------------------------------------------

def test_find_gaps_homogeneous_empty():
    lat = square_2pi()
    eps = med.constant_field(lat, 1.0, n=16)
    ks = bands.bz_grid(lat, 7)
    bs = bands.sweep(eps, 1.0, ks, 6, 3, kind="grid")
    assert bands.find_gaps(bs) == []


def test_find_gaps_synthetic_two_band():
    lat = square_2pi()
    ks = bands.bz_grid(lat, 5)
    w1 = 0.8 + 0.2 * np.cos(ks[:, 0])          # band 1 stays <= 1
    w2 = 2.2 + 0.2 * np.sin(ks[:, 1])          # band 2 stays >= 2
    bs = bands.BandStructure(lat, ks, np.column_stack([w1, w2]), kind="grid")
    gaps = bands.find_gaps(bs)
    assert len(gaps) == 1
    g = gaps[0]
    assert (g.lower_band, g.upper_band) == (1, 2)
    assert abs(g.lo - w1.max()) < 1e-14
    assert abs(g.hi - w2.min()) < 1e-14


def test_find_gaps_requires_grid():
    lat = square_2pi()
    bs = bands.BandStructure(lat, np.zeros((3, 2)), np.ones((3, 2)), kind="path")
    with pytest.raises(ValueError):
        bands.find_gaps(bs)


# ---------------------------------------------------------------------------
# edges
# ---------------------------------------------------------------------------

def synthetic_cos_solver(k):
    # two synthetic bands: 2 + cos k1 + cos k2 (max 4 at Gamma) below a flat 9
    k = np.asarray(k, dtype=float)
    return np.array([2.0 + np.cos(k[0]) + np.cos(k[1]), 9.0])


def test_locate_edge_synthetic_maximum_at_gamma():
    lat = BravaisLattice.square(2 * np.pi)  # BZ = [-1/2, 1/2)^2 in units of 1
    ks = bands.bz_grid(lat, 9)
    omegas = np.array([synthetic_cos_solver(k) for k in ks])
    bs = bands.BandStructure(lat, ks, omegas, kind="grid")
    gaps = bands.find_gaps(bs)
    assert len(gaps) == 1
    edge = bands.locate_edge_solver(lat, synthetic_cos_solver, bs, gaps[0], "lower")
    assert edge.N == 1
    assert np.allclose(edge.kpoints[0], [0.0, 0.0], atol=1e-7)
    assert abs(edge.omega_star - 4.0) < 1e-8
    assert edge.Omega == +1
    assert np.allclose(edge.hessians[0], -np.eye(2), atol=1e-5)
    assert edge.definiteness() == -1


def test_locate_floor_edge_cosine_medium():
    eps = cosine_eps(48)
    ks = bands.bz_grid(eps.lattice, 7)
    bs = bands.sweep(eps, 1.0, ks, 2, 3, kind="grid")
    edge = bands.locate_floor_edge(eps, 1.0, 3, bs)
    assert edge.N == 1
    assert np.allclose(edge.kpoints[0], [0, 0], atol=1e-6)
    assert edge.Omega == -1
    assert edge.definiteness() == +1
    assert abs(edge.omega_star - bs.omegas[:, 0].min()) < 1e-6
    # Omega correctness: omega* - 0.05^2 outside the sampled spectrum,
    # omega* + 0.05^2 inside the band's numerical range
    tau = 0.05**2
    assert edge.omega_star - tau < bs.omegas[:, 0].min()
    lo, hi = bs.band_range(1)
    assert lo < edge.omega_star + tau < hi


def test_locate_edge_orbit_n6_hexagonal_synthetic():
    # C6v-invariant synthetic band built from the first two neighbor stars;
    # its minimum sits in the interior of the Gamma-M line, so the level set
    # is a six-point orbit
    lat = BravaisLattice.hexagonal(1.0)
    a1, a2 = lat.a1, lat.a2

    def solver(k):
        k = np.asarray(k, dtype=float)
        c1 = np.cos(k @ a1) + np.cos(k @ a2) + np.cos(k @ (a1 - a2))
        c2 = (np.cos(k @ (a1 + a2)) + np.cos(k @ (2 * a1 - a2))
              + np.cos(k @ (2 * a2 - a1)))
        return np.array([5.0 - c1 / 3.0 + 0.8 * c2 / 3.0, 20.0])

    ks = bands.bz_grid(lat, 13)
    omegas = np.array([solver(k) for k in ks])
    bs = bands.BandStructure(lat, ks, omegas, kind="grid")
    gap = bands.Gap(0.0, float(omegas[:, 0].min()), 0, 1)  # spectral floor
    edge = bands.locate_edge_solver(lat, solver, bs, gap, "upper",
                                    hessian_h=1e-4)
    assert edge.N == 6
    assert edge.Omega == -1
    assert edge.definiteness() == +1
    # orbit closure: the point group permutes the level set
    for O in lat.point_group():
        for kj in edge.kpoints:
            img = lat.reduce_to_bz(O @ kj)
            d = np.linalg.norm(edge.kpoints - img[None, :], axis=1).min()
            assert d < 1e-5
    # the six points lie on Gamma-M lines strictly between the endpoints
    radii = np.linalg.norm(edge.kpoints, axis=1)
    bmin = min(np.linalg.norm(lat.b1), np.linalg.norm(lat.b2))
    assert np.all(radii > 0.05 * bmin)
    assert np.all(radii < 0.5 * bmin)


def test_hessian_homogeneous_closed_form():
    kappa = 2.0

    def solver(k):
        k = np.asarray(k, dtype=float)
        return np.array([np.sqrt(k @ k + kappa**2)])

    H = bands.hessian(solver, 1, (0.0, 0.0), h=1e-3)
    assert np.allclose(H, np.eye(2) / kappa, atol=1e-6)


def test_hessian_synthetic_minus_identity():
    H = bands.hessian(lambda k: np.array([2 + np.cos(k[0]) + np.cos(k[1])]),
                      1, (0.0, 0.0), h=1e-3)
    assert np.allclose(H, -np.eye(2), atol=1e-6)


def test_hessian_two_stencil_oracle():
    # independent 5-point-per-axis second difference as oracle
    eps = cosine_eps(48)
    solver = bands.band_solver(eps, 1.0, 3, 2)
    k0 = np.zeros(2)
    H = bands.hessian(solver, 1, k0, h=2e-3)

    def w(i, j, hh=1e-3):
        return solver(k0 + np.array([i, j]) * hh)[0]

    # 5-point stencil: f'' = (-f(2h) + 16 f(h) - 30 f(0) + 16 f(-h) - f(-2h))/(12 h^2)
    hh = 1e-3
    hxx = (-w(2, 0) + 16 * w(1, 0) - 30 * w(0, 0) + 16 * w(-1, 0) - w(-2, 0)) / (12 * hh**2)
    hyy = (-w(0, 2) + 16 * w(0, 1) - 30 * w(0, 0) + 16 * w(0, -1) - w(0, -2)) / (12 * hh**2)
    assert abs(H[0, 0] - hxx) < 1e-5 * max(1.0, abs(hxx))
    assert abs(H[1, 1] - hyy) < 1e-5 * max(1.0, abs(hyy))


def test_hessian_rejects_crossing():
    def solver(k):
        # two bands crossing at k1 = 0
        return np.sort([1.0 + k[0], 1.0 - k[0]])

    with pytest.raises(RuntimeError):
        bands.hessian(solver, 1, (0.0, 0.0), h=1e-2)


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

def test_lipschitz_constant_band():
    lat = square_2pi()
    ks = bands.bz_grid(lat, 5)
    bs = bands.BandStructure(lat, ks, np.full((len(ks), 1), 3.3), kind="grid")
    assert bands.lipschitz_probe(bs)[0] == 0.0


def test_lipschitz_homogeneous_bound():
    lat = square_2pi()
    eps = med.constant_field(lat, 1.0, n=16)
    ks = bands.bz_grid(lat, 9)
    bs = bands.sweep(eps, 1.0, ks, 1, 2, kind="grid")
    # |grad omega_1^2| = 2|k| <= diameter of B; allow grid slack
    quot = bands.lipschitz_probe(bs)[0]
    diam = np.linalg.norm(lat.b1 + lat.b2)
    assert quot <= diam + 0.1


def test_lipschitz_stable_under_refinement():
    eps = cosine_eps(32)
    quots = []
    for n in (7, 13):
        ks = bands.bz_grid(eps.lattice, n)
        bs = bands.sweep(eps, 1.0, ks, 2, 2, kind="grid")
        quots.append(bands.lipschitz_probe(bs))
    ratio = quots[1] / np.maximum(quots[0], 1e-12)
    assert np.all(ratio < 1.5)


def test_simplicity_fraction_reported():
    eps = cosine_eps(32)
    ks = bands.bz_grid(eps.lattice, 5)
    bs = bands.sweep(eps, 1.0, ks, 3, 2, kind="grid")
    frac = bands.simplicity_fraction(bs, 1)
    assert 0.0 <= frac <= 1.0
    assert frac > 0.9  # band 1 of the cosine medium is simple on this grid


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_band_csv_and_edge_json_roundtrip(tmp_path):
    eps = cosine_eps(32)
    lat = eps.lattice
    path = KPath.through(lat, ["Gamma", "X"], [4])
    bs = bands.sweep(eps, 1.0, path.kpoints(), 2, 2, kind="path",
                     arclength=path.arclength())
    csv_path = tmp_path / "bands.csv"
    bands.save_band_csv(bs, csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0].split(",")[:4] == ["k_index", "k1", "k2", "arclength"]
    assert len(lines) == len(bs.kpoints) + 1

    ks = bands.bz_grid(lat, 5)
    bsg = bands.sweep(eps, 1.0, ks, 2, 2, kind="grid")
    edge = bands.locate_floor_edge(eps, 1.0, 2, bsg)
    jpath = tmp_path / "edge.json"
    bands.save_edge_json(edge, jpath)
    back = bands.load_edge_json(jpath)
    assert back.omega_star == edge.omega_star
    assert back.N == edge.N
    assert np.array_equal(back.hessians, edge.hessians)
