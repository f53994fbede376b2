import numpy as np
import pytest

from revgen.core import ContinuousStates, HybridStates, SpinStates
from revgen.errors import (
    KindMismatchError,
    LatticeTooLargeError,
    ModeOutOfRangeError,
    SingularCovarianceError,
)
from revgen.targets import (
    DoubleWellTarget,
    EnumerationTable,
    GmmTarget,
    IsingTarget,
    OBSERVABLE_CONVENTION,
    all_spin_states,
    compute_mode_normalizers,
    double_well_energy,
    enumerate_ising,
    gmm_log_density,
    index_to_spins,
    ising_energy,
    log_target,
    spins_to_index,
    _gauss_legendre_panels,
)

# Exact reference observables for the L=3 periodic lattice under the pinned
# convention (total <E>, per-site m, C_v = b^2 Var E, chi = b N (<m^2>-<|m|>^2)).
TABLE_L3 = {
    0.2: {"mean_energy": -4.8429, "mean_abs_mag": 0.4600,
          "specific_heat": 1.3672, "susceptibility": 0.1486},
    0.5: {"mean_energy": -15.9091, "mean_abs_mag": 0.926,
          "specific_heat": 4.677, "susceptibility": 0.1334},
}


class TestGmm:
    def test_tail_decay_monotone(self):
        t = GmmTarget()
        radii = np.array([3.0, 5.0, 8.0, 12.0])
        vals = [gmm_log_density(t, np.array([r, r])) for r in radii]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_mode_beats_midpoint(self):
        t = GmmTarget()
        assert gmm_log_density(t, np.array([1.0, 1.0])) > \
            gmm_log_density(t, np.array([0.0, 0.0]))

    def test_grid_mass_is_one(self):
        t = GmmTarget()
        edges = np.linspace(-6, 6, 601)
        centers = 0.5 * (edges[:-1] + edges[1:])
        xx, yy = np.meshgrid(centers, centers, indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
        h = centers[1] - centers[0]
        mass = np.exp(t.log_density(pts)).sum() * h * h
        assert abs(mass - 1.0) < 1e-3

    def test_singular_covariance(self):
        with pytest.raises(SingularCovarianceError):
            GmmTarget(covs=np.array([[[1.0, 1.0], [1.0, 1.0]],
                                     [[0.5, 0.0], [0.0, 0.5]]]))


class TestIsingEnergy:
    def test_all_up(self):
        t = IsingTarget(side=3, beta=1.0)
        s = np.ones((1, 9), dtype=np.int8)
        assert ising_energy(t, s)[0] == -18.0

    def test_single_flip(self):
        t = IsingTarget(side=3, beta=1.0)
        s = np.ones((1, 9), dtype=np.int8)
        s[0, 4] = -1
        assert ising_energy(t, s)[0] == -10.0

    def test_z2_symmetry(self):
        t = IsingTarget(side=3, beta=0.7)
        g = np.random.default_rng(0)
        s = (g.integers(0, 2, size=(100, 9)) * 2 - 1).astype(np.int8)
        np.testing.assert_array_equal(t.energy(s), t.energy(-s))

    def test_bounds(self):
        t = IsingTarget(side=3, beta=1.0, field_h=0.3)
        g = np.random.default_rng(1)
        s = (g.integers(0, 2, size=(1000, 9)) * 2 - 1).astype(np.int8)
        e = t.energy(s)
        bound = 2 * t.coupling * 9 + abs(t.field_h) * 9
        assert np.all(e >= -bound) and np.all(e <= bound)

    def test_roll_cross_check(self):
        # independent route: convolution-style neighbor sums on the 2-d grid
        t = IsingTarget(side=3, beta=1.0)
        g = np.random.default_rng(2)
        s = (g.integers(0, 2, size=(1000, 9)) * 2 - 1).astype(np.int8)
        grids = s.reshape(-1, 3, 3).astype(np.int64)
        via_roll = -(grids * (np.roll(grids, -1, axis=1)
                              + np.roll(grids, -1, axis=2))).sum(axis=(1, 2))
        np.testing.assert_array_equal(t.energy(s), via_roll)


class TestDoubleWell:
    def test_minima(self):
        t = DoubleWellTarget()
        for k, mu in enumerate(t.mus):
            assert double_well_energy(t, np.sqrt(mu), k) == 0.0
            assert double_well_energy(t, -np.sqrt(mu), k) == 0.0

    def test_center_value(self):
        t = DoubleWellTarget()
        assert double_well_energy(t, 0.0, 2) == 625.0

    def test_mode_out_of_range(self):
        with pytest.raises(ModeOutOfRangeError):
            double_well_energy(DoubleWellTarget(), 0.0, 3)

    def test_normalizers_positive(self):
        lz = compute_mode_normalizers(DoubleWellTarget())
        assert np.all(np.isfinite(lz))  # log Z finite <=> Z > 0

    def test_integrand_negligible_at_cutoff(self):
        t = DoubleWellTarget()
        for k, mu in enumerate(t.mus):
            r = t.cutoff(k)
            assert np.exp(-t.energy(np.array([r]), np.array([k]))[0]) < 1e-25

    def test_doubling_range_stable(self):
        t = DoubleWellTarget()
        lz = t.log_z
        for k, mu in enumerate(t.mus):
            f = lambda x: np.exp(-((x * x - mu) ** 2))
            wide = _gauss_legendre_panels(f, -2 * t.cutoff(k), 2 * t.cutoff(k), 4096)
            assert abs(np.log(wide) - lz[k]) < 1e-10

    def test_each_mode_mass(self):
        t = DoubleWellTarget()
        for k in range(t.n_modes):
            r = t.cutoff(k)
            f = lambda x: np.exp(
                t.log_density(x, np.full(x.shape, k, dtype=np.int64))
            )
            mass = _gauss_legendre_panels(f, -r, r, 4096)
            assert abs(mass - 1.0 / t.n_modes) < 1e-8


class TestEnumeration:
    def test_infinite_temperature_uniform(self):
        table = enumerate_ising(IsingTarget(side=3, beta=0.0))
        np.testing.assert_allclose(table.probs, 1.0 / 512, atol=1e-15)

    @pytest.mark.parametrize("beta", [0.2, 0.5])
    def test_reference_observables(self, beta):
        table = enumerate_ising(IsingTarget(side=3, beta=beta))
        for key, val in TABLE_L3[beta].items():
            assert abs(table.observables()[key] - val) < 5e-4, key

    def test_convention_is_unique_match(self):
        # among the candidate conventions, only the pinned one reproduces the
        # reference values at beta = 0.2
        t = IsingTarget(side=3, beta=0.2)
        spins = all_spin_states(9)
        e = t.energy(spins).astype(float)
        w = np.exp(-t.beta * (e - e.min()))
        p = w / w.sum()
        mean_e = p @ e
        var_e = p @ (e - mean_e) ** 2
        m = spins.sum(axis=1) / 9
        m2 = p @ m**2
        abs_m = p @ np.abs(m)
        cv_candidates = {
            "total": t.beta**2 * var_e,
            "per_site": t.beta**2 * var_e / 9,
        }
        chi_candidates = {
            "site_abs": t.beta * 9 * (m2 - abs_m**2),
            "site_raw": t.beta * 9 * m2,
            "no_n": t.beta * (m2 - abs_m**2),
        }
        assert abs(cv_candidates["total"] - 1.3672) < 5e-4
        assert abs(chi_candidates["site_abs"] - 0.1486) < 5e-4
        assert all(abs(v - 1.3672) > 5e-4
                   for k, v in cv_candidates.items() if k != "total")
        assert all(abs(v - 0.1486) > 5e-4
                   for k, v in chi_candidates.items() if k != "site_abs")

    def test_probs_sum_and_flip_symmetry(self):
        table = enumerate_ising(IsingTarget(side=3, beta=0.5))
        assert abs(table.probs.sum() - 1.0) < 1e-12
        flipped = 511 - np.arange(512)  # global flip = bitwise complement
        np.testing.assert_array_equal(table.probs, table.probs[flipped])

    def test_lattice_bound(self):
        with pytest.raises(LatticeTooLargeError):
            enumerate_ising(IsingTarget(side=5, beta=0.2))

    def test_bitmask_round_trip(self):
        g = np.random.default_rng(3)
        s = (g.integers(0, 2, size=(50, 9)) * 2 - 1).astype(np.int8)
        np.testing.assert_array_equal(index_to_spins(spins_to_index(s), 9), s)

    def test_csv_round_trip(self, tmp_path):
        table = enumerate_ising(IsingTarget(side=2, beta=0.3))
        path = tmp_path / "table.csv"
        table.save_csv(path)
        loaded = EnumerationTable.load_csv(path)
        assert loaded.side == 2 and loaded.beta == 0.3
        assert loaded.convention == OBSERVABLE_CONVENTION
        np.testing.assert_allclose(loaded.probs, table.probs, rtol=1e-15)
        np.testing.assert_allclose(loaded.energies, table.energies)
        assert abs(loaded.specific_heat - table.specific_heat) < 1e-12


class TestLogTarget:
    def test_differences_constant_free(self):
        # adding a constant to the energy shifts log_target uniformly, so
        # differences between states are unchanged up to rounding
        t = IsingTarget(side=3, beta=0.4)
        g = np.random.default_rng(4)
        s = SpinStates((g.integers(0, 2, size=(10, 9)) * 2 - 1).astype(np.int8), 3)
        lt = log_target(t, s)
        diffs = lt[:, None] - lt[None, :]
        e = t.energy(s.spins)
        expected = -t.beta * (e[:, None] - e[None, :])
        np.testing.assert_allclose(diffs, expected, atol=1e-12)

    def test_ising_z2(self):
        t = IsingTarget(side=3, beta=0.4)
        g = np.random.default_rng(5)
        raw = (g.integers(0, 2, size=(20, 9)) * 2 - 1).astype(np.int8)
        a = log_target(t, SpinStates(raw, 3))
        b = log_target(t, SpinStates(-raw, 3))
        np.testing.assert_array_equal(a, b)

    def test_double_well_mode_mass(self):
        t = DoubleWellTarget()
        for k in range(3):
            r = t.cutoff(k)
            xs = np.linspace(-r, r, 200001)
            states = HybridStates(xs[:, None], np.full(xs.shape, k), 3)
            mass = np.trapezoid(np.exp(log_target(t, states)), xs)
            assert abs(mass - 1.0 / 3.0) < 1e-6

    def test_kind_mismatch(self):
        with pytest.raises(KindMismatchError):
            log_target(GmmTarget(), SpinStates(np.ones((1, 9), np.int8), 3))
        with pytest.raises(KindMismatchError):
            log_target(IsingTarget(side=3, beta=0.2),
                       ContinuousStates([[0.0, 0.0]]))
