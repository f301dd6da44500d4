import numpy as np
import pytest

from spinbath.bath_gen import (
    BathConfiguration,
    FieldOrientation,
    HyperfineTable,
    IsotropicEnvelope,
    LatticeSpec,
    SeedStream,
    bath_from_site_table,
    child_seed,
    diamond_sites,
    dipolar_coupling,
    dipolar_matrix,
    generate_bath,
    site_table,
)
from spinbath.common import SI_LATTICE_CONSTANT
from spinbath.errors import BathGenerationError, CoincidentSitesError, HyperfineTableError

NN_DISTANCE = SI_LATTICE_CONSTANT * np.sqrt(3) / 4


@pytest.fixture
def small_lattice():
    return LatticeSpec(cutoff_radius=1.5e-9)


@pytest.fixture
def orientation_110():
    return FieldOrientation.parse("110")


class TestSeeds:
    """Tests for the seed splitting."""

    def test_deterministic(self):
        assert child_seed(42, 3, SeedStream.PLACEMENT) == child_seed(42, 3, SeedStream.PLACEMENT)

    def test_streams_and_indices_differ(self):
        seeds = {child_seed(42, k, stream) for k in range(10) for stream in SeedStream}
        assert len(seeds) == 20


class TestDiamondLattice:
    """Tests for the lattice site enumeration."""

    def test_origin_excluded(self, small_lattice):
        sites = diamond_sites(small_lattice)
        assert np.all(np.linalg.norm(sites, axis=1) > 0)

    def test_four_nearest_neighbours(self, small_lattice):
        radius = np.linalg.norm(diamond_sites(small_lattice), axis=1)
        assert radius.min() == pytest.approx(NN_DISTANCE)
        assert np.sum(np.isclose(radius, NN_DISTANCE)) == 4

    def test_within_cutoff(self, small_lattice):
        assert np.all(np.linalg.norm(diamond_sites(small_lattice), axis=1) <= small_lattice.cutoff_radius)

    def test_no_site_within_tiny_cutoff(self):
        with pytest.raises(BathGenerationError):
            generate_bath(LatticeSpec(cutoff_radius=0.1e-9), 0, FieldOrientation.parse("001"))


class TestFieldOrientation:
    """Tests for the orientation parser."""

    def test_named_axes_normalized(self):
        np.testing.assert_allclose(FieldOrientation.parse("111").vector, np.ones(3) / np.sqrt(3))

    def test_theta_end_points(self):
        np.testing.assert_allclose(FieldOrientation.from_theta(0.0).vector, [0, 0, 1], atol=1e-15)
        np.testing.assert_allclose(FieldOrientation.from_theta(90.0).vector, FieldOrientation.parse("110").vector,
                                   atol=1e-15)

    def test_vector(self):
        np.testing.assert_allclose(FieldOrientation.parse("vec:-2,4,1").vector, np.array([-2, 4, 1]) / np.sqrt(21))

    @pytest.mark.parametrize("text", ["100x", "vec:1,2", "theta:abc"])
    def test_invalid(self, text):
        with pytest.raises(ValueError):
            FieldOrientation.parse(text)


class TestDipolarCoupling:
    """Tests for the secular dipolar coupling."""

    def test_magic_angle_vanishes(self):
        orientation = FieldOrientation.parse("001")
        assert dipolar_coupling(np.zeros(3), np.ones(3) * 1e-10, orientation) == pytest.approx(0.0, abs=1e-12)

    def test_inverse_cube(self):
        orientation = FieldOrientation.parse("001")
        near = dipolar_coupling(np.zeros(3), np.array([0, 0, 0.5e-9]), orientation)
        far = dipolar_coupling(np.zeros(3), np.array([0, 0, 1.0e-9]), orientation)
        assert near / far == pytest.approx(8.0)

    def test_matrix_matches_pairwise(self, small_lattice, orientation_110):
        positions = diamond_sites(small_lattice)[:6]
        D = dipolar_matrix(positions, orientation_110)
        np.testing.assert_allclose(D, D.T)
        assert np.all(np.diag(D) == 0)
        assert D[1, 4] == pytest.approx(dipolar_coupling(positions[1], positions[4], orientation_110), rel=1e-12)

    def test_coincident_sites(self, orientation_110):
        with pytest.raises(CoincidentSitesError):
            dipolar_matrix(np.array([[1e-10, 0, 0], [1e-10, 0, 0]]), orientation_110)


class TestGenerateBath:
    """Tests for random bath placement."""

    def test_same_seed_same_bath(self, small_lattice, orientation_110):
        a = generate_bath(small_lattice, 7, orientation_110)
        b = generate_bath(small_lattice, 7, orientation_110)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.A, b.A)

    def test_different_seeds_differ(self, orientation_110):
        spec = LatticeSpec(cutoff_radius=3e-9)
        a = generate_bath(spec, 1, orientation_110)
        b = generate_bath(spec, 2, orientation_110)
        assert a.n_spins != b.n_spins or not np.array_equal(a.positions, b.positions)

    def test_full_abundance_occupies_every_site(self, small_lattice, orientation_110):
        spec = LatticeSpec(cutoff_radius=small_lattice.cutoff_radius, abundance=1.0)
        bath = generate_bath(spec, 0, orientation_110)
        assert bath.n_spins == len(diamond_sites(spec))

    def test_abundance(self, orientation_110):
        spec = LatticeSpec(cutoff_radius=4.5e-9)
        n_sites = len(diamond_sites(spec))
        counts = [generate_bath(spec, seed, orientation_110).n_spins for seed in range(5)]
        expected = n_sites * spec.abundance
        assert abs(np.mean(counts) - expected) < 5 * np.sqrt(expected * (1 - spec.abundance) / 5)

    def test_abundance_over_many_seeds(self, orientation_110):
        """Test the mean occupied count over 200 seeds against the binomial spread at a 5 nm cutoff."""
        spec = LatticeSpec(cutoff_radius=5e-9)
        n_sites = len(diamond_sites(spec))
        counts = np.array([generate_bath(spec, seed, orientation_110).n_spins for seed in range(200)])
        expected = n_sites * spec.abundance
        sigma = np.sqrt(n_sites * spec.abundance * (1 - spec.abundance) / len(counts))
        assert abs(counts.mean() - expected) < 3 * sigma

    def test_envelope_hyperfine(self, small_lattice, orientation_110):
        envelope = IsotropicEnvelope(A_max=2 * np.pi * 1e6, r_B=1.5e-9)
        bath = generate_bath(LatticeSpec(cutoff_radius=1.0e-9, abundance=1.0), 0, orientation_110, envelope)
        r = np.linalg.norm(bath.positions, axis=1)
        np.testing.assert_allclose(bath.A, 2 * np.pi * 1e6 * np.exp(-2 * r / 1.5e-9))

    def test_with_orientation_keeps_placement(self, small_lattice, orientation_110):
        bath = generate_bath(small_lattice, 3, orientation_110)
        rotated = bath.with_orientation(FieldOrientation.parse("001"))
        np.testing.assert_array_equal(rotated.positions, bath.positions)
        if bath.n_spins > 1:
            assert not np.allclose(rotated.D, bath.D)


class TestSiteTables:
    """Tests for hyperfine tables and site lists."""

    @pytest.fixture
    def full_bath(self, orientation_110):
        return generate_bath(LatticeSpec(cutoff_radius=0.8e-9, abundance=1.0), 0, orientation_110)

    def test_hyperfine_table_lookup(self, full_bath, orientation_110, tmp_path):
        table = site_table(full_bath)
        table["A_kHz"] = np.arange(len(table), dtype=np.float64) + 1.0
        filepath = tmp_path / "hyperfine.csv"
        table.to_csv(filepath, index=False)

        bath = generate_bath(LatticeSpec(cutoff_radius=0.8e-9, abundance=1.0), 0, orientation_110,
                             HyperfineTable(filepath))
        np.testing.assert_allclose(bath.A, 2 * np.pi * 1e3 * table["A_kHz"].to_numpy())

    def test_hyperfine_table_missing_site(self, full_bath, orientation_110, tmp_path):
        filepath = tmp_path / "partial.csv"
        site_table(full_bath).iloc[:3].to_csv(filepath, index=False)
        with pytest.raises(HyperfineTableError):
            generate_bath(LatticeSpec(cutoff_radius=0.8e-9, abundance=1.0), 0, orientation_110,
                          HyperfineTable(filepath))

    def test_bath_from_site_table(self, full_bath, orientation_110, tmp_path):
        filepath = tmp_path / "bath.csv"
        site_table(full_bath).to_csv(filepath, index=False)
        rebuilt = bath_from_site_table(filepath, orientation_110)
        np.testing.assert_allclose(rebuilt.positions, full_bath.positions, rtol=1e-12)
        np.testing.assert_allclose(rebuilt.A, full_bath.A, rtol=1e-12)

    def test_mismatched_lengths(self, orientation_110):
        with pytest.raises(ValueError):
            BathConfiguration(seed=0, positions=np.zeros((2, 3)), A=np.zeros(3), orientation=orientation_110)
