import math

import numpy as np
import pytest

from demest.dem import Dem, DemEvent, EventMask, reduce_dem
from demest.errors import ArgumentError, CapacityError, DimensionError
from demest.histories import DetectorHistories
from demest.rng import derived_generator
from demest.sampling import (
    Distribution,
    event_matrix,
    exact_distribution,
    histories_from_occurrences,
    make_random_sparse_dem,
    make_uniform_depolarizing_dem,
    sample_histories,
    sample_occurrences,
)


def _brute_force_distribution(dem: Dem) -> np.ndarray:
    """Sum over every subset of events that occurs."""
    n, events = dem.n_detectors, dem.events
    weights = np.zeros(1 << n)
    for subset in range(1 << len(events)):
        x, prob = 0, 1.0
        for k, ev in enumerate(events):
            if (subset >> k) & 1:
                x ^= ev.mask.bits
                prob *= ev.probability
            else:
                prob *= 1.0 - ev.probability
        weights[x] += prob
    return weights


def _reversed(mask: EventMask) -> EventMask:
    return EventMask.from_string(mask.to_string()[::-1])


class TestExactDistribution:
    def test_r2_values(self, r2_dem):
        dist = exact_distribution(r2_dem)
        # 00 occurs with no event or with all three
        assert dist.probability("00") == pytest.approx(0.9 * 0.8 * 0.95 + 0.1 * 0.2 * 0.05)
        assert math.fsum(dist.weights) == pytest.approx(1.0)

    def test_matches_brute_force(self):
        for seed in range(5):
            dem = make_random_sparse_dem(5, 6, 3, 0.01, 0.3, seed)
            np.testing.assert_allclose(
                exact_distribution(dem).weights, _brute_force_distribution(dem), atol=1e-14
            )

    def test_empty_dem_is_delta(self):
        dist = exact_distribution(Dem(3))
        assert dist.probability(EventMask.zero(3)) == 1.0

    def test_cap(self):
        with pytest.raises(CapacityError):
            exact_distribution(Dem(25))

    def test_independent_of_event_order(self):
        # reversing detector labels re-sorts the events, so they fold in another order
        reordered = False
        for seed in range(5):
            dem = make_random_sparse_dem(6, 8, 4, 0.01, 0.3, seed)
            flip = Dem(6, tuple(DemEvent(_reversed(ev.mask), ev.probability) for ev in dem))
            reordered |= [_reversed(ev.mask) for ev in dem] != [ev.mask for ev in flip]
            dist, flipped = exact_distribution(dem), exact_distribution(flip)
            for bits in range(1 << 6):
                x = EventMask(6, bits)
                assert flipped.probability(_reversed(x)) == pytest.approx(dist.probability(x), abs=1e-14)
        assert reordered

    @pytest.mark.parametrize("n", [2, 3, 5, 8, 10])
    def test_uniform_all_zero_probability(self, n):
        eps = 0.3
        dist = exact_distribution(make_uniform_depolarizing_dem(n, eps))
        size = 1 << n
        assert dist.probability(EventMask.zero(n)) == pytest.approx((1 - eps / size) ** (size - 1), abs=1e-12)

    def test_uniform_matches_brute_force(self):
        dem = make_uniform_depolarizing_dem(3, 0.4)
        np.testing.assert_allclose(exact_distribution(dem).weights, _brute_force_distribution(dem), atol=1e-14)

    def test_distribution_validation(self):
        with pytest.raises(DimensionError):
            Distribution(2, np.ones(3) / 3)
        with pytest.raises(ArgumentError):
            Distribution(1, np.array([0.5, 0.6]))
        with pytest.raises(ArgumentError):
            Distribution(1, np.array([0.5, 0.5 + 1e-10]))
        Distribution(1, np.array([0.5, 0.5 + 1e-15]))


class TestMarginals:
    def test_marginal_matches_reduced_dem(self):
        rng = derived_generator(2024)
        for trial in range(50):
            n = int(rng.integers(2, 11))
            n_events = int(rng.integers(1, min(15, (1 << n) - 1) + 1))
            dem = make_random_sparse_dem(n, n_events, n, 0.001, 0.3, seed=trial)
            size = int(rng.integers(1, n + 1))
            keep = sorted(int(i) for i in rng.choice(n, size=size, replace=False))
            lhs = exact_distribution(dem).marginal(keep)
            rhs = exact_distribution(reduce_dem(dem, keep))
            assert lhs.total_variation(rhs) <= 1e-12

    def test_marginal_bit_order(self):
        dem = Dem.from_strings({"100": 0.3})
        marg = exact_distribution(dem).marginal([0, 2])
        assert marg.probability("10") == pytest.approx(0.3)
        assert marg.probability("01") == 0.0

    def test_invalid_keep(self, r2_dem):
        dist = exact_distribution(r2_dem)
        with pytest.raises(ArgumentError):
            dist.marginal([1, 0])
        with pytest.raises(DimensionError):
            dist.marginal([0, 5])


class TestSampler:
    def test_deterministic(self, r2_dem):
        a = sample_histories(r2_dem, 5000, seed=3)
        b = sample_histories(r2_dem, 5000, seed=3)
        c = sample_histories(r2_dem, 5000, seed=4)
        assert a == b
        assert a != c

    def test_independent_of_worker_count(self):
        dem = make_random_sparse_dem(12, 20, 3, 0.001, 0.1, seed=9)
        one = sample_histories(dem, 150_000, seed=1, workers=1)
        many = sample_histories(dem, 150_000, seed=1, workers=4)
        assert one == many

    def test_empty_dem_gives_zeros(self):
        data = sample_histories(Dem(4), 3, seed=0)
        assert data.to_strings() == ["0000"] * 3

    def test_zero_shots(self, r2_dem):
        assert sample_histories(r2_dem, 0, seed=0).n_shots == 0
        with pytest.raises(ArgumentError):
            sample_histories(r2_dem, -1, seed=0)

    def test_frequencies_match_distribution(self, r2_dem, r2_data):
        expected = exact_distribution(r2_dem).weights
        k = r2_data.n_shots
        counts = r2_data.histogram()
        sigma = np.sqrt(k * expected * (1 - expected))
        assert np.all(np.abs(counts - k * expected) <= 5 * sigma)

    def test_dense_events(self):
        dem = Dem.from_strings({"10": 0.3, "01": 0.45})
        data = sample_histories(dem, 100_000, seed=5)
        freq = data.to_bits().mean(axis=0)
        np.testing.assert_allclose(freq, [0.3, 0.45], atol=0.01)


class TestOccurrences:
    def test_same_draws_as_sampler(self):
        dem = make_random_sparse_dem(10, 12, 3, 0.01, 0.2, seed=6)
        q = sample_occurrences(dem, 70_000, seed=8)
        direct = sample_histories(dem, 70_000, seed=8)
        assert histories_from_occurrences(dem, q) == direct
        assert histories_from_occurrences(dem, q, method="xor") == direct

    def test_event_matrix(self, r2_dem):
        assert event_matrix(r2_dem).tolist() == [[0, 1], [1, 0], [1, 1]]

    def test_shape_check(self, r2_dem):
        with pytest.raises(DimensionError):
            histories_from_occurrences(r2_dem, np.zeros((4, 2), dtype=bool))
        with pytest.raises(ArgumentError):
            histories_from_occurrences(r2_dem, np.zeros((4, 3), dtype=bool), method="fft")


class TestReferenceFamilies:
    def test_uniform_depolarizing(self):
        dem = make_uniform_depolarizing_dem(4, 0.08)
        assert len(dem) == 15
        assert all(ev.probability == pytest.approx(0.005) for ev in dem)

    def test_uniform_zero_epsilon(self):
        assert len(make_uniform_depolarizing_dem(5, 0.0)) == 0

    def test_uniform_limits(self):
        with pytest.raises(ArgumentError):
            make_uniform_depolarizing_dem(3, -0.1)
        with pytest.raises(CapacityError):
            make_uniform_depolarizing_dem(30, 0.1)

    def test_random_sparse(self):
        dem = make_random_sparse_dem(60, 40, 4, 0.001, 0.02, seed=1)
        assert len(dem) == 40
        assert all(1 <= ev.mask.weight <= 4 for ev in dem)
        assert all(0.001 <= ev.probability <= 0.02 for ev in dem)
        assert dem == make_random_sparse_dem(60, 40, 4, 0.001, 0.02, seed=1)

    def test_random_sparse_dense_request(self):
        dem = make_random_sparse_dem(4, 10, 2, 0.01, 0.1, seed=0)
        assert len(dem) == 10
        assert {ev.mask.weight for ev in dem} == {1, 2}

    def test_random_sparse_infeasible(self):
        with pytest.raises(ArgumentError):
            make_random_sparse_dem(4, 11, 2, 0.01, 0.1, seed=0)
        with pytest.raises(ArgumentError):
            make_random_sparse_dem(4, 3, 5, 0.01, 0.1, seed=0)
        with pytest.raises(ArgumentError):
            make_random_sparse_dem(4, 3, 2, 0.2, 0.1, seed=0)

    def test_no_events(self):
        assert len(make_random_sparse_dem(60, 0, 2, 0.01, 0.1, seed=0)) == 0


class TestEmpiricalDistribution:
    def test_from_histories(self):
        data = DetectorHistories.from_strings(["10", "10", "01", "00"])
        dist = Distribution.from_histories(data)
        assert dist.probability("10") == 0.5
        assert dist.probability("11") == 0.0
