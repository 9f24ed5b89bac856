import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_channel
from nagmcmc.modem import build_constellation
from nagmcmc.softout import SATURATION, compute_llrs, write_llr_dump


def maxlog_oracle(H, y, sigma2, c, prior=None):
    """Brute-force max-log over the whole search space, one bit at a time."""
    n = H.shape[1]
    nb = n * c.bits_per_symbol
    prior = np.zeros(nb) if prior is None else prior
    best = {(k, b): np.inf for k in range(nb) for b in (0, 1)}
    for combo in itertools.product(range(c.order), repeat=n):
        x = c.points[list(combo)]
        bits = np.concatenate([c.bit_labels[j] for j in combo]).astype(np.int64)
        cost = np.sum(np.abs(y - H @ x) ** 2) / sigma2 - 0.5 * np.dot(2 * bits - 1, prior)
        for k in range(nb):
            key = (k, int(bits[k]))
            best[key] = min(best[key], cost)
    return np.array([best[(k, 0)] - best[(k, 1)] for k in range(nb)])


def full_space(H, y, c):
    n = H.shape[1]
    idx = np.array(list(itertools.product(range(c.order), repeat=n)))
    r = y - c.points[idx] @ H.T
    return idx, np.sum(np.abs(r) ** 2, axis=1)


class TestExamples:
    def test_single_sample_saturates(self, qam16):
        idx = np.array([[3, 12]])
        out = compute_llrs(idx, np.array([0.7]), 0.25, qam16)
        bits = np.concatenate([qam16.bit_labels[3], qam16.bit_labels[12]])
        np.testing.assert_array_equal(out.values, np.where(bits == 1, 40.0, -40.0))
        assert out.saturated_mask.all()

    def test_two_samples_one_bit(self, qam4):
        # indices 0 and 1 differ only in the last (imaginary-axis) bit
        a, b = qam4.bit_labels[0], qam4.bit_labels[1]
        k = int(np.flatnonzero(a != b)[0]) + 2
        one, zero = (0, 1) if a[k - 2] == 1 else (1, 0)
        samples = np.array([[0, one], [0, zero]])
        out = compute_llrs(samples, np.array([1.0, 2.0]), 1.0, qam4)
        assert out.values[k] == pytest.approx(1.0)
        assert not out.saturated_mask[k]
        assert out.saturated_mask.sum() == 3

    def test_complex_input(self, qam4):
        pts = qam4.points[np.array([[0, 2]])]
        a = compute_llrs(pts, np.array([1.0]), 1.0, qam4)
        b = compute_llrs(np.array([[0, 2]]), np.array([1.0]), 1.0, qam4)
        np.testing.assert_array_equal(a.values, b.values)


class TestErrors:
    def test_empty(self, qam4):
        with pytest.raises(ValueError, match="non-empty"):
            compute_llrs(np.empty((0, 2), int), np.empty(0), 1.0, qam4)

    def test_sigma(self, qam4):
        with pytest.raises(ValueError):
            compute_llrs(np.zeros((1, 2), int), np.ones(1), 0.0, qam4)

    def test_prior_length(self, qam4):
        with pytest.raises(ValueError):
            compute_llrs(np.zeros((1, 2), int), np.ones(1), 1.0, qam4, prior=np.zeros(3))


class TestOracle:
    @pytest.mark.parametrize("seed", range(5))
    def test_full_space_2x2(self, seed):
        rng = np.random.default_rng(seed)
        c = build_constellation(4)
        H = random_channel(rng, 2, 2)
        y = H @ c.points[rng.integers(0, 4, 2)] + 0.3 * (rng.standard_normal(2) + 1j * rng.standard_normal(2))
        idx, sq = full_space(H, y, c)
        got = compute_llrs(idx, sq, 0.18, c)
        np.testing.assert_allclose(got.values, maxlog_oracle(H, y, 0.18, c), atol=1e-10)
        assert not got.saturated_mask.any()

    def test_full_space_with_prior(self, rng):
        c = build_constellation(4)
        H = random_channel(rng, 2, 2)
        y = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        prior = rng.normal(0, 2, 4)
        idx, sq = full_space(H, y, c)
        got = compute_llrs(idx, sq, 0.5, c, prior=prior)
        np.testing.assert_allclose(got.values, maxlog_oracle(H, y, 0.5, c, prior), atol=1e-10)

    def test_duplicates_do_not_change_result(self, rng):
        c = build_constellation(4)
        H = random_channel(rng, 2, 2)
        y = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        idx, sq = full_space(H, y, c)
        twice = compute_llrs(np.concatenate([idx, idx]), np.concatenate([sq, sq]), 0.5, c)
        np.testing.assert_array_equal(twice.values, compute_llrs(idx, sq, 0.5, c).values)


class TestProperties:
    def test_extrinsic(self, qam4):
        prior = np.array([0.5, -1.0, 2.0, 0.0])
        out = compute_llrs(np.array([[0, 3], [1, 2]]), np.array([1.0, 1.5]), 1.0, qam4, prior=prior)
        np.testing.assert_allclose(out.extrinsic(prior), out.values - prior)

    def test_zero_prior_equals_absent(self, qam16):
        idx = np.array([[0, 5], [7, 5], [9, 1]])
        sq = np.array([1.0, 0.5, 3.0])
        a = compute_llrs(idx, sq, 0.3, qam16)
        b = compute_llrs(idx, sq, 0.3, qam16, prior=np.zeros(8))
        np.testing.assert_array_equal(a.values, b.values)

    @settings(max_examples=60, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        n_samples=st.integers(1, 30),
        sigma2=st.floats(0.01, 5.0),
    )
    def test_sign_and_bound(self, seed, n_samples, sigma2):
        c = build_constellation(16)
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, 16, (n_samples, 3))
        sq = rng.uniform(0, 10, n_samples)
        out = compute_llrs(idx, sq, sigma2, c)
        assert out.values.shape == (12,)
        assert np.all(np.isfinite(out.values))
        assert np.all(np.abs(out.values[out.saturated_mask]) == pytest.approx(SATURATION / sigma2))
        best_bits = c.bit_labels[idx[np.argmin(sq)]].ravel()
        nz = out.values != 0
        np.testing.assert_array_equal((out.values[nz] > 0), best_bits[nz] == 1)

    def test_refinement_keeps_sign(self, rng, qam16):
        idx = rng.integers(0, 16, (5, 4))
        sq = rng.uniform(1, 2, 5)
        base = compute_llrs(idx, sq, 1.0, qam16)
        # more samples with larger costs leave the minimizer in place
        extra = rng.integers(0, 16, (20, 4))
        sup = compute_llrs(np.vstack([idx, extra]), np.concatenate([sq, rng.uniform(3, 5, 20)]), 1.0, qam16)
        sat = base.saturated_mask
        np.testing.assert_array_equal(np.sign(sup.values[sat]), np.sign(base.values[sat]))


def test_dump_format(tmp_path, qam4):
    out = [
        compute_llrs(np.array([[0, 1]]), np.array([1.0]), 1.0, qam4),
        compute_llrs(np.array([[0, 1], [0, 0]]), np.array([1.0, 2.0]), 1.0, qam4),
    ]
    path = tmp_path / "llr.csv"
    write_llr_dump(path, out)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["trial", "bit", "llr", "saturated"]
    assert len(rows) == 1 + 8
    assert rows[1][:2] == ["0", "0"] and rows[5][:2] == ["1", "0"]
    for r, v in zip(rows[1:5], out[0].values):
        assert float(r[2]) == v and r[3] == "1"
