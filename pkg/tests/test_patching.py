import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from srsnet.patching import (
    PatchGeometry,
    adjacent_patches,
    candidate_patches,
    geometry,
    pad,
    search_space_size,
)


class TestGeometry:
    def test_no_padding_case(self):
        g = geometry(96, 16, 8)
        assert (g.num_patches, g.num_candidates, g.padded_length) == (11, 81, 96)

    def test_padding_case(self):
        g = geometry(100, 16, 8)
        assert (g.num_patches, g.num_candidates, g.padded_length) == (12, 89, 104)

    def test_single_patch(self):
        g = geometry(16, 16, 8)
        assert (g.num_patches, g.num_candidates, g.padded_length) == (1, 1, 16)

    def test_patch_larger_than_context(self):
        with pytest.raises(ValueError, match="exceeds lookback"):
            geometry(8, 16, 8)

    def test_stride_larger_than_patch(self):
        with pytest.raises(ValueError, match="stride"):
            geometry(96, 8, 16)


class TestPad:
    def test_no_pad_is_bitwise_identity(self):
        g = geometry(96, 16, 8)
        x = torch.randn(2, 96)
        assert torch.equal(pad(x, g), x)

    def test_replicates_last_value(self):
        g = PatchGeometry(
            lookback=3, patch_size=3, stride=1, num_patches=3,
            num_candidates=3, padded_length=5,
        )
        out = pad(torch.tensor([[1.0, 2.0, 3.0]]), g)
        assert out.tolist() == [[1.0, 2.0, 3.0, 3.0, 3.0]]

    def test_real_geometry_padding(self):
        g = geometry(8, 4, 3)  # padded to 10
        out = pad(torch.arange(1.0, 9.0).unsqueeze(0), g)
        assert out.tolist() == [[1, 2, 3, 4, 5, 6, 7, 8, 8, 8]]

    def test_constant_series_stays_constant(self):
        g = geometry(10, 4, 3)
        out = pad(torch.full((1, 10), 2.5), g)
        assert torch.equal(out, torch.full((1, g.padded_length), 2.5))


class TestAdjacentPatches:
    def test_enumeration(self):
        g = geometry(10, 4, 2)
        padded = pad(torch.arange(1.0, 11.0).unsqueeze(0), g)
        ps = adjacent_patches(padded, g)
        assert ps.starts.tolist() == [0, 2, 4, 6]
        assert ps.values[0].tolist() == [
            [1, 2, 3, 4], [3, 4, 5, 6], [5, 6, 7, 8], [7, 8, 9, 10],
        ]

    def test_non_overlapping_tiling(self):
        g = geometry(8, 4, 4)
        padded = pad(torch.arange(8.0).unsqueeze(0), g)
        ps = adjacent_patches(padded, g)
        assert ps.values.shape == (1, 2, 4)
        assert torch.equal(ps.values.reshape(1, -1), padded)

    def test_single_patch(self):
        g = geometry(5, 5, 3)
        padded = pad(torch.arange(5.0).unsqueeze(0), g)
        ps = adjacent_patches(padded, g)
        assert ps.values.shape == (1, 1, 5)
        assert torch.equal(ps.values[0, 0], padded[0, :5])


class TestCandidatePatches:
    def test_stride_one_enumeration(self):
        g = geometry(10, 4, 2)
        assert g.num_candidates == 7
        padded = pad(torch.arange(1.0, 11.0).unsqueeze(0), g)
        ps = candidate_patches(padded, g)
        assert ps.starts.tolist() == list(range(7))
        for k in range(7):
            assert torch.equal(ps.values[0, k], padded[0, k : k + 4])

    def test_last_adjacent_equals_last_candidate(self):
        g = geometry(10, 4, 2)
        padded = pad(torch.randn(1, 10), g)
        adj = adjacent_patches(padded, g)
        cand = candidate_patches(padded, g)
        assert torch.equal(adj.values[0, -1], cand.values[0, (g.num_patches - 1) * g.stride])

    def test_single_candidate(self):
        g = geometry(6, 6, 2)
        padded = pad(torch.randn(1, 6), g)
        assert torch.equal(
            candidate_patches(padded, g).values, adjacent_patches(padded, g).values
        )


class TestSearchSpaceSize:
    def test_degenerate(self):
        assert search_space_size(geometry(4, 4, 2)) == 1

    def test_small_case_by_hand(self):
        g = geometry(4, 2, 2)  # n=2, K=3
        assert (g.num_patches, g.num_candidates) == (2, 3)
        assert search_space_size(g) == 12  # C(4,2) * 2!

    def test_large_case_exact_big_integer(self):
        g = geometry(96, 16, 8)  # n=11, K=81
        # C(K+n-1, n) * n! telescopes to the product K..K+n-1
        assert search_space_size(g) == math.prod(range(81, 92))


@settings(max_examples=60, deadline=None)
@given(
    lookback=st.integers(4, 64),
    patch=st.integers(1, 64),
    stride=st.integers(1, 64),
    seed=st.integers(0, 2**31 - 1),
)
def test_candidates_match_brute_force_slices(lookback, patch, stride, seed):
    patch = min(patch, lookback)
    stride = min(stride, patch)
    g = geometry(lookback, patch, stride)
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.normal(size=(2, lookback)).astype(np.float32))
    padded = pad(x, g)
    cand = candidate_patches(padded, g)
    adj = adjacent_patches(padded, g)
    for k in range(g.num_candidates):
        assert torch.equal(cand.values[:, k, :], padded[:, k : k + patch])
    adj_starts = set(adj.starts.tolist())
    assert adj_starts <= set(cand.starts.tolist())
    assert int(cand.starts.max()) + patch == g.padded_length
    for j, start in enumerate(adj.starts.tolist()):
        assert torch.equal(adj.values[:, j, :], padded[:, start : start + patch])


@settings(max_examples=40, deadline=None)
@given(
    lookback=st.integers(4, 48),
    patch=st.integers(2, 48),
    stride=st.integers(1, 48),
    seed=st.integers(0, 2**31 - 1),
)
def test_overlap_average_reconstructs_padded_context(lookback, patch, stride, seed):
    patch = min(patch, lookback)
    stride = min(stride, patch)
    g = geometry(lookback, patch, stride)
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.normal(size=(1, lookback)))
    padded = pad(x, g)
    ps = adjacent_patches(padded, g)
    total = np.zeros(g.padded_length)
    counts = np.zeros(g.padded_length)
    for j, start in enumerate(ps.starts.tolist()):
        total[start : start + patch] += ps.values[0, j].numpy()
        counts[start : start + patch] += 1
    assert (counts > 0).all()
    np.testing.assert_allclose(total / counts, padded[0].numpy(), atol=1e-12)
