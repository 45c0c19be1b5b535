import numpy as np
import pytest

from rotmatch.matcher import (CoarseMatcher, CoarseMatchSet, FineMatcher,
                              MatcherConfig, add_positional_encoding,
                              dual_softmax, mutual_matches,
                              positional_encoding, read_match_file,
                              write_match_file)
from rotmatch.tensor import Tensor


class TestPositionalEncoding:
    def test_deterministic(self):
        a = add_positional_encoding(Tensor(np.zeros((8, 4, 4), dtype=np.float32)))
        b = add_positional_encoding(Tensor(np.zeros((8, 4, 4), dtype=np.float32)))
        assert np.array_equal(a.data, b.data)

    def test_origin_values(self):
        pe = positional_encoding(8, 4, 4)
        d4 = 2
        assert np.allclose(pe[0:d4, 0, 0], 0.0)       # sin(x) at x=0
        assert np.allclose(pe[d4:2 * d4, 0, 0], 1.0)  # cos(x) at x=0
        assert np.allclose(pe[2 * d4:3 * d4, 0, 0], 0.0)
        assert np.allclose(pe[3 * d4:, 0, 0], 1.0)

    def test_not_rotation_invariant(self):
        pe = positional_encoding(32, 8, 8)
        rotated = np.rot90(pe, 1, axes=(1, 2))
        assert np.abs(pe - rotated).max() > 0.1

    def test_d_not_divisible_by_4(self):
        with pytest.raises(ValueError, match="divisible by 4"):
            positional_encoding(6, 4, 4)


class TestDualSoftmax:
    def test_hand_arithmetic(self):
        s = np.array([[2.0, 0.0], [0.0, 2.0]])
        p = dual_softmax(s).data
        assert np.allclose(np.diag(p), 0.7760, atol=5e-4)
        assert np.allclose(p[0, 1], 0.0141, atol=5e-4)
        ia, ib, conf = mutual_matches(p, 0.2)
        assert list(zip(ia, ib)) == [(0, 0), (1, 1)]

    def test_theta_one_empty(self):
        rng = np.random.default_rng(0)
        p = dual_softmax(rng.normal(size=(6, 6))).data
        ia, _, _ = mutual_matches(p, 1.0)
        assert len(ia) == 0

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(1)
        p = dual_softmax(rng.normal(size=(5, 7)) * 3).data
        assert (p > 0).all() and (p < 1).all()

    def test_row_softmax_sums_to_one(self):
        rng = np.random.default_rng(2)
        s = rng.normal(size=(5, 7))
        from rotmatch import tensor as T
        rows = T.softmax(Tensor(s), axis=-1).data
        assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-6)

    def test_row_shift_invariance_of_row_softmax(self):
        # shift invariance of softmax: the row-softmax factor ignores a
        # constant added to a whole row before it is applied
        from rotmatch import tensor as T
        rng = np.random.default_rng(3)
        s = rng.normal(size=(4, 5))
        shifted = s.copy()
        shifted[2] += 7.5
        rows = T.softmax(Tensor(s), axis=-1).data
        rows_shifted = T.softmax(Tensor(shifted), axis=-1).data
        assert np.allclose(rows, rows_shifted, atol=1e-6)
        # a global constant shift leaves the full dual-softmax unchanged
        assert np.allclose(dual_softmax(s).data, dual_softmax(s + 3.25).data, atol=1e-6)


class TestMutualMatches:
    def test_symmetric_transpose(self):
        rng = np.random.default_rng(4)
        p = dual_softmax(rng.normal(size=(6, 6)) * 2).data
        ia, ib, ca = mutual_matches(p, 0.01)
        jb, ja, cb = mutual_matches(p.T, 0.01)
        assert set(zip(ia, ib)) == set(zip(ja, jb))
        assert np.allclose(np.sort(ca), np.sort(cb))

    def test_count_bounded_by_cells(self):
        rng = np.random.default_rng(5)
        p = dual_softmax(rng.normal(size=(9, 5))).data
        ia, ib, _ = mutual_matches(p, 0.0)
        assert len(ia) <= 5
        assert len(np.unique(ia)) == len(ia)
        assert len(np.unique(ib)) == len(ib)


class TestCoarseMatcher:
    def test_identity_assignment_attention_bypassed(self):
        rng = np.random.default_rng(6)
        cfg = MatcherConfig(bypass_attention=True, theta_c=0.05)
        matcher = CoarseMatcher(coarse_dim=16, cfg=cfg, rng=rng)
        feat = Tensor(rng.normal(size=(16, 4, 4)).astype(np.float32))
        mset = matcher.match(feat, feat)
        # brute-force check: the Gram matrix of distinct unit vectors has its
        # argmax on the diagonal
        assert len(mset) == 16
        assert np.array_equal(mset.idx_a, mset.idx_b)

    def test_feature_width_mismatch(self):
        cfg = MatcherConfig()
        matcher = CoarseMatcher(coarse_dim=8, cfg=cfg)
        a = Tensor(np.zeros((8, 4, 4), dtype=np.float32))
        b = Tensor(np.zeros((6, 4, 4), dtype=np.float32))
        with pytest.raises(ValueError, match="widths differ"):
            matcher.confidence(a, b)

    def test_swap_transposes_matches_bypassed(self):
        rng = np.random.default_rng(7)
        cfg = MatcherConfig(bypass_attention=True, theta_c=0.01)
        matcher = CoarseMatcher(coarse_dim=12, cfg=cfg, rng=rng)
        fa = Tensor(rng.normal(size=(12, 3, 4)).astype(np.float32))
        fb = Tensor(rng.normal(size=(12, 3, 4)).astype(np.float32))
        ab = matcher.match(fa, fb)
        ba = matcher.match(fb, fa)
        assert set(zip(ab.idx_a, ab.idx_b)) == set(zip(ba.idx_b, ba.idx_a))
        assert np.allclose(np.sort(ab.confidence), np.sort(ba.confidence), atol=1e-6)

    def test_attention_path_runs_and_respects_threshold(self):
        rng = np.random.default_rng(8)
        cfg = MatcherConfig(theta_c=1.0, d_model=16, n_blocks=2, n_heads=2)
        matcher = CoarseMatcher(coarse_dim=8, cfg=cfg, rng=rng)
        fa = Tensor(rng.normal(size=(8, 4, 4)).astype(np.float32))
        fb = Tensor(rng.normal(size=(8, 4, 4)).astype(np.float32))
        assert len(matcher.match(fa, fb)) == 0


class TestFineMatcher:
    def _setup(self, rng, n=3, hw=16):
        cfg = MatcherConfig()
        fm = FineMatcher(fine_dim=8, cfg=cfg, rng=rng)
        fa = Tensor(rng.normal(size=(8, hw, hw)).astype(np.float32))
        fb = Tensor(rng.normal(size=(8, hw, hw)).astype(np.float32))
        return cfg, fm, fa, fb

    def test_concentrated_heatmap_zero_offset(self):
        # identical windows + a dominant self-similar center produce a peaked
        # heatmap; with matching maps the offset expectation stays centered
        rng = np.random.default_rng(9)
        cfg, fm, fa, _ = self._setup(rng)
        centers = np.array([[8, 8]])
        dx, dy, heat = fm.offsets(fa, fa, centers, centers)
        peak = heat.data.argmax()
        exp_x = (heat.data[0] * (np.arange(25) % 5 - 2)).sum()
        assert np.isclose(float(dx.data[0]), exp_x, atol=1e-6)

    def test_uniform_heatmap_zero_offset(self):
        # symmetry of the expectation: constant feature maps give a uniform
        # heatmap whose expected offset is exactly zero
        rng = np.random.default_rng(10)
        cfg = MatcherConfig()
        fm = FineMatcher(fine_dim=8, cfg=cfg, rng=rng)
        fa = Tensor(np.ones((8, 16, 16), dtype=np.float32))
        centers = np.array([[8, 8]])
        dx, dy, heat = fm.offsets(fa, fa, centers, centers)
        assert np.allclose(heat.data, 1.0 / 25.0, atol=1e-6)
        assert abs(float(dx.data[0])) < 1e-6 and abs(float(dy.data[0])) < 1e-6

    def test_offset_bound(self):
        rng = np.random.default_rng(11)
        cfg, fm, fa, fb = self._setup(rng)
        centers = np.array([[5, 5], [8, 9], [10, 4]])
        dx, dy, _ = fm.offsets(fa, fb, centers, centers)
        bound = (cfg.fine_window / 2) * 1.0
        assert (np.abs(dx.data) <= bound).all() and (np.abs(dy.data) <= bound).all()

    def test_out_of_bounds_windows_dropped(self):
        rng = np.random.default_rng(12)
        cfg = MatcherConfig()
        fm = FineMatcher(fine_dim=8, cfg=cfg, rng=rng)
        fa = Tensor(rng.normal(size=(8, 16, 16)).astype(np.float32))
        # coarse grid 4x4 on a 32px image; corner cells produce windows at
        # fine centers 2 and 14, the right/bottom edges push past the map
        mset = CoarseMatchSet(idx_a=np.array([0, 15]), idx_b=np.array([0, 15]),
                              confidence=np.array([0.9, 0.8]),
                              grid_a=(4, 4), grid_b=(4, 4))
        matches, dropped = fm.refine(fa, fa, mset)
        assert dropped == 1 and len(matches) == 1

    def test_refined_point_within_window_bound(self):
        rng = np.random.default_rng(13)
        cfg = MatcherConfig()
        fm = FineMatcher(fine_dim=8, cfg=cfg, rng=rng)
        fa = Tensor(rng.normal(size=(8, 16, 16)).astype(np.float32))
        fb = Tensor(rng.normal(size=(8, 16, 16)).astype(np.float32))
        mset = CoarseMatchSet(idx_a=np.array([5, 6, 9]), idx_b=np.array([5, 10, 6]),
                              confidence=np.array([0.9, 0.5, 0.4]),
                              grid_a=(4, 4), grid_b=(4, 4))
        matches, _ = fm.refine(fa, fb, mset)
        bound = (cfg.fine_window / 2) * cfg.fine_stride
        for m, ib in zip(matches, [5, 10, 6]):
            rb, cb = divmod(ib, 4)
            wx = (cb * 4 + 2 + 0.5) * 2
            wy = (rb * 4 + 2 + 0.5) * 2
            assert abs(m.point_b[0] - wx) <= bound
            assert abs(m.point_b[1] - wy) <= bound


class TestMatchFile:
    def test_round_trip(self, tmp_path):
        from rotmatch.matcher import FineMatch
        matches = [FineMatch((1.25, 2.5), (3.125, 4.0), 0.875),
                   FineMatch((0.0, 1.0), (2.0, 3.0), 0.5)]
        path = tmp_path / "matches.txt"
        write_match_file(path, matches)
        back = read_match_file(path)
        assert len(back) == 2
        assert back[0].point_a == (1.25, 2.5)
        assert back[0].confidence == 0.875
        lines = path.read_text().splitlines()
        assert lines[0] == "1.250000 2.500000 3.125000 4.000000 0.875000"
