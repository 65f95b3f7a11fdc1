import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svlr.data import FrameMatrix
from svlr.gmm import (
    BwStats,
    PosteriorMatrix,
    Ubm,
    baum_welch_stats,
    load_ubm,
    log_likelihood,
    pool_stats,
    posteriors,
    save_ubm,
    train_ubm_em,
    truncate_ubm,
    ubm_from_posteriors,
)


def random_ubm(rng, n_components, dim):
    return Ubm(
        rng.uniform(0.5, 2.0, n_components),
        rng.standard_normal((n_components, dim)),
        rng.uniform(0.4, 3.0, (n_components, dim)),
    )


def diag_gauss_pdf(x, mean, var):
    # direct density, the brute-force reference for posterior ratios
    norm = np.prod(1.0 / np.sqrt(2.0 * np.pi * var))
    return norm * np.exp(-0.5 * np.sum((x - mean) ** 2 / var))


class TestTrainUbm:
    def test_single_component_fixed_point(self, rng):
        x = rng.standard_normal((300, 4)) * np.array([1.0, 2.0, 0.5, 3.0]) + 1.5
        ubm = train_ubm_em(x, 1, n_iters=3, seed=0)
        assert ubm.weights[0] == pytest.approx(1.0)
        np.testing.assert_allclose(ubm.means[0], x.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(ubm.variances[0], x.var(axis=0), atol=1e-12)

    def test_two_separated_clusters(self, rng):
        a = rng.normal(0.0, 0.3, (250, 3))
        b = rng.normal(8.0, 0.3, (250, 3))
        ubm = train_ubm_em(np.vstack([a, b]), 2, n_iters=30, seed=3)
        # oracle: per-cluster sample means, matched up to component order
        targets = np.sort(np.vstack([a.mean(axis=0), b.mean(axis=0)]), axis=0)
        np.testing.assert_allclose(np.sort(ubm.means, axis=0), targets, atol=1e-6)
        np.testing.assert_allclose(ubm.weights, [0.5, 0.5], atol=1e-6)

    def test_determinism(self, rng):
        x = rng.standard_normal((200, 3))
        a = train_ubm_em(x, 4, n_iters=5, seed=11)
        b = train_ubm_em(x, 4, n_iters=5, seed=11)
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.variances, b.variances)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_log_likelihood_monotone(self, rng):
        x = np.vstack([rng.normal(-2, 1, (150, 2)), rng.normal(2, 1, (150, 2))])
        for seed in range(3):
            ubm = train_ubm_em(x, 3, n_iters=15, seed=seed)
            ll = ubm.em_log_likelihoods
            assert np.all(np.diff(ll) >= -1e-8 * np.abs(ll[:-1]))

    def test_fewer_frames_than_components(self, rng):
        with pytest.raises(ValueError, match="frames"):
            train_ubm_em(rng.standard_normal((3, 2)), 5)

    def test_accepts_frame_matrices(self, rng):
        mats = [FrameMatrix(rng.standard_normal((20, 2))) for _ in range(3)]
        ubm = train_ubm_em(mats, 2, n_iters=2, seed=0)
        assert ubm.n_components == 2


class TestPosteriors:
    def test_single_component_all_ones(self, rng):
        ubm = random_ubm(rng, 1, 3)
        gam = posteriors(ubm, FrameMatrix(rng.standard_normal((7, 3)))).gammas
        np.testing.assert_array_equal(gam, np.ones((7, 1)))

    def test_identical_components_split_evenly(self, rng):
        mean = rng.standard_normal(2)
        var = rng.uniform(0.5, 1.5, 2)
        ubm = Ubm(np.array([0.5, 0.5]), np.vstack([mean, mean]), np.vstack([var, var]))
        gam = posteriors(ubm, FrameMatrix(rng.standard_normal((5, 2)))).gammas
        np.testing.assert_allclose(gam, 0.5, atol=1e-12)

    def test_matches_density_ratio_oracle(self, rng):
        ubm = random_ubm(rng, 3, 2)
        frame = rng.standard_normal(2)
        gam = posteriors(ubm, FrameMatrix(frame[None, :])).gammas[0]
        dens = np.array([
            ubm.weights[c] * diag_gauss_pdf(frame, ubm.means[c], ubm.variances[c])
            for c in range(3)
        ])
        np.testing.assert_allclose(gam, dens / dens.sum(), atol=1e-10)

    def test_dimension_mismatch(self, rng):
        ubm = random_ubm(rng, 2, 3)
        with pytest.raises(ValueError, match="dim"):
            posteriors(ubm, FrameMatrix(rng.standard_normal((4, 2))))

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_rows_sum_to_one(self, seed):
        r = np.random.default_rng(seed)
        ubm = random_ubm(r, int(r.integers(1, 6)), 3)
        gam = posteriors(ubm, FrameMatrix(r.standard_normal((10, 3)))).gammas
        np.testing.assert_allclose(gam.sum(axis=1), 1.0, atol=1e-6)


class TestBaumWelchStats:
    def test_single_component(self, rng):
        ubm = random_ubm(rng, 1, 3)
        frames = rng.standard_normal((9, 3))
        stats = baum_welch_stats(ubm, FrameMatrix(frames))
        assert stats.n[0] == pytest.approx(9.0, abs=1e-10)
        np.testing.assert_allclose(stats.f[0], (frames - ubm.means[0]).sum(axis=0), atol=1e-10)

    def test_frames_at_mean_centralize_to_zero(self, rng):
        ubm = random_ubm(rng, 1, 2)
        frames = np.tile(ubm.means[0], (4, 1))
        stats = baum_welch_stats(ubm, FrameMatrix(frames))
        np.testing.assert_allclose(stats.f, 0.0, atol=1e-12)

    def test_matches_double_loop_oracle(self, rng):
        ubm = random_ubm(rng, 2, 3)
        frames = rng.standard_normal((3, 3))
        stats = baum_welch_stats(ubm, FrameMatrix(frames))
        gam = posteriors(ubm, FrameMatrix(frames)).gammas
        n_oracle = np.zeros(2)
        f_oracle = np.zeros((2, 3))
        for l in range(3):
            for c in range(2):
                n_oracle[c] += gam[l, c]
                f_oracle[c] += gam[l, c] * (frames[l] - ubm.means[c])
        np.testing.assert_allclose(stats.n, n_oracle, atol=1e-10)
        np.testing.assert_allclose(stats.f, f_oracle, atol=1e-10)

    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 30))
    @settings(max_examples=25, deadline=None)
    def test_counts_sum_to_frame_count(self, seed, n):
        r = np.random.default_rng(seed)
        ubm = random_ubm(r, int(r.integers(1, 5)), 2)
        stats = baum_welch_stats(ubm, FrameMatrix(r.standard_normal((n, 2))))
        assert abs(stats.n.sum() - n) <= 1e-6 * n


class TestUbmFromPosteriors:
    def test_degenerate_single_frame(self, rng):
        frame = rng.standard_normal(2)
        with pytest.warns(RuntimeWarning, match="truncate_ubm"):
            ubm = ubm_from_posteriors(
                [FrameMatrix(frame[None, :])], [PosteriorMatrix(np.array([[1.0, 0.0]]))]
            )
        np.testing.assert_allclose(ubm.means[0], frame, atol=1e-12)
        assert ubm.component_mass[1] == 0.0

    def test_hard_partition_recovers_group_statistics(self, rng):
        a = rng.normal(0, 1, (40, 2))
        b = rng.normal(5, 2, (60, 2))
        frames = FrameMatrix(np.vstack([a, b]))
        gam = np.zeros((100, 2))
        gam[:40, 0] = 1.0
        gam[40:, 1] = 1.0
        ubm = ubm_from_posteriors([frames], [PosteriorMatrix(gam)])
        np.testing.assert_allclose(ubm.means, [a.mean(axis=0), b.mean(axis=0)], atol=1e-10)
        np.testing.assert_allclose(ubm.variances, [a.var(axis=0), b.var(axis=0)], atol=1e-10)
        np.testing.assert_allclose(ubm.weights, [0.4, 0.6], atol=1e-12)

    def test_uniform_posteriors_give_global_mean(self, rng):
        frames = FrameMatrix(rng.standard_normal((30, 3)))
        gam = np.full((30, 4), 0.25)
        ubm = ubm_from_posteriors([frames], [PosteriorMatrix(gam)])
        for c in range(4):
            np.testing.assert_allclose(ubm.means[c], frames.frames.mean(axis=0), atol=1e-10)

    def test_unnormalized_rows_renormalized_with_warning(self, rng):
        with pytest.warns(RuntimeWarning, match="renormalizing"):
            post = PosteriorMatrix(np.array([[2.0, 2.0]]))
        np.testing.assert_allclose(post.gammas, [[0.5, 0.5]])

    def test_row_count_mismatch(self, rng):
        with pytest.raises(ValueError, match="posterior rows"):
            ubm_from_posteriors(
                [FrameMatrix(rng.standard_normal((3, 2)))],
                [PosteriorMatrix(np.full((2, 2), 0.5))],
            )


class TestTruncateUbm:
    def test_keep_all_renormalizes_only(self, rng):
        ubm = random_ubm(rng, 3, 2)
        stats = BwStats(np.array([1.0, 2.0, 3.0]), np.zeros((3, 2)))
        out = truncate_ubm(ubm, stats, 3)
        np.testing.assert_array_equal(out.means, ubm.means)
        np.testing.assert_allclose(out.weights, ubm.weights)

    def test_keeps_largest_counts_in_order(self, rng):
        ubm = random_ubm(rng, 3, 2)
        stats = BwStats(np.array([5.0, 1.0, 3.0]), np.zeros((3, 2)))
        out = truncate_ubm(ubm, stats, 2)
        np.testing.assert_array_equal(out.means, ubm.means[[0, 2]])
        assert out.weights.sum() == pytest.approx(1.0)

    def test_matches_sort_oracle_at_scale(self, rng):
        ubm = random_ubm(rng, 30, 2)
        n = rng.uniform(0, 100, 30)
        out = truncate_ubm(ubm, BwStats(n, np.zeros((30, 2))), 10)
        kept_oracle = np.sort(np.argsort(-n, kind="stable")[:10])
        np.testing.assert_array_equal(out.means, ubm.means[kept_oracle])

    def test_keep_out_of_range(self, rng):
        ubm = random_ubm(rng, 3, 2)
        stats = BwStats(np.ones(3), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            truncate_ubm(ubm, stats, 0)
        with pytest.raises(ValueError):
            truncate_ubm(ubm, stats, 4)


class TestConsistencyAcrossOperations:
    def test_stats_match_posterior_accumulation(self, rng):
        # the two statistic paths must agree: direct stats vs explicit posteriors
        ubm = random_ubm(rng, 3, 2)
        frames = FrameMatrix(rng.standard_normal((20, 2)))
        stats = baum_welch_stats(ubm, frames)
        gam = posteriors(ubm, frames).gammas
        np.testing.assert_allclose(stats.n, gam.sum(axis=0), atol=1e-10)
        np.testing.assert_allclose(
            stats.f, gam.T @ frames.frames - gam.sum(axis=0)[:, None] * ubm.means, atol=1e-10
        )

    def test_pool_stats_sums(self, rng):
        ubm = random_ubm(rng, 2, 2)
        mats = [FrameMatrix(rng.standard_normal((5, 2))) for _ in range(3)]
        stats = [baum_welch_stats(ubm, m) for m in mats]
        pooled = pool_stats(stats)
        np.testing.assert_allclose(pooled.n, sum(s.n for s in stats), atol=1e-12)


class TestSerialization:
    def test_ubm_roundtrip(self, tmp_path, rng):
        ubm = random_ubm(rng, 4, 3)
        save_ubm(ubm, tmp_path / "m.svu")
        back = load_ubm(tmp_path / "m.svu")
        np.testing.assert_array_equal(back.weights, ubm.weights)
        np.testing.assert_array_equal(back.means, ubm.means)
        np.testing.assert_array_equal(back.variances, ubm.variances)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "junk.svu").write_bytes(b"XXXX" + b"\0" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_ubm(tmp_path / "junk.svu")

    def test_log_likelihood_matches_history_start(self, rng):
        # first recorded EM value is the log-likelihood of the seeded model
        x = rng.standard_normal((100, 2))
        ubm0 = train_ubm_em(x, 2, n_iters=0, seed=5)
        ubm1 = train_ubm_em(x, 2, n_iters=1, seed=5)
        assert log_likelihood(ubm0, x) == pytest.approx(ubm1.em_log_likelihoods[0], rel=1e-12)
