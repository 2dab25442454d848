import numpy as np
import pytest

from playwm import curation as cu
from playwm.rng import Rng


class TestEmbedder:
    def test_zero_frames_zero_vector(self):
        emb = cu.Embedder.create(0)
        frames = [np.zeros((64, 64)) for _ in range(5)]
        assert np.all(emb.embed_window(frames) == 0.0)

    def test_identical_windows_identical_vectors(self):
        emb = cu.Embedder.create(1)
        rng = Rng(2)
        frames = [rng.uniform_array((64, 64)) for _ in range(5)]
        assert np.array_equal(emb.embed_window(frames), emb.embed_window(list(frames)))

    def test_single_lit_pixel_reads_projection_row(self):
        emb = cu.Embedder.create(3)
        frame = np.zeros((64, 64))
        frame[5, 7] = 1.0
        flat_index = 5 * 64 + 7
        vec = emb.embed_window([frame] * 4)
        row = emb.projection.matrix[flat_index]
        for k in range(4):
            assert np.array_equal(vec[32 * k:32 * (k + 1)], row)

    def test_window_too_short(self):
        emb = cu.Embedder.create(0)
        with pytest.raises(ValueError):
            emb.embed_window([np.zeros((64, 64))] * 3)

    def test_sample_indices(self):
        assert cu.window_sample_indices(5) == (0, 1, 2, 4)
        assert cu.window_sample_indices(12) == (0, 3, 7, 11)


class TestKmeans:
    def test_identical_points_single_cluster(self):
        pts = np.tile([2.0, -1.0], (10, 1))
        model = cu.kmeans(pts, 1, Rng(0))
        assert np.allclose(model.centroids[0], [2.0, -1.0])
        assert model.inertia == pytest.approx(0.0, abs=1e-18)

    def test_two_blobs(self):
        rng = Rng(1)
        a = rng.normal((50, 8)) * 0.1
        a[:, 0] += 5.0
        b = rng.normal((50, 8)) * 0.1
        b[:, 0] -= 5.0
        model = cu.kmeans(np.vstack([a, b]), 2, Rng(2))
        means = sorted(model.centroids[:, 0])
        assert means[0] == pytest.approx(-5.0, abs=0.05)
        assert means[1] == pytest.approx(5.0, abs=0.05)
        assert np.allclose(sorted(model.centroids[:, 0]),
                           sorted([a[:, 0].mean() * 0 - 5, 5]), atol=0.06)

    def test_k_equals_n(self):
        rng = Rng(3)
        pts = rng.normal((6, 3))
        model = cu.kmeans(pts, 6, Rng(4))
        assert model.inertia == pytest.approx(0.0, abs=1e-12)

    def test_insufficient_points(self):
        with pytest.raises(ValueError):
            cu.kmeans(np.zeros((2, 3)), 5, Rng(0))


class TestDistance:
    def test_at_centroid(self):
        model = cu.ClusterModel(centroids=np.zeros((1, 8)), inertia=0.0, seed=0)
        assert cu.distance_to_success(model, np.zeros(8)) == 0.0

    def test_euclidean(self):
        model = cu.ClusterModel(centroids=np.zeros((1, 8)), inertia=0.0, seed=0)
        e = np.zeros(8)
        e[0], e[1] = 3.0, 4.0
        assert cu.distance_to_success(model, e) == pytest.approx(5.0)

    def test_min_over_centroids(self):
        cents = np.zeros((2, 4))
        cents[1, 0] = 10.0
        model = cu.ClusterModel(centroids=cents, inertia=0.0, seed=0)
        e = np.zeros(4)
        e[0] = 6.0
        assert cu.distance_to_success(model, e) == pytest.approx(4.0)

    def test_dimension_mismatch(self):
        model = cu.ClusterModel(centroids=np.zeros((1, 8)), inertia=0.0, seed=0)
        with pytest.raises(ValueError):
            cu.distance_to_success(model, np.zeros(5))


class TestRanks:
    def test_zero_distance_rank_one(self):
        d = np.array([0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
        idx = cu.build_ranks(d, 5)
        assert idx.ranks[0] == 1

    def test_max_distance_top_rank(self):
        d = np.linspace(0, 9, 10)
        idx = cu.build_ranks(d, 5)
        assert idx.ranks[d.argmax()] == 5

    def test_uniform_1_to_100(self):
        d = np.arange(1, 101, dtype=np.float64)
        idx = cu.build_ranks(d, 5)
        sizes = [int((idx.ranks == r).sum()) for r in range(1, 6)]
        assert sizes == [20, 20, 20, 20, 20]

    def test_partition_property(self):
        rng = Rng(5)
        d = rng.uniform_array(137) * 10
        idx = cu.build_ranks(d, 5)
        assert set(idx.ranks) <= {1, 2, 3, 4, 5}
        assert sum(len(m) for m in idx.members) == 137
        # monotone difficulty in rank index
        means = [d[m].mean() for m in idx.members if len(m)]
        assert all(a <= b + 1e-12 for a, b in zip(means, means[1:]))

    def test_boundary_goes_to_higher_rank(self):
        d = np.array([0.0, 1.0, 1.0, 2.0])
        idx = cu.build_ranks(d, 2, fractions=(0.5,))
        # threshold = sorted[ceil(0.5*4)] = sorted[2] = 1.0; d == 1.0 is rank 2
        assert idx.thresholds[1] == 1.0
        assert list(idx.ranks) == [1, 2, 2, 2]


class TestAnneal:
    def test_initial_and_final_exact(self):
        s = cu.AnnealSchedule()
        assert tuple(cu.rank_distribution(s, 0)) == (0.5, 0.3, 0.1, 0.05, 0.05)
        assert tuple(cu.rank_distribution(s, s.total_steps)) == (0.1, 0.2, 0.2, 0.25, 0.25)
        assert tuple(cu.rank_distribution(s, s.total_steps * 3)) == (0.1, 0.2, 0.2, 0.25, 0.25)

    def test_midpoint(self):
        s = cu.AnnealSchedule(update_period=500, total_steps=2500)
        p = cu.rank_distribution(s, 1250)  # floor(1250/500)*500/2500 = 0.4, not 0.5
        lam = (1250 // 500) * 500 / 2500
        expect = (1 - lam) * np.array(s.p_init) + lam * np.array(s.p_final)
        assert np.allclose(p, expect)
        # exact midpoint needs a period boundary at S/2
        s2 = cu.AnnealSchedule(update_period=250, total_steps=2500)
        p2 = cu.rank_distribution(s2, 1250)
        assert np.allclose(p2, [0.3, 0.25, 0.15, 0.15, 0.15])

    def test_piecewise_constant_within_period(self):
        s = cu.AnnealSchedule()
        assert np.array_equal(cu.rank_distribution(s, 500), cu.rank_distribution(s, 999))

    def test_sums_to_one_everywhere(self):
        s = cu.AnnealSchedule()
        for step in range(0, 4000, 83):
            p = cu.rank_distribution(s, step)
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(p >= min(min(s.p_init), min(s.p_final)) - 1e-12)

    def test_invalid_distributions(self):
        with pytest.raises(ValueError):
            cu.AnnealSchedule(p_init=(0.5, 0.5, 0.1), p_final=(0.4, 0.3, 0.3))


def tiny_index(sizes):
    d = []
    for r, n in enumerate(sizes):
        d.extend([r + 0.5] * n)
    d = np.array(d)
    fr = tuple(np.cumsum(sizes)[:-1] / sum(sizes))
    return cu.build_ranks(d, len(sizes), fractions=fr)


class TestSampler:
    def test_degenerate_distribution(self):
        idx = tiny_index([10, 10, 10, 10, 10])
        sched = cu.AnnealSchedule(p_init=(1.0, 0.0, 0.0, 0.0, 0.0),
                                  p_final=(1.0, 0.0, 0.0, 0.0, 0.0))
        rows = cu.sample_batch(idx, sched, 0, 200, Rng(1))
        assert np.all(idx.ranks[rows] == 1)

    def test_determinism(self):
        idx = tiny_index([10, 10, 10, 10, 10])
        sched = cu.AnnealSchedule()
        a = cu.sample_batch(idx, sched, 100, 64, Rng(7))
        b = cu.sample_batch(idx, sched, 100, 64, Rng(7))
        assert np.array_equal(a, b)

    def test_frequencies_match_schedule(self):
        idx = tiny_index([200, 200, 200, 200, 200])
        sched = cu.AnnealSchedule()
        step = 1000
        p = cu.rank_distribution(sched, step)
        rows = cu.sample_batch(idx, sched, step, 100_000, Rng(3))
        ranks = idx.ranks[rows]
        freq = np.array([(ranks == r).mean() for r in range(1, 6)])
        assert np.all(np.abs(freq - p) < 0.01)
        # chi-square goodness of fit, df=4, p>0.01 means stat < 13.2767
        n = len(rows)
        stat = float((((freq - p) * n) ** 2 / (p * n)).sum())
        assert stat < 13.2767

    def test_empty_rank_mass_redistributed(self):
        idx = tiny_index([10, 10, 10, 10, 10])
        idx.members[0] = np.array([], dtype=np.int64)  # force an empty rank
        sched = cu.AnnealSchedule()
        p = cu.effective_rank_distribution(idx, sched, 0)
        assert p[0] == 0.0
        assert abs(p.sum() - 1.0) < 1e-12
        rows = cu.sample_batch(idx, sched, 0, 500, Rng(5))
        assert np.all(idx.ranks[rows] != 1)


class TestPcaHull:
    def test_rank_one_data(self):
        rng = Rng(11)
        t = rng.normal(200)
        pts = np.outer(t, np.array([1.0, 2.0, -1.0]))
        coords, _ = cu.pca_2d(pts)
        assert coords[:, 1].var() < 1e-12 * max(1.0, coords[:, 0].var())

    def test_orthogonal_blobs_direction(self):
        rng = Rng(12)
        axis = np.zeros(16)
        axis[3] = 1.0
        pts = np.concatenate([rng.normal((100, 16)) * 0.01 + 5 * axis,
                              rng.normal((100, 16)) * 0.01 - 5 * axis])
        _, V = cu.pca_2d(pts)
        cos = abs(V[:, 0] @ axis)
        assert cos > 0.99

    def test_hull_degenerate(self):
        assert cu.convex_hull_area(np.tile([1.0, 2.0], (10, 1))) == 0.0

    def test_hull_unit_square(self):
        pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]])
        assert cu.convex_hull_area(pts) == pytest.approx(1.0)

    def test_mean_pairwise(self):
        pts = np.array([[0.0, 0.0], [3.0, 4.0]])
        assert cu.mean_pairwise_distance(pts) == pytest.approx(5.0)


class TestIndexIO:
    def test_save_load_roundtrip(self, tmp_path):
        from playwm.store import ClipWindow
        from playwm.tasks import BehaviorMode

        d = np.array([0.1, 0.5, 1.0, 2.0, 5.0, 9.0])
        wins = [ClipWindow(f"e{i}", 0, 12, BehaviorMode.SUCCESS) for i in range(6)]
        idx = cu.build_ranks(d, 3, fractions=(0.33, 0.66), wins=wins)
        path = str(tmp_path / "index.json")
        cu.save_index(idx, path)
        back = cu.load_index(path)
        assert np.array_equal(back.ranks, idx.ranks)
        assert np.allclose(back.distances, idx.distances)
        assert back.windows == idx.windows
        assert back.thresholds[-1] == np.inf
