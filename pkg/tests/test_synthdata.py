import numpy as np
import pytest

from graphmtl.losses import LossModel
from graphmtl.objective import population_loss_se
from graphmtl.synthdata import (
    TaskSpec,
    feature_covariance,
    generate_world,
    load_world,
    oracle_population_loss_floor,
    save_world,
)

SQ = LossModel("squared")


class TestTaskSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            TaskSpec(d=5, m=4, C=6, n=10)
        with pytest.raises(ValueError):
            TaskSpec(d=5, m=4, C=2, n=0)
        with pytest.raises(ValueError):
            TaskSpec(d=5, m=4, C=2, n=10, knn_k=4)


class TestGenerateWorld:
    def test_bit_reproducible(self):
        spec = TaskSpec(d=5, m=6, C=3, n=8, dev_size=10, test_size=10, knn_k=3, seed=11)
        w1 = generate_world(spec)
        w2 = generate_world(spec)
        assert np.array_equal(w1.true_predictors, w2.true_predictors)
        for a, b in zip(w1.train, w2.train):
            assert np.array_equal(a.x, b.x)
            assert np.array_equal(a.y, b.y)
        assert np.array_equal(w1.graph.adjacency, w2.graph.adjacency)

    def test_every_task_its_own_cluster(self):
        spec = TaskSpec(d=4, m=5, C=5, n=5, dev_size=5, test_size=5, knn_k=2, seed=0)
        world = generate_world(spec)
        dev = np.abs(world.true_predictors - world.cluster_refs).max()
        assert dev <= 0.05

    def test_single_cluster_tight_predictors(self):
        spec = TaskSpec(d=4, m=6, C=1, n=5, dev_size=5, test_size=5, knn_k=3, seed=1)
        world = generate_world(spec)
        for i in range(6):
            for j in range(6):
                gap = np.abs(world.true_predictors[:, i] - world.true_predictors[:, j]).max()
                assert gap <= 0.1

    def test_perturbation_bound_always(self):
        spec = TaskSpec(d=6, m=9, C=3, n=5, dev_size=5, test_size=5, knn_k=4, seed=2)
        world = generate_world(spec)
        refs = world.cluster_refs[:, world.assignment]
        assert np.abs(world.true_predictors - refs).max() <= 0.05

    def test_round_robin_assignment(self):
        spec = TaskSpec(d=3, m=7, C=3, n=5, dev_size=5, test_size=5, knn_k=2, seed=3)
        world = generate_world(spec)
        assert list(world.assignment) == [i % 3 for i in range(7)]

    def test_feature_covariance_matches_formula(self):
        sigma = feature_covariance(6)
        assert sigma[0, 3] == pytest.approx(0.5)  # 2^{-3/3}
        assert sigma[2, 2] == 1.0
        rng = np.random.default_rng(5)
        n = 100_000
        chol = np.linalg.cholesky(sigma)
        x = rng.standard_normal((n, 6)) @ chol.T
        emp = x.T @ x / n
        # Var(x_i x_j) = Sigma_ii Sigma_jj + Sigma_ij^2 for Gaussians
        se = np.sqrt((1.0 + sigma**2) / n)
        assert (np.abs(emp - sigma) <= 3 * se).all()

    @pytest.mark.parametrize("m,C", [(30, 5), (30, 10), (60, 50)])
    def test_cluster_structure_in_distances(self, m, C):
        spec = TaskSpec(d=10, m=m, C=C, n=2, dev_size=2, test_size=2, knn_k=6, seed=5)
        world = generate_world(spec)
        preds = world.true_predictors
        within, across = [], []
        for i in range(m):
            for j in range(i + 1, m):
                dist = np.linalg.norm(preds[:, i] - preds[:, j])
                same = world.assignment[i] == world.assignment[j]
                (within if same else across).append(dist)
        assert np.mean(within) < np.mean(across)

    def test_labels_are_linear_plus_noise(self):
        spec = TaskSpec(
            d=4, m=5, C=2, n=50, dev_size=5, test_size=5, knn_k=2, seed=6, noise_std=1e-9
        )
        world = generate_world(spec)
        for i, data in enumerate(world.train):
            resid = data.y - data.x @ world.true_predictors[:, i]
            assert np.abs(resid).max() < 1e-6

    def test_connectivity_flag(self):
        # two far clusters with k below the bridge threshold disconnect
        spec = TaskSpec(d=4, m=6, C=2, n=5, dev_size=5, test_size=5, knn_k=2, seed=1)
        world = generate_world(spec)
        assert world.connected == world.graph.connected


class TestNoiseFloor:
    def test_default_noise_floor(self, small_world):
        assert oracle_population_loss_floor(small_world) == pytest.approx(1.5)

    def test_zero_noise(self):
        spec = TaskSpec(
            d=3, m=4, C=2, n=5, dev_size=5, test_size=5, knn_k=2, seed=7, noise_std=0.0
        )
        assert oracle_population_loss_floor(generate_world(spec)) == 0.0

    def test_logistic_unsupported(self, small_world):
        with pytest.raises(ValueError):
            oracle_population_loss_floor(small_world, LossModel("logistic"))

    def test_estimate_at_truth_within_3se(self, small_world):
        est, se = population_loss_se(SQ, small_world.true_predictors, small_world.test)
        assert abs(est - oracle_population_loss_floor(small_world)) <= 3 * se


class TestFreshSampler:
    def test_shapes_and_determinism(self, small_world):
        sampler = small_world.fresh_sampler()
        a = sampler(2, 7, np.random.default_rng(5))
        b = sampler(2, 7, np.random.default_rng(5))
        assert a.x.shape == (7, small_world.spec.d)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        spec = TaskSpec(d=4, m=5, C=2, n=6, dev_size=7, test_size=8, knn_k=2, seed=9)
        world = generate_world(spec)
        save_world(world, tmp_path / "w")
        back = load_world(tmp_path / "w")
        assert back.spec == spec
        assert np.array_equal(back.true_predictors, world.true_predictors)
        assert np.array_equal(back.cluster_refs, world.cluster_refs)
        assert np.array_equal(back.assignment, world.assignment)
        assert np.array_equal(back.graph.adjacency, world.graph.adjacency)
        for split in ("train", "dev", "test"):
            for a, b in zip(getattr(world, split), getattr(back, split)):
                assert np.array_equal(a.x, b.x)
                assert np.array_equal(a.y, b.y)
