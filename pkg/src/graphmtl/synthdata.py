"""Clustered-task benchmark generator.

True predictors live near per-cluster reference vectors; features are
correlated Gaussians with covariance Sigma_ij = 2^{-|i-j|/3}; labels are
linear responses plus Gaussian noise; the relatedness graph is a binary
k-nearest-neighbor graph over the true predictors.
"""

import ast
import os
from dataclasses import dataclass, field

import numpy as np

from .graph import TaskGraph, build_laplacian, knn_graph, load_adjacency, save_adjacency
from .losses import LossModel, SQUARED, TaskData

DEFAULT_NOISE_STD = float(np.sqrt(3.0))  # label noise variance 3


@dataclass(frozen=True)
class TaskSpec:
    d: int
    m: int
    C: int
    n: int
    dev_size: int = 10_000
    test_size: int = 10_000
    noise_std: float = DEFAULT_NOISE_STD
    knn_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.C > self.m:
            raise ValueError(f"need C <= m, got C={self.C}, m={self.m}")
        if min(self.d, self.m, self.C, self.n, self.dev_size, self.test_size) <= 0:
            raise ValueError("all sizes must be positive")
        if not 0 < self.knn_k < self.m:
            raise ValueError(f"need 0 < knn_k < m, got {self.knn_k}")


@dataclass(frozen=True)
class GeneratedWorld:
    spec: TaskSpec
    true_predictors: np.ndarray          # d x m
    cluster_refs: np.ndarray             # d x C
    assignment: np.ndarray               # task -> cluster
    train: list = field(repr=False, default=None)
    dev: list = field(repr=False, default=None)
    test: list = field(repr=False, default=None)
    graph: TaskGraph = None
    feature_chol: np.ndarray = field(repr=False, default=None)

    @property
    def connected(self) -> bool:
        return self.graph.connected

    @property
    def true_b(self) -> float:
        """Largest true-predictor norm: the B budget the generator realizes."""
        return float(np.linalg.norm(self.true_predictors, axis=0).max())

    @property
    def true_s(self) -> float:
        """Realized graph dissimilarity sqrt(tr(W* L W*^T))."""
        q = float(np.sum((self.true_predictors @ self.graph.laplacian) * self.true_predictors))
        return float(np.sqrt(max(q, 0.0)))

    def fresh_sampler(self):
        """Callable (machine, b, rng) -> TaskData drawing from the generating process."""
        chol = self.feature_chol
        preds = self.true_predictors
        noise = self.spec.noise_std

        def sampler(machine: int, b: int, rng: np.random.Generator) -> TaskData:
            x = rng.standard_normal((b, chol.shape[0])) @ chol.T
            y = x @ preds[:, machine] + noise * rng.standard_normal(b)
            return TaskData(x=x, y=y)

        return sampler


def feature_covariance(d: int) -> np.ndarray:
    idx = np.arange(d)
    return 2.0 ** (-np.abs(idx[:, None] - idx[None, :]) / 3.0)


def generate_world(spec: TaskSpec) -> GeneratedWorld:
    """Deterministically generate a clustered-task world from the spec's seed.

    Cluster references are Unif[-0.5, 0.5] entries, per-task perturbations
    Unif[-0.05, 0.05], tasks assigned round-robin (task i -> cluster i mod C),
    features N(0, Sigma) through the Cholesky factor, labels with
    N(0, noise_std^2) noise. The relatedness graph is the binary k-NN graph
    over the true predictors; connectivity is exposed, not enforced.
    """
    rng = np.random.default_rng(spec.seed)
    refs = rng.uniform(-0.5, 0.5, size=(spec.d, spec.C))
    xi = rng.uniform(-0.05, 0.05, size=(spec.d, spec.m))
    assignment = np.arange(spec.m) % spec.C
    preds = refs[:, assignment] + xi

    sigma = feature_covariance(spec.d)
    chol = np.linalg.cholesky(sigma)

    def draw(machine: int, count: int) -> TaskData:
        x = rng.standard_normal((count, spec.d)) @ chol.T
        y = x @ preds[:, machine] + spec.noise_std * rng.standard_normal(count)
        return TaskData(x=x, y=y)

    train, dev, test = [], [], []
    for i in range(spec.m):
        train.append(draw(i, spec.n))
        dev.append(draw(i, spec.dev_size))
        test.append(draw(i, spec.test_size))

    graph = build_laplacian(knn_graph(preds, spec.knn_k))
    return GeneratedWorld(
        spec=spec,
        true_predictors=preds,
        cluster_refs=refs,
        assignment=assignment,
        train=train,
        dev=dev,
        test=test,
        graph=graph,
        feature_chol=chol,
    )


def oracle_population_loss_floor(world: GeneratedWorld, model: LossModel | None = None) -> float:
    """Noise floor E[(1/2) eps^2] = noise_var / 2 of the squared loss at W*."""
    if model is not None and model.kind != SQUARED:
        raise ValueError(f"population-loss floor only defined for squared loss, got {model.kind}")
    return 0.5 * world.spec.noise_std ** 2


_SPEC_FIELDS = ("d", "m", "C", "n", "dev_size", "test_size", "noise_std", "knn_k", "seed")


def save_world(world: GeneratedWorld, directory) -> None:
    """Serialize a world: text matrices, per-machine CSVs, key-value spec file."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "spec.cfg"), "w") as fh:
        for name in _SPEC_FIELDS:
            fh.write(f"{name} = {getattr(world.spec, name)!r}\n")
    np.savetxt(os.path.join(directory, "true_predictors.txt"), world.true_predictors, fmt="%.17g")
    np.savetxt(os.path.join(directory, "cluster_refs.txt"), world.cluster_refs, fmt="%.17g")
    np.savetxt(os.path.join(directory, "assignment.txt"), world.assignment, fmt="%d")
    save_adjacency(os.path.join(directory, "adjacency.txt"), world.graph.adjacency)
    data_dir = os.path.join(directory, "data")
    os.makedirs(data_dir, exist_ok=True)
    for split, datasets in (("train", world.train), ("dev", world.dev), ("test", world.test)):
        for i, ds in enumerate(datasets):
            rows = np.column_stack([ds.x, ds.y])
            header = ",".join([f"x{j}" for j in range(ds.d)] + ["y"])
            np.savetxt(
                os.path.join(data_dir, f"machine_{i:03d}_{split}.csv"),
                rows,
                fmt="%.17g",
                delimiter=",",
                header=header,
                comments="",
            )


def load_world(directory) -> GeneratedWorld:
    spec_kv = {}
    with open(os.path.join(directory, "spec.cfg")) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            spec_kv[key.strip()] = ast.literal_eval(value.strip())
    spec = TaskSpec(**spec_kv)
    preds = np.loadtxt(os.path.join(directory, "true_predictors.txt")).reshape(spec.d, spec.m)
    refs = np.loadtxt(os.path.join(directory, "cluster_refs.txt")).reshape(spec.d, spec.C)
    assignment = np.loadtxt(os.path.join(directory, "assignment.txt"), dtype=int).reshape(spec.m)
    adjacency = load_adjacency(os.path.join(directory, "adjacency.txt"))
    data_dir = os.path.join(directory, "data")

    def read_split(split):
        out = []
        for i in range(spec.m):
            rows = np.loadtxt(
                os.path.join(data_dir, f"machine_{i:03d}_{split}.csv"),
                delimiter=",",
                skiprows=1,
                ndmin=2,
            )
            out.append(TaskData(x=rows[:, :-1], y=rows[:, -1]))
        return out

    return GeneratedWorld(
        spec=spec,
        true_predictors=preds,
        cluster_refs=refs,
        assignment=assignment,
        train=read_split("train"),
        dev=read_split("dev"),
        test=read_split("test"),
        graph=build_laplacian(adjacency),
        feature_chol=np.linalg.cholesky(feature_covariance(spec.d)),
    )
