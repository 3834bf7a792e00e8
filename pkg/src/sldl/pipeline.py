"""End-to-end training, prediction and cross-validated grid search."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import correlation, decoder, embedding, metrics, regressor
from .dataset import Dataset, add_bias, drop_unlabeled, l2_normalize, label_frequencies, make_folds

log = logging.getLogger(__name__)

DEFAULT_DIM_GRID = (16, 32, 48, 64, 80, 96, 112, 128)
DEFAULT_K_GRID = (10, 20, 30, 40, 50, 60, 70, 80, 90, 100)


@dataclass(frozen=True)
class RunConfig:
    embed_dim: int = 64
    tau: float = 0.1
    alpha: float = 1.0
    walk_steps: int = correlation.DEFAULT_WALK_STEPS
    rounds: int = 20
    pairs_per_anchor: int = 10
    learning_rate: float = 0.05
    k_neighbors: int = 50
    k_out: int = 5
    seed: int = 0
    no_gaussian: bool = False
    symmetric: bool = False
    bias: bool = False
    drop_empty: bool = False
    epsilon: float = decoder.DEFAULT_EPSILON
    lbfgs_memory: int = 10
    lbfgs_max_iters: int = 500
    grad_tol: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    ndcg_normalizer: str = "paper"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.walk_steps < 0:
            raise ValueError(f"walk_steps must be >= 0, got {self.walk_steps}")
        if self.k_neighbors < 1:
            raise ValueError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.k_out < 1:
            raise ValueError(f"k_out must be >= 1, got {self.k_out}")
        if self.ndcg_normalizer not in metrics.NORMALIZERS:
            raise ValueError(f"ndcg_normalizer must be one of {metrics.NORMALIZERS}")
        # surface sub-config errors at construction time
        self.embedding_config()
        self.lbfgs_config()

    def embedding_config(self, embed_dim: int | None = None) -> embedding.EmbeddingConfig:
        return embedding.EmbeddingConfig(
            latent_dim=self.embed_dim if embed_dim is None else embed_dim,
            tau=self.tau,
            rounds=self.rounds,
            pairs_per_anchor=self.pairs_per_anchor,
            learning_rate=self.learning_rate,
            seed=self.seed,
            divergence=embedding.Divergence.JS if self.symmetric else embedding.Divergence.KL,
            gaussian_mode=embedding.GaussianMode.POINT if self.no_gaussian else embedding.GaussianMode.GAUSSIAN,
        )

    def lbfgs_config(self) -> regressor.LbfgsConfig:
        return regressor.LbfgsConfig(memory=self.lbfgs_memory, max_iters=self.lbfgs_max_iters,
                                     grad_tol=self.grad_tol, c1=self.c1, c2=self.c2)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FittedModel:
    config: RunConfig
    q: int
    c: int
    embeddings: embedding.EmbeddingSet
    regression: regressor.RegressionModel
    decoder: decoder.DecoderState
    transfer: correlation.TransferMatrices | None = field(default=None, repr=False)

    @property
    def latent_dim(self) -> int:
        return self.embeddings.latent_dim

    def propensities(self, a_param: float = 0.55, b_param: float = 1.5) -> metrics.PropensityModel:
        Y = self.decoder.train_labels
        freqs = np.bincount(Y.indices, minlength=self.c)
        return metrics.propensity_scores(freqs, Y.shape[0], a_param, b_param)


def prepare_features(d: Dataset, bias: bool) -> Dataset:
    d = l2_normalize(d)
    return add_bias(d) if bias else d


def _fit_embedding_and_map(train: Dataset, cfg: RunConfig, transfer, embed_dim: int):
    emb = embedding.train_embeddings(transfer.P_hat, cfg.embedding_config(embed_dim))
    Z = embedding.embed_labels(train.labels, emb)
    reg = regressor.train(train.features, Z, cfg.alpha, cfg.lbfgs_config())
    return emb, reg


def _effective_k(k: int, n: int) -> int:
    if k > n:
        log.warning("k_neighbors=%d exceeds the %d training instances; using %d", k, n, n)
        return n
    return k


def fit(d: Dataset, cfg: RunConfig = RunConfig()) -> FittedModel:
    """Train embeddings, the linear map and the decoder on raw (unnormalized) data."""
    q = d.q
    train = prepare_features(d, cfg.bias)
    if cfg.drop_empty:
        train = drop_unlabeled(train)
    if train.n == 0:
        raise ValueError("no training instances")
    transfer = correlation.build_transfer(train.labels, cfg.walk_steps)
    emb, reg = _fit_embedding_and_map(train, cfg, transfer, cfg.embed_dim)
    dec = decoder.build_decoder(train.features, reg, train.labels,
                                _effective_k(cfg.k_neighbors, train.n), cfg.epsilon)
    return FittedModel(cfg, q, d.c, emb, reg, dec, transfer)


def embed_queries(model: FittedModel, d: Dataset) -> np.ndarray:
    if d.q != model.q:
        raise ValueError(f"test data has q={d.q} features but the model expects {model.q}")
    X = prepare_features(d, model.config.bias).features
    return model.regression.predict(X)


def predict_scores(model: FittedModel, d: Dataset) -> np.ndarray:
    """``n x c`` label scores for every instance of ``d``."""
    if d.n == 0:
        return np.zeros((0, model.c))
    return decoder.decode_batch(embed_queries(model, d), model.decoder)


def evaluate_model(model: FittedModel, d: Dataset, ks=()) -> metrics.MetricReport:
    if d.c != model.c:
        raise ValueError(f"test data has c={d.c} labels but the model was trained with {model.c}")
    scores = predict_scores(model, d)
    xi = model.propensities().xi
    return metrics.evaluate(list(scores), d.label_sets(), xi, ks, model.config.ndcg_normalizer)


# --- cross-validation -------------------------------------------------------

@dataclass
class CVResult:
    selected: tuple[int, int]
    select_metric: str
    report: metrics.MetricReport
    grid: dict[tuple[int, int], metrics.MetricReport]

    def to_dict(self) -> dict:
        out = self.report.to_dict()
        out["selected"] = {"embed_dim": self.selected[0], "k_neighbors": self.selected[1]}
        out["select_metric"] = self.select_metric
        out["grid"] = [
            {"embed_dim": dim, "k_neighbors": k, "mean": r.mean, "std": r.std}
            for (dim, k), r in sorted(self.grid.items())
        ]
        return out


def _fold_job(args):
    d, train_idx, test_idx, cfg, dim, k_grid, ks = args
    train = prepare_features(d.subset(train_idx), cfg.bias)
    if cfg.drop_empty:
        train = drop_unlabeled(train)
    test = d.subset(test_idx)
    transfer = correlation.build_transfer(train.labels, cfg.walk_steps)
    emb, reg = _fit_embedding_and_map(train, cfg, transfer, dim)
    state = decoder.build_decoder(train.features, reg, train.labels, 1, cfg.epsilon)
    Zq = reg.predict(prepare_features(test, cfg.bias).features)
    k_eff = {k: _effective_k(k, train.n) for k in k_grid}
    by_k = decoder.decode_multi_k(Zq, state, set(k_eff.values()))
    freqs = label_frequencies(train)
    xi = metrics.propensity_scores(freqs, train.n).xi
    truth = test.label_sets()
    return {k: metrics.evaluate(list(by_k[k_eff[k]]), truth, xi, ks, cfg.ndcg_normalizer) for k in k_grid}


def cross_validate(d: Dataset, cfg: RunConfig = RunConfig(), folds: int = 10, dims=None, k_grid=None,
                   select_metric: str = "P@1", ks=(), jobs: int = 1) -> CVResult:
    """K-fold evaluation over an (embedding dimension, neighbor count) grid.

    Each (fold, dimension) pair trains one model; all neighbor counts reuse
    it. The grid point with the best mean ``select_metric`` across folds is
    selected. Folds are drawn with ``cfg.seed``.
    """
    dims = [cfg.embed_dim] if dims is None else list(dims)
    k_grid = [cfg.k_neighbors] if k_grid is None else list(k_grid)
    plan = make_folds(d, folds, cfg.seed)
    jobs_args = [(d, plan.train_indices(f), plan.test_indices(f), cfg, dim, k_grid, ks)
                 for f in range(folds) for dim in dims]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_fold_job, jobs_args))
    else:
        results = [_fold_job(a) for a in jobs_args]

    grid: dict[tuple[int, int], list[metrics.MetricReport]] = {}
    for args, res in zip(jobs_args, results):
        for k, rep in res.items():
            grid.setdefault((args[4], k), []).append(rep)
    combined = {key: metrics.MetricReport.combine(reps) for key, reps in grid.items()}
    names = next(iter(combined.values())).names
    if select_metric not in names:
        raise ValueError(f"select metric {select_metric!r} not among {names}")
    # ties favour the smallest (dim, k)
    selected = max(sorted(combined), key=lambda key: combined[key].mean[select_metric])
    return CVResult(selected, select_metric, combined[selected], combined)
