"""Diagonal Gaussian label embeddings trained with ranked KL triplets.

Each label ``l`` is a Gaussian ``N(mu_l, diag(exp(log_var_l)))``. For every
anchor label the remaining labels are ranked by the anchor's row of the
transfer matrix, and adjacent ranks ``(j, j+1)`` form a (positive, negative)
pair trained with the hinge ``[D(a||pos) - D(a||neg) + tau]_+``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class Divergence(str, enum.Enum):
    KL = "kl"
    JS = "js"


class GaussianMode(str, enum.Enum):
    GAUSSIAN = "gaussian"
    POINT = "point"


@dataclass(frozen=True)
class LabelGaussian:
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        log_var = np.asarray(self.log_var, dtype=np.float64)
        if mu.shape != log_var.shape or mu.ndim != 1:
            raise ValueError(f"mu and log_var must be equal-length vectors, got {mu.shape} and {log_var.shape}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_var", log_var)

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class EmbeddingConfig:
    latent_dim: int = 64
    tau: float = 0.1
    rounds: int = 20
    pairs_per_anchor: int = 10
    learning_rate: float = 0.05
    seed: int = 0
    divergence: Divergence = Divergence.KL
    gaussian_mode: GaussianMode = GaussianMode.GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "divergence", Divergence(self.divergence))
        object.__setattr__(self, "gaussian_mode", GaussianMode(self.gaussian_mode))
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")
        if self.pairs_per_anchor < 0:
            raise ValueError(f"pairs_per_anchor must be >= 0, got {self.pairs_per_anchor}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class EmbeddingSet:
    """Per-label Gaussians stored row-wise: ``mu[l]`` and ``log_var[l]``.

    ``round_losses`` holds the mean hinge of the kept parameters over all
    training constraints, before the first round and after each round.
    """

    mu: np.ndarray
    log_var: np.ndarray
    round_losses: list[float] = field(default_factory=list)
    sweep_losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape or self.mu.ndim != 2:
            raise ValueError("mu and log_var must be matching (c, dim) arrays")

    @property
    def c(self) -> int:
        return self.mu.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[1]

    def __len__(self):
        return self.c

    def __getitem__(self, label: int) -> LabelGaussian:
        return LabelGaussian(self.mu[label].copy(), self.log_var[label].copy())

    @property
    def gaussians(self) -> list[LabelGaussian]:
        return [self[l] for l in range(self.c)]


# Each gradient helper returns (value, d/dmu_a, d/dlogvar_a, d/dmu_b, d/dlogvar_b).

def _kl_grad(mu_a, lv_a, mu_b, lv_b):
    ratio = np.exp(lv_a - lv_b)
    inv_b = np.exp(-lv_b)
    diff = mu_a - mu_b
    sq = diff * diff * inv_b
    value = 0.5 * np.sum(ratio + sq - 1.0 - lv_a + lv_b)
    g_mu_a = diff * inv_b
    return value, g_mu_a, 0.5 * (ratio - 1.0), -g_mu_a, 0.5 * (1.0 - ratio - sq)


def _js_grad(mu_a, lv_a, mu_b, lv_b):
    var_a = np.exp(lv_a)
    var_b = np.exp(lv_b)
    mu_m = 0.5 * (mu_a + mu_b)
    var_m = 0.5 * (var_a + var_b)
    lv_m = np.log(var_m)
    va, ga_mu, ga_lv, gma_mu, gma_lv = _kl_grad(mu_a, lv_a, mu_m, lv_m)
    vb, gb_mu, gb_lv, gmb_mu, gmb_lv = _kl_grad(mu_b, lv_b, mu_m, lv_m)
    g_mu_m = 0.5 * (gma_mu + gmb_mu)
    g_lv_m = 0.5 * (gma_lv + gmb_lv)
    # d lv_m / d lv_a = var_a / (2 var_m)
    return (
        0.5 * (va + vb),
        0.5 * ga_mu + 0.5 * g_mu_m,
        0.5 * ga_lv + g_lv_m * var_a / (2.0 * var_m),
        0.5 * gb_mu + 0.5 * g_mu_m,
        0.5 * gb_lv + g_lv_m * var_b / (2.0 * var_m),
    )


def _sq_euclid_grad(mu_a, lv_a, mu_b, lv_b):
    diff = mu_a - mu_b
    zero = np.zeros_like(lv_a)
    return float(diff @ diff), 2.0 * diff, zero, -2.0 * diff, zero


def _grad_fn(divergence=Divergence.KL, gaussian_mode=GaussianMode.GAUSSIAN):
    if GaussianMode(gaussian_mode) is GaussianMode.POINT:
        return _sq_euclid_grad
    return _kl_grad if Divergence(divergence) is Divergence.KL else _js_grad


def _check_dims(*gs: LabelGaussian) -> None:
    dims = {g.dim for g in gs}
    if len(dims) != 1:
        raise ValueError(f"latent dimension mismatch: {sorted(dims)}")


def kl_divergence(a: LabelGaussian, b: LabelGaussian) -> float:
    """KL(a || b) between two diagonal Gaussians.

    Computed as ``-1/2 * sum_k [log u_k - u_k - t_k + 1]`` with the variance
    ratio ``u_k = var_a / var_b`` and ``t_k = (mu_a - mu_b)**2 / var_b``.
    """
    _check_dims(a, b)
    u = np.exp(a.log_var - b.log_var)
    t = (a.mu - b.mu) ** 2 / b.var
    return float(-0.5 * np.sum(np.log(u) - u - t + 1.0))


def js_divergence(a: LabelGaussian, b: LabelGaussian) -> float:
    """Symmetric divergence ``(KL(a||m) + KL(b||m)) / 2``.

    ``m`` averages the parameters of ``a`` and ``b`` (means and variances);
    it is a closed-form stand-in for the mixture midpoint.
    """
    _check_dims(a, b)
    m = LabelGaussian(0.5 * (a.mu + b.mu), np.log(0.5 * (a.var + b.var)))
    return 0.5 * (kl_divergence(a, m) + kl_divergence(b, m))


def divergence(a: LabelGaussian, b: LabelGaussian, kind=Divergence.KL, gaussian_mode=GaussianMode.GAUSSIAN) -> float:
    _check_dims(a, b)
    return float(_grad_fn(kind, gaussian_mode)(a.mu, a.log_var, b.mu, b.log_var)[0])


def triplet_hinge(anchor: LabelGaussian, pos: LabelGaussian, neg: LabelGaussian, tau: float,
                  kind=Divergence.KL, gaussian_mode=GaussianMode.GAUSSIAN) -> float:
    """``[D(anchor||pos) - D(anchor||neg) + tau]_+``."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    _check_dims(anchor, pos, neg)
    d = _grad_fn(kind, gaussian_mode)
    margin = d(anchor.mu, anchor.log_var, pos.mu, pos.log_var)[0] - d(anchor.mu, anchor.log_var, neg.mu, neg.log_var)[0] + tau
    return max(float(margin), 0.0)


def triplet_hinge_grad(anchor: LabelGaussian, pos: LabelGaussian, neg: LabelGaussian, tau: float,
                       kind=Divergence.KL, gaussian_mode=GaussianMode.GAUSSIAN):
    """Hinge value and its gradient.

    Returns ``(loss, grads)`` where ``grads`` maps ``"anchor"``, ``"pos"``,
    ``"neg"`` to ``(d_mu, d_log_var)`` tuples. The gradient is zero wherever
    the hinge is inactive.
    """
    _check_dims(anchor, pos, neg)
    loss, g = _triplet_step(_grad_fn(kind, gaussian_mode), anchor.mu, anchor.log_var,
                            pos.mu, pos.log_var, neg.mu, neg.log_var, tau)
    if g is None:
        z = np.zeros(anchor.dim)
        g = (z, z, z, z, z, z)
    return loss, {"anchor": (g[0], g[1]), "pos": (g[2], g[3]), "neg": (g[4], g[5])}


def _triplet_step(d, mu_a, lv_a, mu_p, lv_p, mu_n, lv_n, tau):
    vp, ap_mu, ap_lv, p_mu, p_lv = d(mu_a, lv_a, mu_p, lv_p)
    vn, an_mu, an_lv, n_mu, n_lv = d(mu_a, lv_a, mu_n, lv_n)
    margin = vp - vn + tau
    if margin <= 0:
        return 0.0, None
    return float(margin), (ap_mu - an_mu, ap_lv - an_lv, p_mu, p_lv, -n_mu, -n_lv)


def rank_row(P_hat: np.ndarray, anchor: int) -> np.ndarray:
    """Labels other than ``anchor`` by descending transfer probability.

    Ties are broken by ascending label index.
    """
    row = np.asarray(P_hat[anchor], dtype=np.float64)
    order = np.argsort(-row, kind="stable")
    return order[order != anchor]


def triplet_schedule(P_hat: np.ndarray, pairs_per_anchor: int) -> list[tuple[int, int, int]]:
    """Fixed visit order of (anchor, pos, neg) triplets for one round."""
    c = P_hat.shape[0]
    n_pairs = min(c - 2, pairs_per_anchor)
    out = []
    if n_pairs <= 0:
        return out
    for i in range(c):
        ranked = rank_row(P_hat, i)
        for j in range(n_pairs):
            out.append((i, int(ranked[j]), int(ranked[j + 1])))
    return out


def init_embeddings(c: int, cfg: EmbeddingConfig) -> EmbeddingSet:
    rng = np.random.default_rng(cfg.seed)
    mu = rng.normal(0.0, 1.0 / np.sqrt(cfg.latent_dim), size=(c, cfg.latent_dim))
    return EmbeddingSet(mu, np.zeros((c, cfg.latent_dim)))


def _divergence_rows(mu_a, lv_a, mu_b, lv_b, kind, gaussian_mode):
    """Vectorized divergence between matching rows of two parameter arrays."""
    if GaussianMode(gaussian_mode) is GaussianMode.POINT:
        return np.sum((mu_a - mu_b) ** 2, axis=-1)
    if Divergence(kind) is Divergence.JS:
        mu_m = 0.5 * (mu_a + mu_b)
        lv_m = np.log(0.5 * (np.exp(lv_a) + np.exp(lv_b)))
        return 0.5 * (_divergence_rows(mu_a, lv_a, mu_m, lv_m, Divergence.KL, gaussian_mode)
                      + _divergence_rows(mu_b, lv_b, mu_m, lv_m, Divergence.KL, gaussian_mode))
    ratio = np.exp(lv_a - lv_b)
    sq = (mu_a - mu_b) ** 2 * np.exp(-lv_b)
    return 0.5 * np.sum(ratio + sq - 1.0 - lv_a + lv_b, axis=-1)


def triplet_margins(emb: EmbeddingSet, triplets, tau: float, kind=Divergence.KL,
                    gaussian_mode=GaussianMode.GAUSSIAN) -> np.ndarray:
    """``D(a||pos) - D(a||neg) + tau`` for every (anchor, pos, neg) row."""
    T = np.asarray(triplets, dtype=np.intp).reshape(-1, 3)
    mu, lv = emb.mu, emb.log_var
    a, p, n = T[:, 0], T[:, 1], T[:, 2]
    d_pos = _divergence_rows(mu[a], lv[a], mu[p], lv[p], kind, gaussian_mode)
    d_neg = _divergence_rows(mu[a], lv[a], mu[n], lv[n], kind, gaussian_mode)
    return d_pos - d_neg + tau


def mean_hinge(emb: EmbeddingSet, triplets, tau: float, kind=Divergence.KL,
               gaussian_mode=GaussianMode.GAUSSIAN) -> float:
    if len(triplets) == 0:
        return 0.0
    margins = triplet_margins(emb, triplets, tau, kind, gaussian_mode)
    if not np.all(np.isfinite(margins)):
        return float("inf")
    return float(np.mean(np.maximum(margins, 0.0)))


def satisfied_fraction(emb: EmbeddingSet, triplets, tau: float, kind=Divergence.KL,
                       gaussian_mode=GaussianMode.GAUSSIAN) -> float:
    """Share of triplets with ``D(a||pos) + tau <= D(a||neg)``."""
    if len(triplets) == 0:
        return 1.0
    return float(np.mean(triplet_margins(emb, triplets, tau, kind, gaussian_mode) <= 0))


def train_embeddings(P_hat: np.ndarray, cfg: EmbeddingConfig) -> EmbeddingSet:
    """Fit one Gaussian per label to the ranking structure of ``P_hat``.

    Each round sweeps the triplets (anchors ascending, ranks ascending) and
    takes one gradient step per active triplet on the ``(mu, log_var)`` of
    its anchor, positive and negative. Per-triplet steps on a hinge do not
    decrease the total loss monotonically, so after every sweep the mean
    hinge is re-evaluated and the best parameters seen so far are kept;
    ``round_losses`` therefore never increases while ``sweep_losses`` records
    the raw trajectory. Deterministic for a fixed ``cfg.seed``.
    """
    P_hat = np.asarray(P_hat, dtype=np.float64)
    c = P_hat.shape[0]
    emb = init_embeddings(c, cfg)
    triplets = triplet_schedule(P_hat, cfg.pairs_per_anchor)
    d = _grad_fn(cfg.divergence, cfg.gaussian_mode)
    point = cfg.gaussian_mode is GaussianMode.POINT
    kind, mode = cfg.divergence, cfg.gaussian_mode
    mu, lv = emb.mu.copy(), emb.log_var.copy()
    lr, tau = cfg.learning_rate, cfg.tau

    best = mean_hinge(emb, triplets, tau, kind, mode)
    emb.round_losses.append(best)
    emb.sweep_losses.append(best)
    current = best
    for _ in range(cfg.rounds):
        if current == 0.0:
            # every hinge inactive: further sweeps are no-ops
            emb.round_losses.append(best)
            emb.sweep_losses.append(current)
            continue
        # overflow is detected below, after the sweep
        with np.errstate(over="ignore", invalid="ignore"):
            for i, p, n in triplets:
                _, g = _triplet_step(d, mu[i], lv[i], mu[p], lv[p], mu[n], lv[n], tau)
                if g is None:
                    continue
                mu[i] -= lr * g[0]
                mu[p] -= lr * g[2]
                mu[n] -= lr * g[4]
                if not point:
                    lv[i] -= lr * g[1]
                    lv[p] -= lr * g[3]
                    lv[n] -= lr * g[5]
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(lv))):
            raise FloatingPointError("label embedding training diverged to non-finite parameters; "
                                     "lower the learning rate")
        current = mean_hinge(EmbeddingSet(mu, lv), triplets, tau, kind, mode)
        if current <= best:
            best = current
            emb.mu[...] = mu
            emb.log_var[...] = lv
        emb.round_losses.append(best)
        emb.sweep_losses.append(current)
    return emb


def embed_instance(y, emb: EmbeddingSet) -> np.ndarray:
    """Sum of the means of the labels switched on in ``y``."""
    y = np.asarray(y, dtype=np.float64).ravel()
    return y @ emb.mu


def embed_labels(labels, emb: EmbeddingSet) -> np.ndarray:
    """Row-wise :func:`embed_instance` for a sparse ``n x c`` label matrix."""
    Y = sp.csr_matrix(labels, dtype=np.float64)
    return np.asarray(Y @ emb.mu)


def dump_embeddings(path, emb: EmbeddingSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for l in range(emb.c):
            mu = " ".join(f"{v:.17g}" for v in emb.mu[l])
            var = " ".join(f"{v:.17g}" for v in np.exp(emb.log_var[l]))
            fh.write(f"{l} {mu} | {var}\n")
