"""One test per acceptance criterion, each at its stated tolerance.

Every test records a PASS/FAIL line, repeated in the terminal summary.
"""

import itertools
import math
import os
import time
from pathlib import Path

import mpmath
import numpy as np
import scipy.sparse as sp

from sldl import correlation, decoder, embedding, metrics, regressor
from sldl.dataset import load_dataset
from sldl.pipeline import RunConfig, cross_validate
from sldl.regressor import LbfgsConfig
from sldl.synthetic import clustered_dataset, planted_transfer


def _rand_problem(rng, n, q, dim):
    X = rng.normal(size=(n, q))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X, rng.normal(size=(n, dim))


def test_gradient_correctness(criterion):
    rng = np.random.default_rng(101)
    h = 1e-6
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        n, q = int(rng.integers(5, 51)), int(rng.integers(2, 21))
        X, Z = _rand_problem(rng, n, q, 8)
        W = rng.normal(size=(q, 8))
        alpha = float(rng.uniform(0, 2))
        G = regressor.ridge_gradient(W, X, Z, alpha)
        num = np.empty_like(W)
        for idx in np.ndindex(W.shape):
            E = np.zeros_like(W)
            E[idx] = h
            num[idx] = (regressor.ridge_objective(W + E, X, Z, alpha)
                        - regressor.ridge_objective(W - E, X, Z, alpha)) / (2 * h)
        worst = max(worst, np.linalg.norm(G - num) / np.linalg.norm(num))
    elapsed = time.perf_counter() - start
    criterion("gradient correctness", worst < 1e-5 and elapsed < 5,
              f"max relative error {worst:.2e} (< 1e-5), {elapsed:.2f} s (< 5 s)")


def test_optimizer_oracle(criterion):
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(10):
        n, q, dim = int(rng.integers(20, 201)), int(rng.integers(2, 51)), int(rng.integers(1, 17))
        X, Z = _rand_problem(rng, n, q, dim)
        W = regressor.train(X, Z, 1.0).W
        W_star = regressor.closed_form_ridge(X, Z, 1.0)
        worst = max(worst, np.linalg.norm(W - W_star) / np.linalg.norm(W_star))
    elapsed = time.perf_counter() - start
    criterion("optimizer oracle", worst < 1e-4 and elapsed < 10,
              f"max relative Frobenius error {worst:.2e} (< 1e-4), {elapsed:.2f} s (< 10 s)")


def _kl_reference(mu_a, var_a, mu_b, var_b):
    with mpmath.workdps(50):
        s = mpmath.mpf(0)
        for ma, va, mb, vb in zip(mu_a, var_a, mu_b, var_b):
            ma, va, mb, vb = (mpmath.mpf(float(v)) for v in (ma, va, mb, vb))
            s += mpmath.log(vb / va) + (va + (ma - mb) ** 2) / vb - 1
        return float(s / 2)


def test_kl_oracle(criterion):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(1000):
        dim = int(rng.integers(1, 9))
        a = embedding.LabelGaussian(rng.normal(size=dim), rng.uniform(-1.5, 1.5, size=dim))
        b = embedding.LabelGaussian(rng.normal(size=dim), rng.uniform(-1.5, 1.5, size=dim))
        worst = max(worst, abs(embedding.kl_divergence(a, b) - _kl_reference(a.mu, a.var, b.mu, b.var)))
    one = embedding.LabelGaussian(np.zeros(1), np.zeros(1))
    four = embedding.LabelGaussian(np.zeros(1), np.log([4.0]))
    fwd, bwd = embedding.kl_divergence(one, four), embedding.kl_divergence(four, one)
    fwd_ref, bwd_ref = _kl_reference([0], [1], [0], [4]), _kl_reference([0], [4], [0], [1])
    fixture_ok = (abs(fwd - fwd_ref) < 1e-10 and abs(bwd - bwd_ref) < 1e-10
                  and f"{fwd:.5f}" == "0.31815" and f"{bwd:.5f}" == "0.80685")
    criterion("KL oracle", worst < 1e-10 and fixture_ok,
              f"max abs error {worst:.2e} over 1000 pairs (< 1e-10); fixture {fwd:.5f} vs {bwd:.5f}")


def test_transfer_matrix_fixture(criterion):
    P = correlation.transfer_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]), steps=2)
    fixture_err = np.abs(P - np.array([[2 / 7, 5 / 7], [5 / 7, 2 / 7]])).max()
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(100):
        n, c = int(rng.integers(1, 60)), int(rng.integers(1, 40))
        Y = sp.csr_matrix((rng.random((n, c)) < rng.uniform(0.02, 0.4)).astype(np.int8))
        P_hat = correlation.build_transfer(Y).P_hat
        worst = max(worst, np.abs(P_hat.sum(axis=1) - 1).max())
        assert np.all(P_hat >= 0)
    criterion("transfer-matrix fixture", fixture_err < 1e-12 and worst < 1e-9,
              f"fixture error {fixture_err:.1e} (< 1e-12); row-sum deviation {worst:.1e} (< 1e-9) on 100 Y")


def test_embedding_training_property(criterion):
    P = planted_transfer(c=20, seed=1)
    cfg = embedding.EmbeddingConfig(latent_dim=64, rounds=200, seed=0)
    start = time.perf_counter()
    emb = embedding.train_embeddings(P, cfg)
    elapsed = time.perf_counter() - start
    triplets = embedding.triplet_schedule(P, cfg.pairs_per_anchor)
    frac = embedding.satisfied_fraction(emb, triplets, cfg.tau)
    rises = np.diff(emb.round_losses)
    monotone = bool(np.all(rises <= 1e-6))
    criterion("embedding training property", frac >= 0.8 and monotone and elapsed < 30,
              f"satisfied {frac:.3f} of {len(triplets)} (>= 0.8); max round-to-round rise {rises.max():.1e} "
              f"(<= 1e-6); {elapsed:.2f} s (< 30 s)")


def test_end_to_end_synthetic(criterion):
    d = clustered_dataset(n=500, clusters=5, seed=0)
    start = time.perf_counter()
    res = cross_validate(d, RunConfig(seed=0), folds=5)
    elapsed = time.perf_counter() - start
    p1, p3 = res.report.mean["P@1"], res.report.mean["P@3"]
    criterion("end-to-end synthetic", p1 >= 0.9 and p3 >= 0.8 and elapsed < 60,
              f"P@1 {p1:.3f} (>= 0.9), P@3 {p3:.3f} (>= 0.8), {elapsed:.2f} s (< 60 s)")


def _oracle_metrics(ranking, rel, xi, k):
    hits = [r in rel for r in ranking[:k]]
    disc = [1 / math.log2(i + 2) for i in range(k)]
    ideal = sum(disc)
    return (sum(hits) / k,
            sum(d for h, d in zip(hits, disc) if h) / ideal,
            sum(1 / xi[r] for r, h in zip(ranking, hits) if h) / k,
            sum(d / xi[r] for r, h, d in zip(ranking, hits, disc) if h) / ideal)


def test_metric_identities(criterion):
    rng = np.random.default_rng(505)
    identity_ok = unit_ok = True
    for _ in range(1000):
        c = int(rng.integers(1, 30))
        ranking = rng.permutation(c)
        rel = np.flatnonzero(rng.random(c) < 0.3)
        xi = rng.uniform(0.01, 1, size=c)
        for norm in metrics.NORMALIZERS:
            identity_ok &= metrics.ndcg_at_k(ranking, rel, 1, norm) == metrics.precision_at_k(ranking, rel, 1)
            identity_ok &= metrics.psndcg_at_k(ranking, rel, xi, 1, norm) == metrics.psp_at_k(ranking, rel, xi, 1)
        k = int(rng.integers(1, c + 1))
        unit_ok &= metrics.psp_at_k(ranking, rel, np.ones(c), k) == metrics.precision_at_k(ranking, rel, k)
    cases = 0
    worst = 0.0
    for c in range(1, 9):
        xi = rng.uniform(0.05, 1, size=c)
        # every ranking for c <= 5; a fixed random sample of rankings beyond
        perms = itertools.permutations(range(c)) if c <= 5 else (rng.permutation(c) for _ in range(60))
        for ranking in perms:
            ranking = list(ranking)
            for mask in range(2 ** c):
                rel = {l for l in range(c) if mask >> l & 1}
                for k in range(1, c + 1):
                    got = (metrics.precision_at_k(ranking, rel, k), metrics.ndcg_at_k(ranking, rel, k),
                           metrics.psp_at_k(ranking, rel, xi, k), metrics.psndcg_at_k(ranking, rel, xi, k))
                    want = _oracle_metrics(ranking, rel, xi, k)
                    worst = max(worst, max(abs(g - w) for g, w in zip(got, want)))
                    cases += 1
    criterion("metric identities", identity_ok and unit_ok and worst < 1e-12,
              f"@1 identities exact on 1000 rankings: {identity_ok}; xi=1 collapse exact: {unit_ok}; "
              f"brute-force max deviation {worst:.1e} over {cases} cases with c <= 8")


def test_decoding_bound_harness(criterion):
    rng = np.random.default_rng(606)
    c, dim, n_train = 12, 6, 40
    mu = rng.normal(size=(c, dim))
    Y_train = (rng.random((n_train, c)) < 0.25).astype(int)
    Z_train = Y_train @ mu
    trials = holds = skipped = 0
    while trials < 1000:
        y = (rng.random(c) < 0.25).astype(int)
        z = y @ mu
        z_hat = z + rng.normal(scale=rng.uniform(0.1, 3.0), size=dim)
        nearest = int(np.argmin(np.linalg.norm(Z_train - z_hat, axis=1)))
        z_tilde, y_decoded = Z_train[nearest], Y_train[nearest]
        if np.linalg.norm(z - z_tilde) > np.linalg.norm(z - z_hat):
            skipped += 1
            continue
        cost = float(np.sum((y - y_decoded) ** 2))
        holds += decoder.check_bound(z, z_hat, z_tilde, cost, b=2.0)
        trials += 1
    criterion("decoding bound harness", holds == trials,
              f"bound held in {holds}/{trials} trials with b=2 ({skipped} draws rejected by the precondition)")


def test_complexity_guard(criterion):
    rng = np.random.default_rng(707)
    n, q, dim, c = 3000, 300, 32, 100
    X, _ = _rand_problem(rng, n, q, 1)
    cfg = LbfgsConfig(grad_tol=0.0, max_iters=10)

    def targets(n_labels):
        Y = sp.csr_matrix((rng.random((n, n_labels)) < 3.0 / n_labels).astype(float))
        mu = rng.normal(0, 1 / np.sqrt(dim), size=(n_labels, dim))
        return embedding.embed_labels(Y, embedding.EmbeddingSet(mu, np.zeros_like(mu)))

    Zs = {c: targets(c), 2 * c: targets(2 * c)}
    times = {c: [], 2 * c: []}
    evals = {}
    for _ in range(7):
        for labels, Z in Zs.items():
            start = time.perf_counter()
            res = regressor.lbfgs_minimize(lambda W: regressor.ridge_objective(W, X, Z, 1.0),
                                           lambda W: regressor.ridge_gradient(W, X, Z, 1.0),
                                           np.zeros((q, dim)), cfg)
            times[labels].append(time.perf_counter() - start)
            evals[labels] = res.n_evals
    t1, t2 = min(times[c]), min(times[2 * c])
    change = abs(t2 - t1) / t1
    criterion("complexity guard", change < 0.10 and evals[c] == evals[2 * c],
              f"regressor time c={c}: {t1 * 1e3:.1f} ms, c={2 * c}: {t2 * 1e3:.1f} ms, change {change:.1%} (< 10%); "
              f"objective evaluations {evals[c]} vs {evals[2 * c]}")


def _cal500_path():
    env = os.environ.get("SLDL_CAL500")
    candidates = [Path(env)] if env else []
    candidates.append(Path(__file__).parent / "data" / "cal500.txt")
    return next((p for p in candidates if p.is_file()), None)


def test_cal500_spot_check(criterion):
    path = _cal500_path()
    if path is None:
        criterion.skip("cal500 spot check", "dataset file not found; set SLDL_CAL500 or add tests/data/cal500.txt")
    d = load_dataset(path, one_based=os.environ.get("SLDL_CAL500_ONE_BASED") == "1")
    res = cross_validate(d, RunConfig(seed=0), folds=10, dims=range(16, 129, 16), k_grid=range(10, 101, 10),
                         jobs=os.cpu_count() or 1)
    p1, p5 = 100 * res.report.mean["P@1"], 100 * res.report.mean["P@5"]
    criterion("cal500 spot check", abs(p1 - 88.45) <= 3.0 and abs(p5 - 69.64) <= 3.0,
              f"P@1 {p1:.2f} (88.45 +- 3), P@5 {p5:.2f} (69.64 +- 3), selected (dim, k) = {res.selected}")
