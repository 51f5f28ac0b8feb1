"""Test-data generators and brute-force oracles shared by the test modules."""

import numpy as np

from conftest import make_tensor


def brute_hit_at_k(selected, entries, k):
    """hit@k straight from the definition: rank every model by mean entry, ties by id."""
    T, n, m = entries.shape
    hits = 0
    for i in range(n):
        if selected[i] is None:
            continue
        means = []
        for j in range(m):
            col = [entries[t, i, j] for t in range(T) if not np.isnan(entries[t, i, j])]
            means.append(sum(col) / len(col) if col else float("inf"))
        better = sum(1 for j in range(m) if (means[j], j) < (means[selected[i]], selected[i]))
        hits += better < k
    return 100.0 * hits / n


def random_small_tensor(rng):
    T, n, m = int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, 11))
    # coarse values so ties are frequent
    e = rng.integers(0, 4, size=(T, n, m)).astype(float) / 4
    e[rng.random(e.shape) < 0.15] = np.nan
    for i in range(n):
        if np.all(np.isnan(e[:, i, :])):
            e[0, i, 0] = 0.5
    sel = [None if rng.random() < 0.2 else int(rng.integers(0, m)) for _ in range(n)]
    return make_tensor(e), sel


def planted_blobs(seed, d=6, per_blob=10, m=8):
    """Two separated meta-feature blobs whose members prefer different models."""
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    centers = [5.0 * direction, -5.0 * direction]
    best = rng.choice(m, size=2, replace=False)
    X, rows, blob = [], [], []
    for b in (0, 1):
        for _ in range(per_blob):
            X.append(centers[b] + rng.normal(scale=0.3, size=d))
            row = rng.uniform(0.5, 1.0, size=m)
            row[best[b]] = rng.uniform(0.0, 0.1)
            rows.append(row)
            blob.append(b)
    ids = [f"t{i}" for i in range(len(X))]
    P = make_tensor(np.array(rows), dataset_ids=ids)
    tests = [(centers[b] + rng.normal(scale=0.3, size=d), b) for b in (0, 1) for _ in range(5)]
    return np.array(X), P, np.array(blob), tests


def brute_blob_best(P, blob):
    agg = P.aggregates()
    return [int(np.argmin(agg[blob == b].mean(axis=0))) for b in (0, 1)]


def fd_gradient_error(sizes, seed, eps=1e-5):
    """Max relative error between analytic and central-difference MLP gradients."""
    from tsselect.selectors import init_mlp, mlp_gradients, mlp_loss

    rng = np.random.default_rng(seed)
    m = init_mlp(sizes, seed)
    for b in m.biases:
        b[:] = rng.normal(size=b.shape) * 0.1
    X = rng.normal(size=(5, sizes[0]))
    Y = rng.normal(size=(5, sizes[-1]))
    mask = rng.random(Y.shape) < 0.8
    gW, gb = mlp_gradients(m, X, Y, mask)
    worst = 0.0
    for params, grads in ((m.weights, gW), (m.biases, gb)):
        for P, G in zip(params, grads):
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + eps
                up = mlp_loss(m, X, Y, mask)
                P[idx] = old - eps
                down = mlp_loss(m, X, Y, mask)
                P[idx] = old
                num = (up - down) / (2 * eps)
                worst = max(worst, abs(num - G[idx]) / max(1e-8, abs(num) + abs(G[idx])))
    return worst
