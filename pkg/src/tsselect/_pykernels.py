"""Pure-Python versions of the hot loops in ``_ckernels.pyx``.

Both implementations perform the same floating-point operations in the same
order, so they return bit-identical results. Keep them in lockstep.
"""

MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64_stream(seed, count):
    """First ``count`` outputs of a splitmix64 generator seeded with ``seed``."""
    state = seed & MASK64
    out = []
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out.append(z ^ (z >> 31))
    return out


def exp_smooth(values, alpha):
    n = len(values)
    out = [0.0] * n
    if n == 0:
        return out
    s = float(values[0])
    out[0] = s
    beta = 1.0 - alpha
    for t in range(1, n):
        s = alpha * float(values[t]) + beta * s
        out[t] = s
    return out


def _path_predict(X, y, idx, query, n_lags, max_depth):
    depth = 0
    while True:
        m = len(idx)
        s = 0.0
        sq = 0.0
        first = y[idx[0]]
        pure = True
        for i in idx:
            v = y[i]
            s += v
            sq += v * v
            if v != first:
                pure = False
        mean = s / m
        if m < 2 or pure or (max_depth >= 0 and depth >= max_depth):
            return mean
        best = sq - s * s / m
        best_f = -1
        best_thr = 0.0
        for f in range(n_lags):
            order = sorted(idx, key=lambda i: X[i][f])
            sl = 0.0
            sql = 0.0
            for p in range(m - 1):
                i = order[p]
                v = y[i]
                sl += v
                sql += v * v
                xv = X[i][f]
                xn = X[order[p + 1]][f]
                if xv < xn:
                    nl = p + 1
                    nr = m - nl
                    sr = s - sl
                    sqr = sq - sql
                    cand = (sql - sl * sl / nl) + (sqr - sr * sr / nr)
                    if cand < best:
                        best = cand
                        best_f = f
                        best_thr = (xv + xn) / 2.0
        if best_f < 0:
            return mean
        go_left = query[best_f] <= best_thr
        idx = [i for i in idx if (X[i][best_f] <= best_thr) == go_left]
        depth += 1


def forest_predict(series, n_lags, n_estimators, max_depth, seed):
    """Bagged regression-tree forecast of the value following ``series``.

    Trees are grown on a ``n_lags`` lag embedding with bootstrap resampling.
    Only the root-to-leaf path that the query vector follows is grown, which
    yields the same prediction as growing the full tree. ``max_depth < 0``
    means unlimited depth.
    """
    series = [float(v) for v in series]
    n = len(series)
    ns = n - n_lags
    X = [[series[i + n_lags - 1 - f] for f in range(n_lags)] for i in range(ns)]
    y = [series[i + n_lags] for i in range(ns)]
    query = [series[n - 1 - f] for f in range(n_lags)]
    draws = splitmix64_stream(seed, n_estimators * ns)
    total = 0.0
    pos = 0
    for _ in range(n_estimators):
        idx = [draws[pos + j] % ns for j in range(ns)]
        pos += ns
        total += _path_predict(X, y, idx, query, n_lags, max_depth)
    return total / n_estimators
