"""Textbook reference formulas used to check the metrics module.

Written from the definitions with plain loops; shares no code with segmn.
"""

import math


def midranks(x):
    """1-based average ranks; tied values share the mean of their positions."""
    out = []
    for xi in x:
        below = sum(1 for xj in x if xj < xi)
        equal = sum(1 for xj in x if xj == xi)
        out.append(1 + below + (equal - 1) / 2)
    return out


def pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def spearman_textbook(x, y):
    """Pearson correlation of midranks (handles ties)."""
    return pearson(midranks(x), midranks(y))


def spearman_rank_difference(x, y):
    """1 - 6 sum d^2 / (n (n^2 - 1)); valid only without ties."""
    n = len(x)
    d2 = sum((a - b) ** 2 for a, b in zip(midranks(x), midranks(y)))
    return 1 - 6 * d2 / (n * (n * n - 1))


def kendall_tau_b_textbook(x, y):
    """(P - Q) / sqrt((P + Q + T_x) (P + Q + T_y)) from pair counts."""
    P = Q = tx = ty = 0
    n = len(x)
    for i in range(n):
        for j in range(i + 1, n):
            dx, dy = x[i] - x[j], y[i] - y[j]
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif (dx > 0) == (dy > 0):
                P += 1
            else:
                Q += 1
    return (P - Q) / math.sqrt((P + Q + tx) * (P + Q + ty))


def precision_at_k_textbook(pred, truth, k):
    """Predicted top-k by (score desc, index asc); true set = all candidates
    scoring at least the k-th largest true value."""
    idx = sorted(range(len(pred)), key=lambda i: (-pred[i], i))[:k]
    kth = sorted(truth, reverse=True)[k - 1]
    true_set = {i for i in range(len(truth)) if truth[i] >= kth}
    return len(set(idx) & true_set) / k
