"""Independent reference computations used as test oracles.

Deliberately naive: explicit Python loops over list data, no shared code with
the package beyond parameter containers.
"""

import math


def to_lists(m):
    return [[float(x) for x in row] for row in m]


def brute_similarity(q, d):
    q, d = to_lists(q), to_lists(d)
    p, l1, l2 = len(q), len(q[0]), len(d[0])
    return [[sum(q[k][i] * d[k][j] for k in range(p)) for j in range(l2)] for i in range(l1)]


def brute_colbert(s):
    total = 0.0
    for row in to_lists(s):
        best = row[0]
        for v in row[1:]:
            if v > best:
                best = v
        total += best
    return total


def brute_topk(s, k):
    total = 0.0
    for row in to_lists(s):
        remaining = list(row)
        for _ in range(k):
            j = max(range(len(remaining)), key=lambda idx: remaining[idx])
            total += remaining.pop(j)
    return total


def brute_knrm(s, mus, sigmas, w, floor=1e-10):
    score = 0.0
    for mu, sigma, wk in zip(mus, sigmas, w):
        phi = 0.0
        for row in to_lists(s):
            acc = 0.0
            for v in row:
                acc += math.exp(-((v - mu) ** 2) / (2 * sigma * sigma))
            phi += math.log(max(acc, floor))
        score += wk * phi
    return score


def _ln(v, eps):
    n = len(v)
    mean = sum(v) / n
    var = sum((x - mean) ** 2 for x in v) / n
    return [(x - mean) / math.sqrt(var + eps) for x in v]


def _affine(W, x, b):
    return [sum(W[r][c] * x[c] for c in range(len(x))) + b[r] for r in range(len(W))]


def _relu(v):
    return [x if x > 0 else 0.0 for x in v]


def _block(x, Wa, ba, Wb, bb, eps):
    return _ln(_relu(_affine(Wb, _ln(_relu(_affine(Wa, x, ba)), eps), bb)), eps)


def reference_sep_lite(s, p):
    """Straight-line evaluation: row MLP on each row, column MLP on each column, projection."""
    s = to_lists(s)
    W1, b1, W2, b2 = to_lists(p.W1), list(p.b1), to_lists(p.W2), list(p.b2)
    W3, b3, W4, b4 = to_lists(p.W3), list(p.b3), to_lists(p.W4), list(p.b4)
    l1, l2 = len(s), len(s[0])
    s1 = [_block(s[i], W1, b1, W2, b2, p.eps) for i in range(l1)]
    cols = [_block([s1[i][j] for i in range(l1)], W3, b3, W4, b4, p.eps) for j in range(l2)]
    s2 = [[cols[j][i] for j in range(l2)] for i in range(l1)]
    w = list(p.w)
    return sum(w[i * l2 + j] * s2[i][j] for i in range(l1) for j in range(l2))


def reference_flat_lite(s, p):
    z = [v for row in to_lists(s) for v in row]
    W, b, a = to_lists(p.W), list(p.b), list(p.a)
    return sum(a[r] * max(0.0, sum(W[r][c] * z[c] for c in range(len(z))) + b[r]) for r in range(len(W)))


def central_difference(f, arr, h=1e-5):
    """Numerical gradient of scalar f() w.r.t. every entry of ``arr`` (perturbed in place)."""
    import numpy as np

    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        g[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    """max |a - n| over the tensor, scaled by the larger of the two max magnitudes."""
    import numpy as np

    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(np.abs(a).max(), np.abs(n).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)
