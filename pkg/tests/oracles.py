"""Independent reference implementations used to cross-check the library.

Everything here is deliberately naive: explicit loops, series expansions,
pairwise comparisons. None of it shares code with the package under test.
"""

import math

import numpy as np

from egmae import autodiff as ad

# ---------------------------------------------------------------------------
# gradient checking


def finite_difference(f, arrays, index, h=1e-5):
    """Central-difference gradient of scalar ``f`` w.r.t. ``arrays[index]``."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    x = base[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(*base)
        x[idx] = orig - h
        fm = f(*base)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return grad


def max_rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def gradcheck(fn, arrays, rng, h=1e-5):
    """Worst relative error between tape gradients and central differences.

    ``fn`` maps Tensors to one Tensor of any shape. Non-scalar outputs are
    contracted with a fixed random probe so the differentiated quantity is
    a scalar without bypassing the op's own backward rule.
    """
    tensors = [ad.Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    probe = rng.standard_normal(out.data.shape)
    loss = ad.sum_all(ad.mul(out, ad.Tensor(probe)))
    loss.backward()

    def scalar(*arrs):
        with ad.no_grad():
            value = fn(*[ad.Tensor(a) for a in arrs])
        return float((value.data * probe).sum())

    worst = 0.0
    for i in range(len(arrays)):
        fd = finite_difference(scalar, arrays, i, h=h)
        worst = max(worst, max_rel_err(tensors[i].grad, fd))
    return worst


# ---------------------------------------------------------------------------
# value oracles


def conv2d_reference(x, weight, bias, stride, padding, groups):
    """Direct seven-loop convolution, no vectorization."""
    n, c_in, h, w = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    c_out_g = c_out // groups
    out = np.zeros((n, c_out, h_out, w_out), dtype=x.dtype)
    for ni in range(n):
        for co in range(c_out):
            g = co // c_out_g
            for ho in range(h_out):
                for wo in range(w_out):
                    acc = 0.0 if bias is None else bias[co]
                    for ci in range(c_in_g):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (
                                    xp[ni, g * c_in_g + ci, ho * stride + i, wo * stride + j]
                                    * weight[co, ci, i, j]
                                )
                    out[ni, co, ho, wo] = acc
    return out


def erf_series(z, terms=80):
    """Maclaurin series for erf; converges past 1e-14 for |z| <= 4."""
    z = float(z)
    total = 0.0
    power = z
    for n in range(terms):
        total += power / (2 * n + 1)
        power *= -z * z / (n + 1)
    return 2.0 / math.sqrt(math.pi) * total


def normal_cdf_series(x):
    return 0.5 * (1.0 + erf_series(x / math.sqrt(2.0)))


def gelu_reference(x):
    return float(x) * normal_cdf_series(x)


def global_avg_pool_reference(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            total = 0.0
            for i in range(h):
                for j in range(w):
                    total += x[ni, ci, i, j]
            out[ni, ci] = total / (h * w)
    return out


def mse_reference(pred, target):
    total = 0.0
    for p, t in zip(pred.ravel(), target.ravel()):
        total += (p - t) ** 2
    return total / pred.size


def cross_entropy_reference(logits, labels):
    """Direct -sum(y * log softmax) per sample, averaged."""
    total = 0.0
    for row, label in zip(logits, labels):
        e = np.exp(row - row.max())
        p = e / e.sum()
        onehot = np.zeros_like(p)
        onehot[label] = 1.0
        total += -float((onehot * np.log(p)).sum())
    return total / len(labels)


def entropy_reference(patch, bins):
    """Counting-oracle Shannon entropy of one patch in nats."""
    counts = {}
    for v in np.asarray(patch, dtype=np.float64).ravel():
        b = min(int(v * bins), bins - 1)
        counts[b] = counts.get(b, 0) + 1
    total = sum(counts.values())
    h = 0.0
    for c in counts.values():
        p = c / total
        h -= p * math.log(p)
    return h


# ---------------------------------------------------------------------------
# classification metric oracles


def confusion_reference(true, pred, n_classes):
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(true, pred):
        m[t, p] += 1
    return m


def prf_reference(true, pred, n_classes):
    """Per-class precision/recall/F1 by direct counting; 0/0 counts as 0."""
    precision, recall, f1 = [], [], []
    for c in range(n_classes):
        tp = sum(1 for t, p in zip(true, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(true, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(true, pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precision.append(prec)
        recall.append(rec)
        f1.append(f)
    return precision, recall, f1


def auc_pairwise_reference(scores, positives):
    """O(n^2) Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 ties.

    Returns None when either side is empty.
    """
    pos = [s for s, is_pos in zip(scores, positives) if is_pos]
    neg = [s for s, is_pos in zip(scores, positives) if not is_pos]
    if not pos or not neg:
        return None
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))


# ---------------------------------------------------------------------------
# random instance generators for the gradient suite

_BROADCAST_PAIRS = [
    ((3, 4), (3, 4)),
    ((3, 4), (4,)),
    ((2, 1, 5), (2, 3, 5)),
    ((3, 1), (1, 4)),
    ((2, 3), ()),
]


def _case_add(rng):
    sa, sb = _BROADCAST_PAIRS[rng.integers(len(_BROADCAST_PAIRS))]
    return ad.add, [rng.standard_normal(sa), rng.standard_normal(sb)]


def _case_mul(rng):
    sa, sb = _BROADCAST_PAIRS[rng.integers(len(_BROADCAST_PAIRS))]
    return ad.mul, [rng.standard_normal(sa), rng.standard_normal(sb)]


def _case_sum_all(rng):
    return ad.sum_all, [rng.standard_normal((2, 3, 4))]


def _case_linear(rng):
    n = int(rng.integers(1, 5))
    f_in = int(rng.integers(1, 6))
    f_out = int(rng.integers(1, 6))
    return ad.linear, [
        rng.standard_normal((n, f_in)),
        rng.standard_normal((f_out, f_in)),
        rng.standard_normal(f_out),
    ]


def _case_conv2d(rng):
    c_in = int(rng.choice([2, 4]))
    groups = int(rng.choice([1, 2, c_in]))
    c_out = groups * int(rng.integers(1, 3))
    k = int(rng.choice([1, 2, 3]))
    stride = int(rng.choice([1, 2]))
    padding = int(rng.integers(0, 2))
    h = int(rng.integers(k, k + 4))
    w = int(rng.integers(k, k + 4))

    def fn(x, wt, b):
        return ad.conv2d(x, wt, b, stride=stride, padding=padding, groups=groups)

    return fn, [
        rng.standard_normal((2, c_in, h, w)),
        rng.standard_normal((c_out, c_in // groups, k, k)),
        rng.standard_normal(c_out),
    ]


def _case_layer_norm(rng):
    if rng.random() < 0.5:
        shape = (2, int(rng.integers(2, 6)))
    else:
        shape = (2, int(rng.integers(2, 5)), 3, 3)
    c = shape[1]

    # eps floors the variance so central differences stay inside their
    # truncation budget even when a position draws nearly equal channels;
    # the gradient formula itself does not depend on eps
    def fn(x, gamma, beta):
        return ad.layer_norm(x, gamma, beta, eps=1e-3)

    return fn, [
        rng.standard_normal(shape),
        rng.standard_normal(c),
        rng.standard_normal(c),
    ]


def _case_gelu(rng):
    return ad.gelu, [2.0 * rng.standard_normal((4, 5))]


def _case_global_avg_pool(rng):
    return ad.global_avg_pool, [rng.standard_normal((2, 3, 4, 5))]


def _case_softmax(rng):
    return ad.softmax, [2.0 * rng.standard_normal((4, 6))]


def _case_nearest_upsample(rng):
    factor = int(rng.integers(1, 4))

    def fn(x):
        return ad.nearest_upsample(x, factor)

    return fn, [rng.standard_normal((2, 3, 3, 4))]


def _case_pixel_shuffle(rng):
    r = int(rng.integers(1, 3))
    c = int(rng.integers(1, 3))

    def fn(x):
        return ad.pixel_shuffle(x, r)

    return fn, [rng.standard_normal((2, c * r * r, 3, 4))]


def _case_mse_loss(rng):
    shape = (3, 4)
    if rng.random() < 0.5:
        weight = rng.random(shape) + 0.1

        def fn(p, t):
            return ad.mse_loss(p, t, weight=weight)

    else:
        fn = ad.mse_loss
    return fn, [rng.standard_normal(shape), rng.standard_normal(shape)]


def _case_cross_entropy_loss(rng):
    n, c = 5, 4
    logits = rng.standard_normal((n, c))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    labels = rng.integers(0, c, size=n)

    def fn(p):
        return ad.cross_entropy_loss(p, labels)

    return fn, [probs]


def _case_cross_entropy_with_logits(rng):
    n, c = 5, 4
    labels = rng.integers(0, c, size=n)

    def fn(z):
        return ad.cross_entropy_with_logits(z, labels)

    return fn, [rng.standard_normal((n, c))]


OP_CASES = {
    "add": _case_add,
    "mul": _case_mul,
    "sum_all": _case_sum_all,
    "linear": _case_linear,
    "conv2d": _case_conv2d,
    "layer_norm": _case_layer_norm,
    "gelu": _case_gelu,
    "global_avg_pool": _case_global_avg_pool,
    "softmax": _case_softmax,
    "nearest_upsample": _case_nearest_upsample,
    "pixel_shuffle": _case_pixel_shuffle,
    "mse_loss": _case_mse_loss,
    "cross_entropy_loss": _case_cross_entropy_loss,
    "cross_entropy_with_logits": _case_cross_entropy_with_logits,
}
