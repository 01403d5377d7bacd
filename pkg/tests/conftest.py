"""Shared fixtures and independent oracles for the test suite.

The oracles here are deliberately naive (quadruple loops, window scans,
central finite differences, a scalar re-statement of the allocation
procedure) and stay independent of the library's vectorized paths.
"""

import math

import numpy as np
import pytest

import freshnets as fn
import freshnets.tensor_core as tc


# ---------------------------------------------------------------- oracles

def naive_dct2(v):
    """Quadruple-loop evaluation of the orthonormal 2-D cosine transform."""
    d = v.shape[0]
    out = np.zeros((d, d))
    s = lambda j: math.sqrt(1.0 / d) if j == 0 else math.sqrt(2.0 / d)
    for j1 in range(d):
        for j2 in range(d):
            acc = 0.0
            for i1 in range(d):
                for i2 in range(d):
                    acc += (
                        math.cos(math.pi / d * (i1 + 0.5) * j1)
                        * math.cos(math.pi / d * (i2 + 0.5) * j2)
                        * v[i1, i2]
                    )
            out[j1, j2] = s(j1) * s(j2) * acc
    return out


def naive_maxpool2(x):
    """Direct window scan over non-overlapping 2x2 windows."""
    b, c, h, w = x.shape
    out = np.zeros((b, c, h // 2, w // 2))
    for bi in range(b):
        for ci in range(c):
            for y in range(h // 2):
                for xo in range(w // 2):
                    out[bi, ci, y, xo] = x[
                        bi, ci, 2 * y : 2 * y + 2, 2 * xo : 2 * xo + 2
                    ].max()
    return out


def oracle_allocate(d, m, n, k_total, alpha, beta):
    """Scalar step-through of the band allocation procedure."""
    nb = 2 * d - 1
    sizes = [m * n * (d - abs(j - (d - 1))) for j in range(nb)]
    f = []
    for j in range(nb):
        x = (j + 1) / nb
        if x == 1.0:
            f.append(0.0 if beta > 1 else (1.0 if beta == 1 else math.inf))
        else:
            f.append(x ** (alpha - 1) * (1 - x) ** (beta - 1))
    rates = [0.0] * nb
    clamped = {j for j in range(nb) if math.isinf(f[j])}
    for j in clamped:
        rates[j] = 1.0
    while True:
        free = [j for j in range(nb) if j not in clamped]
        if not free:
            break
        budget = k_total - sum(sizes[j] for j in clamped)
        denom = sum(f[j] * sizes[j] for j in free)
        if budget <= 0 or denom == 0:
            for j in free:
                rates[j] = 0.0
            break
        z = budget / denom
        newly = [j for j in free if z * f[j] > 1.0]
        if not newly:
            for j in free:
                rates[j] = z * f[j]
            break
        for j in newly:
            rates[j] = 1.0
            clamped.add(j)
    target = [rates[j] * sizes[j] for j in range(nb)]
    counts = [min(max(1, math.floor(t)), sizes[j]) for j, t in enumerate(target)]
    frac = [t - math.floor(t) for t in target]
    while sum(counts) < k_total:
        for j in sorted(range(nb), key=lambda j: (-frac[j], j)):
            if sum(counts) == k_total:
                break
            if counts[j] < sizes[j]:
                counts[j] += 1
    while sum(counts) > k_total:
        for j in sorted(range(nb), key=lambda j: (frac[j], -j)):
            if sum(counts) == k_total:
                break
            if counts[j] > 1:
                counts[j] -= 1
    return counts, rates


def finite_diff_grads(loss_fn, params, eps=1e-5):
    """Central-difference gradient of a scalar loss over parameter arrays."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = loss_fn()
            flat[i] = saved - eps
            down = loss_fn()
            flat[i] = saved
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    """Worst relative disagreement; denominators floored for near-zero grads."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def check_network_gradients(net, x, labels, eps=1e-5):
    """Analytic vs central-difference gradient over every trainable scalar."""
    net.loss_and_backward(x, labels, train=False)
    analytic = [g.copy() for g in net.grads()]

    def loss_fn():
        logits = net.forward_logits(x, train=False)
        return tc.softmax_xent(logits, labels)[0]

    numeric = finite_diff_grads(loss_fn, net.params(), eps=eps)
    return max_rel_error(analytic, numeric)


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="session")
def data_dir():
    import os

    path = os.path.join(os.path.dirname(__file__), "..", "data", "mnist")
    path = os.path.abspath(path)
    if not os.path.isdir(path):
        pytest.skip("bundled digit data not present")
    return path


def tiny_fresh_net(seed, conv_k=8, fc_k=40):
    """conv-fresh(1->2, d=3, K=8) -> MP -> RL -> hashed fc(8->10, K=40)."""
    spec = fn.NetworkSpec(
        input_size=(4, 4),
        layers=(
            fn.LayerSpec("conv", 1, 2, 3, ("MP", "RL")),
            fn.LayerSpec("fc", 8, 10, ops=(),
                         compression_override={"rate": fc_k / 80}),
        ),
    )
    comp = fn.Compression(method="fresh", rate=conv_k / 18, alpha=0.25, beta=2.5)
    return fn.build(spec, comp, master_seed=seed)


def synthetic_task(n, seed, size=8, classes=10):
    """Classification fixture: fixed per-class patterns plus pixel noise."""
    rng = np.random.default_rng(seed)
    prototypes = rng.normal(size=(classes, 1, size, size))
    labels = rng.integers(0, classes, size=n)
    images = prototypes[labels] + 0.3 * rng.normal(size=(n, 1, size, size))
    return images, labels


# --------------------------------------------- acceptance result reporting

_acceptance_results = []


def record_acceptance(name, passed, detail=""):
    _acceptance_results.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, passed, detail in _acceptance_results:
        status = "PASS" if passed else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
