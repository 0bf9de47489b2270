"""Shared test fixtures: finite-difference oracles and a lazily-populated
cache of benchmark training runs (the expensive cross-test resource)."""

import numpy as np
import pytest

from ltlab.harness import ExperimentConfig, build_datasets, train_one


def fd_param_grads(f, net, h=1e-4):
    """Central finite differences of the scalar f() wrt every (w, b) of net.

    f must read the live net object; entries are perturbed in place and
    restored, so the net must not be shared with a concurrent reader.
    """
    out = []
    for layer in net.layers:
        gw = np.zeros_like(layer.w)
        it = np.nditer(layer.w, flags=["multi_index"])
        for _ in it:
            ij = it.multi_index
            orig = layer.w[ij]
            layer.w[ij] = orig + h
            fp = f()
            layer.w[ij] = orig - h
            fm = f()
            layer.w[ij] = orig
            gw[ij] = (fp - fm) / (2.0 * h)
        gb = np.zeros_like(layer.b)
        for j in range(layer.b.size):
            orig = layer.b[j]
            layer.b[j] = orig + h
            fp = f()
            layer.b[j] = orig - h
            fm = f()
            layer.b[j] = orig
            gb[j] = (fp - fm) / (2.0 * h)
        out.append((gw, gb))
    return out


def max_rel_err(analytic, fd):
    """max component error, relative to the largest FD component (floored so
    an all-zero reference still compares exactly)."""
    scale = max(
        max(np.abs(gw).max(initial=0.0), np.abs(gb).max(initial=0.0)) for gw, gb in fd
    )
    diff = max(
        max(np.abs(aw - gw).max(initial=0.0), np.abs(ab - gb).max(initial=0.0))
        for (aw, ab), (gw, gb) in zip(analytic, fd)
    )
    return diff / max(scale, 1e-12)


def fd_vector_grad(f, x, h=1e-6):
    """Central differences of scalar f(x) wrt the vector x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


class BenchCache:
    """Benchmark runs on the default synthetic config, one per
    (method, seed, head), trained on first request and then shared."""

    SEEDS = (0, 1, 2, 3, 4)

    def __init__(self):
        self.base = ExperimentConfig()
        self.train_set, self.meta_set = build_datasets(self.base)
        self._runs = {}

    def result(self, method, seed, head="linear"):
        key = (method, seed, head)
        if key not in self._runs:
            cfg = ExperimentConfig(method=method, head=head)
            self._runs[key] = train_one(cfg, self.train_set, self.meta_set, seed)
        return self._runs[key]

    def final_record(self, method, seed, head="linear"):
        return self.result(method, seed, head)[2].epochs[-1]

    def first_record(self, method, seed, head="linear"):
        return self.result(method, seed, head)[2].epochs[0]

    def median(self, method, key, head="linear"):
        vals = [getattr(self.final_record(method, s, head), key) for s in self.SEEDS]
        return float(np.median([v for v in vals if v is not None]))


@pytest.fixture(scope="session")
def bench():
    return BenchCache()
