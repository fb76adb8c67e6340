import numpy as np
import pytest


def central_diff(f, arrays, eps=1e-5):
    """Central-difference gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            fp = f()
            a[i] = old - eps
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def rel_err(analytic, numeric):
    return np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err_norm(analytic, numeric):
    """Norm-wise relative error; insensitive to entries near the finite-difference noise floor."""
    diff = np.linalg.norm(np.ravel(analytic - numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)))
    return diff / scale if scale > 0 else diff
