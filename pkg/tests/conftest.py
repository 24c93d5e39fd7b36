"""Shared numerical test helpers."""

import numpy as np

FD_STEP = 1e-5


def random_lattice(rng, t, u, k, scale=1.0):
    return rng.normal(0.0, scale, size=(t, u + 1, k))


def random_labels(rng, u, k):
    return rng.integers(1, k, size=u)


def finite_difference(f, x, h=FD_STEP):
    """Central-difference gradient of scalar f at x, entry by entry."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        up = x.copy()
        up[idx] += h
        down = x.copy()
        down[idx] -= h
        grad[idx] = (f(up) - f(down)) / (2.0 * h)
        it.iternext()
    return grad


def assert_gradients_match(analytic, numeric, rel=1e-5, small=1e-8):
    """Entry-wise check: relative tolerance, absolute below the small cutoff."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    assert analytic.shape == numeric.shape
    diff = np.abs(analytic - numeric)
    tiny = np.abs(numeric) < small
    ok = np.where(tiny, diff <= small, diff <= rel * np.abs(numeric))
    if not ok.all():
        worst = np.unravel_index(np.argmax(diff), diff.shape)
        raise AssertionError(
            f"gradient mismatch at {worst}: analytic={analytic[worst]!r} "
            f"numeric={numeric[worst]!r}"
        )
