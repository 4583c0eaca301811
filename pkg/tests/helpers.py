"""Shared oracles for the test suite (finite differences, grad comparison)."""

import numpy as np


def numeric_grad(f, arr, h=1e-6):
    """Central-difference gradient of scalar f() w.r.t. `arr`, edited in place."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def assert_grads_match(analytic, numeric, rel=1e-5, abs_floor=1e-8):
    """Relative comparison above the floor, absolute below it."""
    a, n = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    assert a.shape == n.shape
    for i in range(a.size):
        err = abs(n[i] - a[i])
        if abs(a[i]) > abs_floor:
            assert err <= rel * abs(a[i]), f"index {i}: {a[i]} vs fd {n[i]}"
        else:
            assert err <= abs_floor, f"index {i}: {a[i]} vs fd {n[i]}"
