"""Shared helpers: random panel builders and brute-force oracles.

The oracles here are deliberately independent of the library internals:
explicit loops, explicit inverses, pooled dummy-variable designs.
"""

import numpy as np
import pytest

from interpanel.data import make_dataset


def random_panel(seed, n=12, T=6, K_x=2, K_g=1, K_z=1, K_h=2,
                 constant_col=None):
    """A panel with arbitrary (model-free) Y; enough for projection
    identities like the dummy-variable equivalence, which hold for any Y."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, T, K_x))
    if constant_col is not None:
        X[:, :, constant_col] = 1.0
    G = rng.normal(size=(n, T, K_g))
    Z = rng.normal(size=(n, T, K_z))
    H = rng.normal(size=(n, K_h))
    Y = rng.normal(size=(n, T))
    return make_dataset(Y, X, G, Z, H)


def kron_block_loops(X, G):
    """Element-by-element double loop over (k, g) pairs."""
    n, T, K_x = X.shape
    K_g = G.shape[2]
    out = np.zeros((n, T, K_x * K_g))
    for i in range(n):
        for t in range(T):
            col = 0
            for k in range(K_x):
                for g in range(K_g):
                    out[i, t, col] = X[i, t, k] * G[i, t, g]
                    col += 1
    return out


def dummy_variable_oracle(ds):
    """Pooled OLS of Y on {unit dummies x X columns} and the shared
    interaction/control columns; returns (theta, delta)."""
    n, T, K_x = ds.X.shape
    Psi = np.concatenate([kron_block_loops(ds.X, ds.G), ds.Z], axis=2)
    P = Psi.shape[2]
    D = np.zeros((n * T, n * K_x + P))
    for i in range(n):
        D[i * T:(i + 1) * T, i * K_x:(i + 1) * K_x] = ds.X[i]
    D[:, n * K_x:] = Psi.reshape(n * T, P)
    coef, _, _, _ = np.linalg.lstsq(D, ds.Y.reshape(-1), rcond=None)
    delta = coef[:n * K_x].reshape(n, K_x)
    theta = coef[n * K_x:]
    return theta, delta


def within_ols_oracle(ds):
    """Remark-style oracle for K_x=2 with a constant column, scalar H,
    no G/Z: OLS of demeaned Y on H * demeaned x1, computed with loops."""
    n, T, _ = ds.X.shape
    num = 0.0
    den = 0.0
    for i in range(n):
        x = ds.X[i, :, 0]
        y = ds.Y[i]
        xd = x - x.mean()
        yd = y - y.mean()
        h = ds.H[i, 0]
        num += float(np.sum(h * xd * yd))
        den += float(np.sum((h * xd) ** 2))
    return num / den


def inv3_cofactor(A):
    """Explicit 3x3 inverse via the adjugate."""
    a, b, c = A[0]
    d, e, f = A[1]
    g, h, i = A[2]
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    adj = np.array([
        [e * i - f * h, c * h - b * i, b * f - c * e],
        [f * g - d * i, a * i - c * g, c * d - a * f],
        [d * h - e * g, b * g - a * h, a * e - b * d],
    ])
    return adj / det


@pytest.fixture(scope="session")
def baseline_config():
    from interpanel.dgp import packaged_config
    return packaged_config("baseline")
