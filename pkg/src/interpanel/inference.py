"""Standard errors: first-stage per-unit SEs, cluster-robust sandwiches,
and a unit-level bootstrap for the two-step estimator.

The two-step point estimates treat the per-unit slopes as data in the
second stage, so the default second-stage SEs (heteroskedasticity-robust
OLS on the delta-on-H regression) ignore first-step noise. The bootstrap
resamples whole units and re-runs the pipeline, which propagates it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as _dc_replace

import numpy as np

from .data import build_regressors, subset_units
from .estimators import cite_kappa, fit_cite
from .linalg import RankDeficient

BOOTSTRAP_REDRAW_FACTOR = 10


class ZeroDegreesOfFreedom(ValueError):
    def __init__(self, unit):
        self.unit = unit
        super().__init__(
            f"unit {unit!r} has T == K_x: residuals are identically zero and "
            "first-stage standard errors are undefined"
        )


class TooFewClusters(ValueError):
    pass


class DegenerateResample(RuntimeError):
    pass


@dataclass(frozen=True)
class SeResult:
    """Point estimates with a variance matrix and its method tag."""

    labels: tuple
    estimates: np.ndarray
    se: np.ndarray
    vcov: np.ndarray
    method: str
    n_clusters: int

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "estimates": [float(v) for v in self.estimates],
            "se": [float(v) for v in self.se],
            "method": self.method,
            "n_clusters": self.n_clusters,
        }


def first_stage_se(ds, dr, cite):
    """Standard error of each unit's first slope estimate.

    For unit i: se_i = sqrt(s_i^2 * [(X_i'X_i)^{-1}]_{11}) with
    s_i^2 = RSS_i / (T - K_x) from the residuals of
    Y_i - Psi_i theta_hat - X_i delta_hat_i.
    """
    d = ds.dims
    if d.T <= d.K_x:
        raise ZeroDegreesOfFreedom(unit=ds.unit_labels[0])
    resid = ds.Y - dr.Psi @ cite.theta_hat \
        - np.einsum("ntk,nk->nt", ds.X, cite.delta_hat)
    s2 = np.sum(resid * resid, axis=1) / (d.T - d.K_x)
    # (X'X)^{-1} = R^{-1} R^{-T} from the cached per-unit QR.
    eye = np.broadcast_to(np.eye(d.K_x), (d.n, d.K_x, d.K_x))
    r_inv = np.linalg.solve(dr.r_x, eye)
    inv11 = np.einsum("nk,nk->n", r_inv[:, 0, :], r_inv[:, 0, :])
    return np.sqrt(s2 * inv11)


def cluster_robust_se(design, residuals, cluster_ids, estimates=None,
                      labels=None, small_sample=True):
    """Cluster-robust sandwich variance for a pooled OLS fit.

    V = c * (X'X)^{-1} (sum_g s_g s_g') (X'X)^{-1} with per-cluster score
    sums s_g = sum_{i in g} x_i e_i. The small-sample factor
    c = G/(G-1) * (N-1)/(N-k) is applied by default. With one observation
    per cluster and c disabled this is exactly the HC0 variance.
    """
    X = np.asarray(design, dtype=float)
    e = np.asarray(residuals, dtype=float).reshape(-1)
    ids = np.asarray(cluster_ids)
    N, k = X.shape
    if e.shape[0] != N or ids.shape[0] != N:
        raise ValueError("design, residuals and cluster_ids must align")
    _, codes = np.unique(ids, return_inverse=True)
    G = int(codes.max()) + 1
    if G < 2:
        raise TooFewClusters(f"need at least 2 clusters, got {G}")

    bread = np.linalg.inv(X.T @ X)
    scores = np.zeros((G, k))
    np.add.at(scores, codes, X * e[:, None])
    meat = scores.T @ scores
    V = bread @ meat @ bread
    if small_sample:
        V = V * (G / (G - 1)) * ((N - 1) / (N - k))
    V = 0.5 * (V + V.T)
    if estimates is None:
        estimates = np.full(k, np.nan)
    if labels is None:
        labels = tuple(f"b{j}" for j in range(k))
    return SeResult(
        labels=tuple(labels),
        estimates=np.asarray(estimates, dtype=float),
        se=np.sqrt(np.clip(np.diag(V), 0.0, None)),
        vcov=V,
        method="cluster_robust",
        n_clusters=G,
    )


def _stack(Mats, block):
    proj = np.einsum("nij,njp->nip", Mats, block)
    return proj.reshape(-1, proj.shape[2])


def _unit_ids(ds):
    return np.repeat(np.arange(ds.dims.n), ds.dims.T)


def ite_se(ds, dr, result, small_sample=True):
    """Unit-clustered SEs for the one-step estimates."""
    design = _stack(dr.M_minus1, dr.PsiTilde)
    response = np.einsum("nij,nj->ni", dr.M_minus1, ds.Y).reshape(-1)
    resid = response - design @ result.theta_tilde_hat
    return cluster_robust_se(design, resid, _unit_ids(ds),
                             estimates=result.theta_tilde_hat,
                             labels=result.labels, small_sample=small_sample)


def cite_theta_se(ds, dr, result, small_sample=True):
    """Unit-clustered SEs for the pooled stage of the two-step estimator."""
    design = _stack(dr.M, dr.Psi)
    response = np.einsum("nij,nj->ni", dr.M, ds.Y).reshape(-1)
    resid = response - design @ result.theta_hat
    return cluster_robust_se(design, resid, _unit_ids(ds),
                             estimates=result.theta_hat,
                             labels=result.theta_labels,
                             small_sample=small_sample)


def cite_kappa_se(ds, result):
    """HC-robust SEs for the delta-on-H second stage, treating the
    estimated slopes as data (first-step noise is ignored; use
    bootstrap_cite to propagate it)."""
    H = ds.H
    n = H.shape[0]
    if n <= 1:
        raise TooFewClusters("need at least 2 units")
    e = result.delta_hat[:, 0] - H @ result.kappa_hat
    bread = np.linalg.inv(H.T @ H)
    meat = (H * e[:, None]).T @ (H * e[:, None])
    V = bread @ meat @ bread
    V = 0.5 * (V + V.T)
    return SeResult(
        labels=tuple(result.kappa_labels),
        estimates=result.kappa_hat,
        se=np.sqrt(np.clip(np.diag(V), 0.0, None)),
        vcov=V,
        method="hc_robust",
        n_clusters=n,
    )


def bootstrap_cite(ds, replications, seed, weight_mode="none"):
    """Unit bootstrap of the full two-step pipeline.

    Resamples units with replacement `replications` times, refits CITE on
    each draw, and reports the empirical SD of kappa_hat. Draws that fail
    rank checks are redrawn; the total number of redraws is capped at
    BOOTSTRAP_REDRAW_FACTOR * replications.

    Each draw's randomness depends only on (seed, replication index,
    attempt), so results are reproducible and independent of execution
    order.
    """
    if replications < 50:
        raise ValueError(f"need at least 50 replications, got {replications}")
    full = fit_cite_weighted(ds, weight_mode=weight_mode)
    n = ds.dims.n
    max_redraws = BOOTSTRAP_REDRAW_FACTOR * replications
    redraws = 0
    draws = np.empty((replications, ds.dims.K_h))
    for r in range(replications):
        attempt = 0
        while True:
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=int(seed),
                                       spawn_key=(r, attempt)))
            idx = rng.integers(0, n, size=n)
            try:
                sub = subset_units(ds, idx)
                draws[r] = fit_cite_weighted(sub, weight_mode=weight_mode).kappa_hat
                break
            except (RankDeficient, np.linalg.LinAlgError):
                redraws += 1
                attempt += 1
                if redraws > max_redraws:
                    raise DegenerateResample(
                        f"exceeded {max_redraws} redraws after repeated "
                        "rank-deficient bootstrap samples"
                    ) from None
    vcov = np.atleast_2d(np.cov(draws, rowvar=False, ddof=1))
    return SeResult(
        labels=tuple(full.kappa_labels),
        estimates=full.kappa_hat,
        se=draws.std(axis=0, ddof=1),
        vcov=0.5 * (vcov + vcov.T),
        method="bootstrap",
        n_clusters=n,
    )


def fit_cite_weighted(ds, dr=None, weight_mode="none"):
    """Two-step fit where the second stage may weight by first-stage SEs.

    The unweighted pipeline runs first; for weight modes other than
    "none" the kappa stage is then redone with w_i = 1/se_i ("inv_se")
    or 1/se_i^2 ("inv_var").
    """
    if dr is None:
        dr = build_regressors(ds)
    res = fit_cite(ds, dr)
    if weight_mode == "none" or ds.dims.K_h == 0:
        return res
    se = first_stage_se(ds, dr, res)
    kappa = cite_kappa(res.delta_hat[:, 0], ds.H, weights=se, mode=weight_mode)
    return _dc_replace(res, kappa_hat=kappa, weight_mode=weight_mode)
