"""Gaussian mixture baseline over (start, duration, average power) session triples.

Triples are handled as ``(N, 3)`` float arrays with columns start hour,
duration in hours and average kW. Fitting is plain EM maximizing the mixture
log-likelihood with full covariances, computed in log space.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .dataio import N_SLOTS, SLOT_HOURS, LoadCurveDataset, rectangular_curves

log = logging.getLogger(__name__)

MODEL_VERSION = 1
_LOG_2PI = np.log(2.0 * np.pi)
# rows per chunk times clusters, bounds the (n, K, 3) temporaries
_CHUNK_CELLS = 1 << 20


class SessionTriple(NamedTuple):
    start: float
    duration: float
    avg_power: float


class EmError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmConfig:
    clusters: int = 1000
    tol: float = 1e-6
    max_iter: int = 50000
    # absolute eigenvalue floor; None derives it from the data
    covariance_floor: float | None = None
    floor_scale: float = 1e-6
    init: str = "kmeans++"
    seed: int = 0

    def __post_init__(self):
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.init not in ("kmeans++", "random"):
            raise ValueError(f"unknown init scheme {self.init!r}")


@dataclass(frozen=True)
class GmmParams:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance_floor: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        cov = np.asarray(self.covariances, dtype=np.float64)
        k = w.shape[0]
        if mu.shape != (k, 3) or cov.shape != (k, 3, 3):
            raise ValueError(f"inconsistent GMM shapes: weights {w.shape}, means {mu.shape}, cov {cov.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def n_clusters(self) -> int:
        return self.weights.shape[0]


# ---------------------------------------------------------------- curves <-> triples

def extract_triples(d: LoadCurveDataset) -> np.ndarray:
    """Summarize raw (kW) curves as session triples; all-zero curves are skipped."""
    if d.is_normalized:
        raise ValueError("extract_triples expects denormalized curves in kW")
    nz = d.curves > 0
    active = nz.any(axis=1)
    if not active.all():
        log.warning("skipping %d all-zero curves", int((~active).sum()))
    curves, nz = d.curves[active], nz[active]
    count = nz.sum(axis=1)
    start = np.argmax(nz, axis=1) * SLOT_HOURS
    avg = curves.sum(axis=1) / np.maximum(count, 1)
    return np.column_stack([start, count * SLOT_HOURS, avg])


def triple_to_curve(t) -> np.ndarray:
    """Steady rectangular load for one triple, or for each row of an (n, 3) array."""
    arr = np.asarray(t, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    curves = rectangular_curves(arr[:, 0], arr[:, 1], np.maximum(arr[:, 2], 0.0))
    return curves[0] if single else curves


# ---------------------------------------------------------------- E / M steps

def _cholesky(cov: np.ndarray) -> np.ndarray:
    if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=1e-10, atol=1e-12):
        bad = int(np.argmax(np.abs(cov - np.swapaxes(cov, 1, 2)).reshape(len(cov), -1).max(axis=1)))
        raise EmError(f"covariance of cluster {bad} is not symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        for k, c in enumerate(cov):
            try:
                np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                raise EmError(f"covariance of cluster {k} is not positive definite") from None
        raise


def _log_joint(params: GmmParams, x: np.ndarray) -> np.ndarray:
    """log(alpha_k) + log N(x_n | mu_k, Sigma_k), shape (N, K)."""
    chol = _cholesky(params.covariances)
    inv_chol = np.linalg.inv(chol)
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    k = params.n_clusters
    out = np.empty((x.shape[0], k))
    step = max(1, _CHUNK_CELLS // k)
    for s in range(0, x.shape[0], step):
        diff = x[s:s + step, None, :] - params.means[None]
        y = np.einsum("ked,nkd->nke", inv_chol, diff)
        maha = np.einsum("nke,nke->nk", y, y)
        out[s:s + step] = log_w - 0.5 * (maha + logdet + 3 * _LOG_2PI)
    return out


def _estep(params: GmmParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lj = _log_joint(params, x)
    ll = logsumexp(lj, axis=1)
    gamma = np.exp(lj - ll[:, None])
    # rounding in lj grows with the Mahalanobis distance; renormalize rows
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, ll


def e_step(params: GmmParams, data) -> np.ndarray:
    """Posterior cluster probabilities, shape (N, K); each row sums to 1."""
    gamma, _ = _estep(params, np.asarray(data, dtype=np.float64))
    return gamma


def log_likelihood(params: GmmParams, data) -> float:
    """Mean per-sample log-likelihood."""
    return float(logsumexp(_log_joint(params, np.asarray(data, dtype=np.float64)), axis=1).mean())


def _floor_eigenvalues(cov: np.ndarray, floor: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    need = vals.min(axis=1) < floor
    if not need.any():
        return cov
    out = cov.copy()
    v, q = np.maximum(vals[need], floor), vecs[need]
    fixed = np.einsum("kij,kj,klj->kil", q, v, q)
    out[need] = 0.5 * (fixed + np.swapaxes(fixed, 1, 2))
    return out


def m_step(gamma: np.ndarray, data, floor: float, empty_tol: float = 1e-10) -> GmmParams:
    """Closed-form parameter update from responsibilities.

    Clusters whose responsibility mass falls below ``empty_tol`` are moved onto
    the sample that is least claimed by any cluster, with one sample's worth of
    weight and the global data covariance.
    """
    x = np.asarray(data, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    n, k = gamma.shape
    nk = gamma.sum(axis=0)
    empty = nk < empty_tol
    safe_nk = np.where(empty, 1.0, nk)
    means = (gamma.T @ x) / safe_nk[:, None]

    cov = np.zeros((k, 3, 3))
    step = max(1, _CHUNK_CELLS // k)
    for s in range(0, n, step):
        diff = x[s:s + step, None, :] - means[None]
        cov += np.einsum("nk,nkd,nke->kde", gamma[s:s + step], diff, diff)
    cov /= safe_nk[:, None, None]

    weights = nk / n
    if empty.any():
        log.warning("reinitializing %d empty clusters", int(empty.sum()))
        claim = gamma[:, ~empty].max(axis=1) if (~empty).any() else np.zeros(n)
        order = np.argsort(claim, kind="stable")
        global_cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True)) if n > 1 else np.zeros((3, 3))
        for j, idx in enumerate(np.flatnonzero(empty)):
            means[idx] = x[order[j % n]]
            cov[idx] = global_cov
            weights[idx] = 1.0 / n
        weights = weights / weights.sum()

    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    cov = _floor_eigenvalues(cov, floor)
    return GmmParams(weights, means, cov, covariance_floor=floor)


# ---------------------------------------------------------------- fitting

def default_floor(x: np.ndarray, scale: float = 1e-6) -> float:
    tr = float(np.trace(np.atleast_2d(np.cov(x, rowvar=False, bias=True)))) if len(x) > 1 else 0.0
    return scale * tr / 3.0 if tr > 0 else scale


def _seed_centers(x: np.ndarray, k: int, rng: np.random.Generator, scheme: str) -> np.ndarray:
    n = x.shape[0]
    if scheme == "random":
        return x[rng.choice(n, size=k, replace=False)]
    idx = [int(rng.integers(n))]
    d2 = ((x - x[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every remaining point coincides with a centre
            rest = np.setdiff1d(np.arange(n), idx)
            idx.extend(rng.choice(rest, size=k - len(idx), replace=False).tolist())
            break
        j = int(rng.choice(n, p=d2 / total))
        idx.append(j)
        d2 = np.minimum(d2, ((x - x[j]) ** 2).sum(axis=1))
    return x[np.array(idx)]


def _initial_params(x: np.ndarray, cfg: EmConfig, floor: float) -> GmmParams:
    rng = np.random.default_rng(cfg.seed)
    centers = _seed_centers(x, cfg.clusters, rng, cfg.init)
    k = cfg.clusters
    labels = np.empty(x.shape[0], dtype=np.int64)
    step = max(1, _CHUNK_CELLS // k)
    for s in range(0, x.shape[0], step):
        d2 = ((x[s:s + step, None, :] - centers[None]) ** 2).sum(axis=2)
        labels[s:s + step] = d2.argmin(axis=1)
    gamma = np.zeros((x.shape[0], k))
    gamma[np.arange(x.shape[0]), labels] = 1.0
    return m_step(gamma, x, floor)


def em_fit(data, cfg: EmConfig = EmConfig()) -> tuple[GmmParams, list[float]]:
    """Fit a K-component full-covariance GMM by EM.

    Returns the fitted parameters and the trace of mean per-sample
    log-likelihood, one entry per E-step. Stops when the change in that mean
    drops below ``cfg.tol`` or after ``cfg.max_iter`` iterations.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"expected (N, 3) triples, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("triples contain non-finite values")
    n = x.shape[0]
    if n < cfg.clusters:
        raise EmError(f"need at least as many samples as clusters: N={n} < K={cfg.clusters}")
    floor = cfg.covariance_floor if cfg.covariance_floor is not None else default_floor(x, cfg.floor_scale)

    params = _initial_params(x, cfg, floor)
    trace: list[float] = []
    converged = False
    for it in range(cfg.max_iter):
        gamma, ll = _estep(params, x)
        mean_ll = float(ll.mean())
        if not np.isfinite(mean_ll):
            raise EmError(f"non-finite log-likelihood at iteration {it}")
        trace.append(mean_ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < cfg.tol:
            converged = True
            break
        params = m_step(gamma, x, floor)
    meta = {"iterations": len(trace), "final_log_likelihood": trace[-1], "converged": converged,
            "n_samples": n, "seed": cfg.seed, "tol": cfg.tol, "max_iter": cfg.max_iter}
    if not converged:
        log.warning("EM stopped at max_iter=%d without reaching tol=%g", cfg.max_iter, cfg.tol)
    return GmmParams(params.weights, params.means, params.covariances, floor, meta), trace


# ---------------------------------------------------------------- sampling

def gmm_sample(params: GmmParams, n: int, seed: int = 0, return_labels: bool = False):
    """Draw ``n`` session triples, clamped to the physical domain."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.choice(params.n_clusters, size=n, p=params.weights / params.weights.sum())
    z = rng.standard_normal((n, 3))
    chol = _cholesky(params.covariances)
    raw = params.means[labels] + np.einsum("nij,nj->ni", chol[labels], z)

    out = raw.copy()
    out[:, 0] = np.clip(out[:, 0], 0.0, np.nextafter(24.0, 0.0))
    out[:, 1] = np.clip(out[:, 1], SLOT_HOURS, N_SLOTS * SLOT_HOURS)
    out[:, 2] = np.maximum(out[:, 2], 0.0)
    clamped = np.any(out != raw, axis=1).mean()
    if clamped > 0:
        log.info("clamped %.2f%% of GMM samples to the session domain", 100 * clamped)
    return (out, labels) if return_labels else out


def sample_curves(params: GmmParams, n: int, seed: int = 0) -> LoadCurveDataset:
    return LoadCurveDataset(triple_to_curve(gmm_sample(params, n, seed)))


# ---------------------------------------------------------------- persistence

def save_gmm(path: str | Path, params: GmmParams) -> None:
    doc = {
        "format": "evgen-gmm",
        "version": MODEL_VERSION,
        "clusters": params.n_clusters,
        "weights": params.weights.tolist(),
        "means": params.means.tolist(),
        "covariances": params.covariances.reshape(params.n_clusters, 9).tolist(),
        "covariance_floor": params.covariance_floor,
        "fit": params.meta,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_gmm(path: str | Path) -> GmmParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "evgen-gmm":
        raise ValueError(f"{path} is not a GMM model file")
    if doc["version"] != MODEL_VERSION:
        raise ValueError(f"unsupported GMM model version {doc['version']}")
    k = doc["clusters"]
    return GmmParams(
        np.array(doc["weights"]), np.array(doc["means"]),
        np.array(doc["covariances"]).reshape(k, 3, 3),
        covariance_floor=doc["covariance_floor"], meta=doc.get("fit", {}),
    )
