"""Gaussian-mixture visual dictionary: training, posteriors and file format."""
from __future__ import annotations

import hashlib
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dct import N_COEFFS
from .errors import ConfigError, FormatError, InvariantError

log = logging.getLogger(__name__)

DICT_MAGIC = b"MRHDICT1"
_DICT_HEADER = struct.Struct("<8sII")
LOG_2PI = np.log(2.0 * np.pi)
# fixed work unit so reductions do not depend on thread count
CHUNK = 4096


@dataclass(frozen=True, eq=False)
class VisualDictionary:
    """Diagonal-covariance GMM. Component means are the visual words."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        mu = np.array(self.means, dtype=np.float64)
        var = np.array(self.variances, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise InvariantError("weights must be a non-empty vector")
        if mu.ndim != 2 or mu.shape != var.shape or mu.shape[0] != w.size:
            raise InvariantError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}")
        if mu.shape[1] != N_COEFFS:
            raise InvariantError(f"dictionary dimension {mu.shape[1]} != {N_COEFFS}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise InvariantError("dictionary contains non-finite values")
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-9:
            raise InvariantError(f"weights must be non-negative and sum to 1 (sum={w.sum()!r})")
        if var.min() <= 0:
            raise InvariantError("variances must be strictly positive")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def G(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, VisualDictionary):
            return NotImplemented
        return save_dict(self) == save_dict(other)

    def __hash__(self):
        return hash(self.digest())

    @cached_property
    def _digest(self) -> str:
        return hashlib.sha256(save_dict(self)).hexdigest()

    def digest(self) -> str:
        return self._digest


@dataclass(frozen=True)
class TrainConfig:
    G: int = 1024
    seed: int = 0
    max_em_iters: int = 100
    rel_tol: float = 1e-5
    kmeans_iters: int = 10
    variance_floor_scale: float = 1e-4

    def __post_init__(self):
        if self.G < 1:
            raise ConfigError(f"G must be >= 1, got {self.G}")
        if self.max_em_iters < 1 or self.kmeans_iters < 0:
            raise ConfigError("iteration counts must be positive")
        if self.rel_tol <= 0 or self.variance_floor_scale <= 0:
            raise ConfigError("tolerances must be positive")


def _chunks(n: int):
    return [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]


def _map_chunks(fn, n: int, threads: int = 1):
    spans = _chunks(n)
    if threads <= 1 or len(spans) == 1:
        return [fn(s, e) for s, e in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda se: fn(*se), spans))


class _Params:
    """Precomputed terms for evaluating log(w_g p_g(x))."""

    def __init__(self, weights, means, variances):
        prec = 1.0 / variances
        with np.errstate(divide="ignore"):
            log_w = np.log(weights)
        self.prec = prec
        self.mu_prec = means * prec
        self.const = log_w - 0.5 * (
            np.sum(means * means * prec, axis=1) + np.sum(np.log(variances), axis=1) + means.shape[1] * LOG_2PI
        )

    def log_joint(self, x):
        quad = (x * x) @ self.prec.T - 2.0 * (x @ self.mu_prec.T)
        return self.const - 0.5 * quad


def _logsumexp(a):
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


def _as_features(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != N_COEFFS:
        raise ConfigError(f"features must have dimension {N_COEFFS}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("features contain non-finite values")
    return x


def posterior_histograms(d: VisualDictionary, features) -> np.ndarray:
    """Posterior of every component for each feature row, shape (n, G)."""
    x = _as_features(features)
    if x.shape[1] != d.dim:
        raise ConfigError(f"feature dimension {x.shape[1]} != dictionary dimension {d.dim}")
    p = _Params(d.weights, d.means, d.variances)
    a = p.log_joint(x)
    a -= a.max(axis=1, keepdims=True)
    np.exp(a, out=a)
    a /= a.sum(axis=1, keepdims=True)
    return a


def posterior_histogram(d: VisualDictionary, f) -> np.ndarray:
    return posterior_histograms(d, f)[0]


def log_likelihood(d: VisualDictionary, features) -> float:
    x = _as_features(features)
    if x.shape[0] == 0:
        raise ConfigError("log-likelihood of an empty feature list is undefined")
    p = _Params(d.weights, d.means, d.variances)
    parts = [float(np.sum(_logsumexp(p.log_joint(x[s:e])))) for s, e in _chunks(x.shape[0])]
    return float(sum(parts))


def _sq_dist(x, c):
    return np.sum(x * x, axis=1)[:, None] - 2.0 * (x @ c.T) + np.sum(c * c, axis=1)[None, :]


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[i] = x[idx]
        closest = np.minimum(closest, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def _assign(x, centers, threads):
    parts = _map_chunks(lambda s, e: np.argmin(_sq_dist(x[s:e], centers), axis=1), x.shape[0], threads)
    return np.concatenate(parts)


def lloyd(x: np.ndarray, centers: np.ndarray, iters: int, threads: int = 1):
    centers = centers.copy()
    k = centers.shape[0]
    labels = _assign(x, centers, threads)
    for _ in range(iters):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        new_labels = _assign(x, centers, threads)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels


def _estep_stats(x, params, G):
    """Sufficient statistics and log-likelihood for one chunk."""
    a = params.log_joint(x)
    lse = _logsumexp(a)
    resp = np.exp(a - lse[:, None])
    return resp.sum(axis=0), resp.T @ x, resp.T @ (x * x), float(lse.sum())


def fit(features, cfg: TrainConfig, threads: int = 1):
    """Train a dictionary; returns ``(dictionary, log_likelihood_history)``.

    The history holds the training-set log-likelihood of every parameter set
    visited by EM, starting with the k-means initialization.
    """
    x = _as_features(features)
    n, dim = x.shape
    G = cfg.G
    if n < G:
        raise ConfigError(f"insufficient data: {n} features for {G} components")
    rng = np.random.default_rng(cfg.seed)

    data_var = np.maximum(x.var(axis=0), 1e-12)
    floor = cfg.variance_floor_scale * data_var

    centers = kmeans_pp(x, G, rng)
    centers, labels = lloyd(x, centers, cfg.kmeans_iters, threads)
    counts = np.bincount(labels, minlength=G).astype(np.float64)
    sq = np.zeros((G, dim))
    np.add.at(sq, labels, (x - centers[labels]) ** 2)
    variances = np.where(counts[:, None] > 0, sq / np.maximum(counts, 1.0)[:, None], data_var)
    variances = np.maximum(variances, floor)
    weights = (counts + 1.0) / (n + G)
    means = centers

    history = []
    for it in range(cfg.max_em_iters + 1):
        params = _Params(weights, means, variances)
        stats = _map_chunks(lambda s, e: _estep_stats(x[s:e], params, G), n, threads)
        nk = np.zeros(G)
        sx = np.zeros((G, dim))
        sxx = np.zeros((G, dim))
        ll = 0.0
        for c_nk, c_sx, c_sxx, c_ll in stats:
            nk += c_nk
            sx += c_sx
            sxx += c_sxx
            ll += c_ll
        history.append(ll)
        log.debug("EM iteration %d: log-likelihood %.6f", it, ll)
        if it > 0:
            prev = history[-2]
            if (ll - prev) / max(abs(prev), 1e-300) < cfg.rel_tol:
                break
        if it == cfg.max_em_iters:
            break
        alive = nk > 0
        new_means = means.copy()
        new_vars = variances.copy()
        new_means[alive] = sx[alive] / nk[alive, None]
        new_vars[alive] = sxx[alive] / nk[alive, None] - new_means[alive] ** 2
        weights = nk / nk.sum()
        means = new_means
        variances = np.maximum(new_vars, floor)

    weights = weights / weights.sum()
    return VisualDictionary(weights, means, variances), history


def train(features, cfg: TrainConfig, threads: int = 1) -> VisualDictionary:
    return fit(features, cfg, threads)[0]


def save_dict(d: VisualDictionary) -> bytes:
    head = _DICT_HEADER.pack(DICT_MAGIC, d.G, d.dim)
    return head + b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (d.weights, d.means, d.variances)
    )


def load_dict(data: bytes) -> VisualDictionary:
    if len(data) < _DICT_HEADER.size:
        raise FormatError("truncated dictionary header")
    magic, G, dim = _DICT_HEADER.unpack_from(data)
    if magic != DICT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DICT_MAGIC!r}")
    if dim != N_COEFFS:
        raise FormatError(f"dimension mismatch: file has D={dim}, expected {N_COEFFS}")
    if G < 1:
        raise FormatError("dictionary has zero components")
    expected = _DICT_HEADER.size + 8 * (G + 2 * G * dim)
    if len(data) < expected:
        raise FormatError(f"truncated dictionary: expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise FormatError(f"trailing bytes in dictionary file ({len(data) - expected})")
    body = np.frombuffer(data, dtype="<f8", offset=_DICT_HEADER.size).astype(np.float64)
    w = body[:G]
    mu = body[G:G + G * dim].reshape(G, dim)
    var = body[G + G * dim:].reshape(G, dim)
    return VisualDictionary(w, mu, var)
