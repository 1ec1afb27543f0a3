"""Exponential transport kernels with positive-semidefinite repair.

Pairwise transport distances between complexes feed an exponential Gram
matrix ``exp(-d^2 / (2 sigma^2))`` (a flag switches to the unsquared
exponent).  Because the fused distance is not certifiably conditionally
negative definite, the Gram matrix can be indefinite; two repairs are
provided and composed:

* a geometric bandwidth search for the largest ``sigma`` in a shrinking
  ladder whose Gram matrix is positive semidefinite, and
* spectral truncation to the strictly positive eigenvalues, which yields an
  exact finite feature map (rows ``phi(x_i)``) with
  ``phi(x_i) . phi(x_j) == K_trunc[i, j]`` and an out-of-sample embedding
  from the kernel vector of a new item.

:class:`WassersteinFeatures` wraps the pipeline as a scikit-learn
transformer so the kernels compose with the wider estimator ecosystem.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .complexes import CWComplex, complex_hash
from .exceptions import NumericalError, ValidationError
from .fgw import build_instance, fgw_solve
from .spectral import decompose
from .transport import GaussianSignal, gaussian_signal, pad_to, w2_closed_form, wp_empirical
from .validation import check_distance_matrix, check_positive, check_probability

#: sample count used when a distance entry falls back to the empirical solver
EMPIRICAL_SAMPLES = 400


@dataclass(frozen=True)
class KernelSpec:
    """Which transport distance backs the kernel.

    ``kind`` is ``"w"`` (Gaussian Wasserstein-p between signal distributions)
    or ``"fgw"`` (fused feature/structure objective); ``alpha`` only applies
    to the fused kind.  ``sigma`` is the exponential bandwidth and ``degree``
    the cell degree the signals live on.
    """

    kind: str = "w"
    p: float = 2.0
    alpha: float = 0.5
    sigma: float = 1.0
    degree: int = 0

    def __post_init__(self):
        if self.kind not in ("w", "fgw"):
            raise ValidationError(f"kernel kind must be 'w' or 'fgw', got {self.kind!r}")
        if self.p < 1:
            raise ValidationError(f"p must be >= 1, got {self.p}")
        if self.kind == "fgw":
            check_probability(self.alpha, "alpha")
        check_positive(self.sigma, "sigma")
        if self.degree < 0:
            raise ValidationError(f"degree must be >= 0, got {self.degree}")

    def distance_token(self) -> str:
        """Cache token covering every field the distance depends on (the
        bandwidth does not affect distances)."""
        if self.kind == "fgw":
            return f"fgw:p={self.p!r}:alpha={self.alpha!r}:k={self.degree}"
        return f"w:p={self.p!r}:k={self.degree}"


class DistanceCache:
    """Content-addressed cache of scalar distances.

    Always caches in memory; if ``directory`` is given, entries are also
    persisted as tiny JSON files written atomically (temp file + rename), so
    concurrent workers inserting the same value are harmless.
    """

    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = str(directory) if directory is not None else None
        self._memory: dict[str, float] = {}
        if self.directory is not None:
            os.makedirs(self.directory, exist_ok=True)

    def _path(self, key: str) -> str:
        digest = hashlib.sha256(key.encode("utf-8")).hexdigest()
        return os.path.join(self.directory, digest + ".json")

    def get(self, key: str) -> float | None:
        if key in self._memory:
            return self._memory[key]
        if self.directory is None:
            return None
        path = self._path(key)
        if not os.path.exists(path):
            return None
        try:
            with open(path, "r", encoding="utf-8") as fh:
                value = float(json.load(fh)["value"])
        except (OSError, ValueError, KeyError, json.JSONDecodeError):
            return None
        self._memory[key] = value
        return value

    def put(self, key: str, value: float) -> None:
        self._memory[key] = value
        if self.directory is None:
            return
        payload = json.dumps({"key": key, "value": value})
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, self._path(key))
        except OSError:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _pair_seed(hash_a: str, hash_b: str, token: str) -> int:
    digest = hashlib.sha256(f"{hash_a}|{hash_b}|{token}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 32)


@dataclass
class _PreparedItem:
    """Per-item artifacts shared by all pair evaluations."""

    complex: CWComplex
    content_hash: str
    signal: GaussianSignal | None = None


def _prepare_items(items, spec: KernelSpec, pad: bool) -> list[_PreparedItem]:
    prepared = [_PreparedItem(c, complex_hash(c)) for c in items]
    if spec.kind == "w":
        signals = [gaussian_signal(p.complex, spec.degree) for p in prepared]
        sizes = {s.size for s in signals}
        if len(sizes) > 1:
            if not pad:
                raise ValidationError(
                    f"Hodge Laplacian dimensions differ across items {sorted(sizes)}: "
                    "they must be equal; enable padding to embed the smaller ones")
            target = max(sizes)
            signals = [pad_to(s, target) for s in signals]
        for p, s in zip(prepared, signals):
            p.signal = s
    return prepared


def _entry_distance(a: _PreparedItem, b: _PreparedItem, spec: KernelSpec) -> float:
    if spec.kind == "w":
        if spec.p == 2:
            return w2_closed_form(a.signal, b.signal)
        seed = _pair_seed(a.content_hash, b.content_hash, spec.distance_token())
        return wp_empirical(a.signal, b.signal, p=spec.p,
                            n_samples=EMPIRICAL_SAMPLES, seed=seed)
    inst = build_instance(a.complex, b.complex, degree=spec.degree,
                          alpha=spec.alpha, p=spec.p)
    _, value = fgw_solve(inst)
    return float(value)


def _cached_distance(a: _PreparedItem, b: _PreparedItem, spec: KernelSpec,
                     cache: DistanceCache | None) -> float:
    if cache is None:
        return _entry_distance(a, b, spec)
    first, second = sorted((a.content_hash, b.content_hash))
    key = f"{spec.distance_token()}|{first}|{second}"
    hit = cache.get(key)
    if hit is not None:
        return hit
    value = _entry_distance(a, b, spec)
    cache.put(key, value)
    return value


def pairwise_distance(items, spec: KernelSpec, cache: DistanceCache | None = None,
                      pad: bool = False, n_jobs: int = 1) -> np.ndarray:
    """Symmetric zero-diagonal matrix of transport distances between items.

    Entries come from the closed-form Gaussian W2 (kind ``"w"``, ``p = 2``),
    the empirical sampled solver (kind ``"w"``, other ``p``), or the fused
    solver (kind ``"fgw"``).  Each unordered pair is evaluated once; a cache
    keyed by content hashes and the spec makes repeat calls bit-identical.
    ``n_jobs > 1`` evaluates pairs on a bounded thread pool.
    """
    items = list(items)
    n = len(items)
    prepared = _prepare_items(items, spec, pad)
    out = np.zeros((n, n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def work(pair):
        i, j = pair
        return i, j, _cached_distance(prepared[i], prepared[j], spec, cache)

    if n_jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]
    for i, j, value in results:
        out[i, j] = value
        out[j, i] = value
    return out


def cross_distance(row_items, col_items, spec: KernelSpec,
                   cache: DistanceCache | None = None, pad: bool = False,
                   n_jobs: int = 1) -> np.ndarray:
    """Rectangular distance matrix between two collections of complexes."""
    row_items = list(row_items)
    col_items = list(col_items)
    prepared = _prepare_items(row_items + col_items, spec, pad)
    rows = prepared[:len(row_items)]
    cols = prepared[len(row_items):]
    out = np.zeros((len(rows), len(cols)))
    pairs = [(i, j) for i in range(len(rows)) for j in range(len(cols))]

    def work(pair):
        i, j = pair
        if rows[i].content_hash == cols[j].content_hash:
            return i, j, 0.0
        return i, j, _cached_distance(rows[i], cols[j], spec, cache)

    if n_jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]
    for i, j, value in results:
        out[i, j] = value
    return out


# -- Gram construction and repair ----------------------------------------------

def gram(distances, sigma: float, squared: bool = True) -> np.ndarray:
    """Entrywise exponential kernel matrix of a distance matrix.

    With ``squared=True`` (default) entries are ``exp(-d^2 / (2 sigma^2))``,
    which is the convention the positive-semidefiniteness machinery assumes;
    ``squared=False`` divides the raw distance instead.
    """
    d = check_distance_matrix(distances)
    check_positive(sigma, "sigma")
    exponent = d ** 2 if squared else d
    return np.exp(-exponent / (2.0 * sigma ** 2))


def min_eigenvalue(kernel_matrix) -> float:
    """Smallest eigenvalue of a symmetric kernel matrix."""
    op = decompose(kernel_matrix)
    return float(op.eigenvalues[0])


def default_sigma(distances) -> float:
    """Median heuristic: median of the strictly positive distances."""
    d = check_distance_matrix(distances)
    positive = d[d > 0]
    if positive.size == 0:
        return 1.0
    return float(np.median(positive))


def sigma_psd_search(distances, sigma0: float | None = None, shrink: float = 0.5,
                     max_steps: int = 60, tol: float = 1e-10,
                     squared: bool = True) -> float:
    """Largest bandwidth in the ladder ``sigma0 * shrink^t`` whose Gram
    matrix is positive semidefinite.

    The distance matrix is computed once; each ladder step only re-applies
    the entrywise exponential.  Acceptance is ``min_eig >= -tol * max_eig``.
    Raises :class:`NumericalError` if the ladder is exhausted.
    """
    d = check_distance_matrix(distances)
    if sigma0 is None:
        sigma0 = default_sigma(d)
    check_positive(sigma0, "sigma0")
    if not 0.0 < shrink < 1.0:
        raise ValidationError(f"shrink must lie in (0, 1), got {shrink}")

    sigma = float(sigma0)
    for _ in range(max_steps):
        op = decompose(gram(d, sigma, squared=squared))
        max_eig = float(np.abs(op.eigenvalues).max()) if op.size else 0.0
        if float(op.eigenvalues[0]) >= -tol * max_eig:
            return sigma
        sigma *= shrink
    raise NumericalError(
        f"no positive semidefinite bandwidth found in {max_steps} ladder steps "
        f"from sigma0={sigma0}; increase max_steps or shrink faster")


@dataclass(frozen=True)
class GramModel:
    """Spectrally truncated kernel with its exact finite feature map.

    ``truncated`` is the rank-``rank`` positive part of ``kernel``;
    ``features`` holds rows ``phi(x_i)`` with
    ``features @ features.T == truncated``.  ``embed`` maps kernel vectors of
    new items against the fitted set into the same feature space.
    """

    kernel: np.ndarray
    eigenvalues: np.ndarray  # descending
    rank: int
    truncated: np.ndarray
    features: np.ndarray
    basis: np.ndarray
    item_ids: tuple[str, ...] = ()

    def embed(self, kernel_rows) -> np.ndarray:
        """Out-of-sample features: ``phi_l(x) = k_x . v_l / sqrt(lam_l)``
        for a row (or rows) of kernel values against the fitted items."""
        k_x = np.atleast_2d(np.asarray(kernel_rows, dtype=float))
        if k_x.shape[1] != self.kernel.shape[0]:
            raise ValidationError(
                f"kernel rows have length {k_x.shape[1]}, expected "
                f"{self.kernel.shape[0]}")
        scale = 1.0 / np.sqrt(self.eigenvalues[:self.rank])
        return (k_x @ self.basis) * scale[None, :]


def truncate_and_features(kernel_matrix, rank: int | None = None,
                          item_ids=() ) -> GramModel:
    """Truncate a symmetric kernel matrix to its top positive eigenvalues and
    build the matching feature map.

    ``rank`` defaults to the number of strictly positive eigenvalues and may
    not exceed it.  The resulting ``truncated`` matrix is positive
    semidefinite for any admissible rank.
    """
    op = decompose(kernel_matrix)
    # descending order
    eigenvalues = op.eigenvalues[::-1].copy()
    vectors = op.eigenvectors[:, ::-1].copy()
    # canonical signs: the entry of largest magnitude is positive, so the
    # feature basis varies continuously under small kernel perturbations
    # (eigh signs are otherwise arbitrary)
    anchors = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[anchors, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    vectors = vectors * signs[None, :]
    positive = int((eigenvalues > op.zero_cutoff).sum())
    if positive == 0:
        raise ValidationError("kernel matrix has no strictly positive eigenvalues")
    if rank is None:
        rank = positive
    if not 1 <= rank <= positive:
        raise ValidationError(
            f"rank must lie in [1, {positive}] (positive spectrum), got {rank}")
    lead_values = eigenvalues[:rank]
    lead_vectors = vectors[:, :rank]
    truncated = (lead_vectors * lead_values) @ lead_vectors.T
    truncated = (truncated + truncated.T) / 2.0
    features = lead_vectors * np.sqrt(lead_values)
    return GramModel(
        kernel=np.asarray(kernel_matrix, dtype=float),
        eigenvalues=eigenvalues,
        rank=rank,
        truncated=truncated,
        features=features,
        basis=lead_vectors,
        item_ids=tuple(item_ids),
    )


class WassersteinFeatures(TransformerMixin, BaseEstimator):
    """Transport-kernel feature map over cell complexes.

    Fitting computes pairwise transport distances between the training
    complexes, selects a bandwidth (``sigma="auto"`` runs the median
    heuristic followed by the positive-semidefinite ladder search), forms the
    exponential Gram matrix, and truncates its spectrum to an exact finite
    feature map.  ``transform`` embeds new complexes through their kernel
    vector against the training set.

    Parameters
    ----------
    kind : {"w", "fgw"}
        Backing transport distance.
    p : float
        Cost exponent.
    alpha : float
        Feature/structure trade-off (fused kind only).
    degree : int
        Cell degree of the signal distributions.
    sigma : float, "auto", or "median"
        Exponential bandwidth; "auto" searches for a PSD bandwidth down a
        shrinking ladder, "median" uses the median heuristic and leaves
        positive semidefiniteness to the spectral truncation.
    squared : bool
        Exponentiate squared distances (default) or raw distances.
    rank : int or None
        Feature dimension; defaults to the full positive rank.
    pad : bool
        Zero-pad smaller Laplacians instead of erroring on size mismatch.
    cache_dir : str or None
        Optional persistent distance cache directory.
    n_jobs : int
        Worker threads for distance evaluation.
    """

    def __init__(self, kind="w", p=2.0, alpha=0.5, degree=0, sigma="auto",
                 shrink=0.5, max_steps=60, squared=True, rank=None, pad=False,
                 cache_dir=None, n_jobs=1):
        self.kind = kind
        self.p = p
        self.alpha = alpha
        self.degree = degree
        self.sigma = sigma
        self.shrink = shrink
        self.max_steps = max_steps
        self.squared = squared
        self.rank = rank
        self.pad = pad
        self.cache_dir = cache_dir
        self.n_jobs = n_jobs

    def _spec(self, sigma: float) -> KernelSpec:
        return KernelSpec(kind=self.kind, p=self.p, alpha=self.alpha,
                          sigma=sigma, degree=self.degree)

    def fit(self, X, y=None):
        items = list(X)
        if not items:
            raise ValidationError("need at least one training complex")
        self.items_ = items
        self.cache_ = DistanceCache(self.cache_dir)
        probe_spec = self._spec(1.0)
        self.distances_ = pairwise_distance(items, probe_spec, cache=self.cache_,
                                            pad=self.pad, n_jobs=self.n_jobs)
        if self.sigma == "auto":
            self.sigma_ = sigma_psd_search(self.distances_, shrink=self.shrink,
                                           max_steps=self.max_steps,
                                           squared=self.squared)
        elif self.sigma == "median":
            # rely on spectral truncation for positive semidefiniteness
            self.sigma_ = default_sigma(self.distances_)
        else:
            self.sigma_ = check_positive(self.sigma, "sigma")
        self.spec_ = self._spec(self.sigma_)
        ids = tuple(complex_hash(c)[:12] for c in items)
        self.kernel_ = gram(self.distances_, self.sigma_, squared=self.squared)
        rank = self.rank
        if rank is not None:
            op = decompose(self.kernel_)
            positive = int((op.eigenvalues > op.zero_cutoff).sum())
            rank = max(1, min(rank, positive))  # requested rank is an upper bound
        self.model_ = truncate_and_features(self.kernel_, rank=rank,
                                            item_ids=ids)
        self.rank_ = self.model_.rank
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ValidationError("transformer is not fitted yet")

    def kernel_rows(self, X, scale: float = 1.0) -> np.ndarray:
        """Kernel values of new complexes against the training set, at the
        fitted bandwidth times ``scale``."""
        self._check_fitted()
        crossed = cross_distance(list(X), self.items_, self.spec_,
                                 cache=self.cache_, pad=self.pad,
                                 n_jobs=self.n_jobs)
        sigma = self.sigma_ * check_positive(scale, "scale")
        exponent = crossed ** 2 if self.squared else crossed
        return np.exp(-exponent / (2.0 * sigma ** 2))

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        return self.model_.embed(self.kernel_rows(X))

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).model_.features

    def features_at_scale(self, scale: float) -> tuple[np.ndarray, GramModel]:
        """Training features recomputed with the bandwidth multiplied by
        ``scale``, truncated to at most the fitted rank and zero-padded so
        the feature dimension stays fixed.

        Cheap by design: the distances are reused, only the entrywise
        exponential and a small eigendecomposition are redone.
        """
        self._check_fitted()
        sigma = self.sigma_ * check_positive(scale, "scale")
        kernel = gram(self.distances_, sigma, squared=self.squared)
        op = decompose(kernel)
        positive = int((op.eigenvalues[::-1] > op.zero_cutoff).sum())
        rank = min(self.rank_, max(positive, 1))
        model = truncate_and_features(kernel, rank=rank,
                                      item_ids=self.model_.item_ids)
        features = model.features
        if features.shape[1] < self.rank_:
            padding = np.zeros((features.shape[0], self.rank_ - features.shape[1]))
            features = np.hstack([features, padding])
        return features, model

    def embed_at_scale(self, kernel_rows_unit: np.ndarray, scale: float,
                       model: GramModel) -> np.ndarray:
        """Out-of-sample features at a rescaled bandwidth.

        ``kernel_rows_unit`` must be the *distances* of the new items to the
        training items (not kernel values); they are exponentiated here at
        the scaled bandwidth and embedded through ``model``.
        """
        self._check_fitted()
        sigma = self.sigma_ * check_positive(scale, "scale")
        exponent = kernel_rows_unit ** 2 if self.squared else kernel_rows_unit
        rows = np.exp(-exponent / (2.0 * sigma ** 2))
        features = model.embed(rows)
        if features.shape[1] < self.rank_:
            padding = np.zeros((features.shape[0], self.rank_ - features.shape[1]))
            features = np.hstack([features, padding])
        return features

    def cross_distances(self, X) -> np.ndarray:
        """Distances of new complexes to the training items."""
        self._check_fitted()
        return cross_distance(list(X), self.items_, self.spec_,
                              cache=self.cache_, pad=self.pad,
                              n_jobs=self.n_jobs)


# -- CSV export ----------------------------------------------------------------

def write_matrix_csv(path, matrix, item_ids) -> None:
    """Row-major CSV with a header of item ids (Gram matrices, heatmap data)."""
    matrix = np.asarray(matrix, dtype=float)
    ids = [str(i) for i in item_ids]
    if matrix.shape[0] != len(ids):
        raise ValidationError(
            f"matrix has {matrix.shape[0]} rows but {len(ids)} ids were given")
    if matrix.shape[0] == matrix.shape[1]:
        columns = ids
    else:
        columns = [f"col{j}" for j in range(matrix.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + columns)
        for row_id, row in zip(ids, matrix):
            writer.writerow([row_id] + [repr(float(v)) for v in row])


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Parse a matrix written by :func:`write_matrix_csv`."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids = []
        rows = []
        for record in reader:
            ids.append(record[0])
            rows.append([float(v) for v in record[1:]])
    matrix = np.asarray(rows, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] != len(header) - 1:
        raise ValidationError(f"{path} is not a rectangular matrix CSV")
    return ids, matrix
