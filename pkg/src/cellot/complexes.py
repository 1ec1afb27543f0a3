"""Finite weighted cell complexes.

A complex is stored combinatorially: cell counts per dimension, signed
integer incidence matrices ``B_k`` mapping k-cells to their (k-1)-faces,
and one strictly positive weight per cell.  From these we assemble the
degree-k Hodge Laplacian

    L_k = B_k^T W_{k-1}^{-1} B_k W_k  +  W_k^{-1} B_{k+1} W_{k+1} B_{k+1}^T

and its symmetric representative ``W_k^{1/2} L_k W_k^{-1/2}``, which has the
same spectrum and is the matrix all spectral work downstream operates on.

The module also provides a seeded random generator (random 1-skeleton with
filled triangles) and a canonical JSON file format with sparse incidence
triplets.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ValidationError

#: floor added to sampled weights so the inverse weight matrices stay
#: well conditioned
WEIGHT_FLOOR = 0.1


def _frozen_array(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Chain:
    """Integer combination of k-cells."""

    degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coefficients",
                           _frozen_array(self.coefficients, np.int64))


@dataclass(frozen=True)
class Cochain:
    """Real-valued signal on k-cells (one value per cell, dual basis)."""

    degree: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, np.float64))


@dataclass(frozen=True)
class CWComplex:
    """Finite weighted cell complex.

    Parameters
    ----------
    dimension : int
        Top cell dimension ``n >= 0``.
    cell_counts : sequence of int
        ``[N_0, ..., N_n]``, the number of k-cells per dimension.
    boundaries : sequence of arrays
        Incidence matrices ``B_k`` for ``k = 1..n``; ``B_k`` has shape
        ``(N_{k-1}, N_k)`` with integer entries, column ``j`` encoding the
        boundary of the j-th k-cell as a (k-1)-chain.
    weights : sequence of arrays
        Strictly positive weight vectors ``w^k`` of length ``N_k`` for
        ``k = 0..n``.

    Construction is permissive: invariants are reported by :func:`validate`
    rather than enforced here.  Instances are immutable and safe to share
    across threads.
    """

    dimension: int
    cell_counts: tuple[int, ...]
    boundaries: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "dimension", int(self.dimension))
        object.__setattr__(self, "cell_counts",
                           tuple(int(c) for c in self.cell_counts))
        object.__setattr__(self, "boundaries",
                           tuple(_frozen_array(b, np.int64) for b in self.boundaries))
        object.__setattr__(self, "weights",
                           tuple(_frozen_array(w, np.float64) for w in self.weights))

    def n_cells(self, degree: int) -> int:
        return self.cell_counts[degree]

    def boundary(self, degree: int) -> np.ndarray:
        """Incidence matrix ``B_degree`` (defined for ``1 <= degree <= dimension``)."""
        if not 1 <= degree <= self.dimension:
            raise ValidationError(
                f"boundary degree must lie in [1, {self.dimension}], got {degree}")
        return self.boundaries[degree - 1]


def validate(complex: CWComplex) -> list[str]:
    """Check every structural invariant; return a list of violations.

    An empty list means the complex is valid.  Each violation names the
    failing matrix or index.  This function reports and never raises.
    """
    violations: list[str] = []
    n = complex.dimension
    counts = complex.cell_counts

    if n < 0:
        violations.append(f"dimension is negative: {n}")
        return violations
    if len(counts) != n + 1:
        violations.append(
            f"cell_counts has length {len(counts)}, expected {n + 1}")
        return violations
    if any(c < 0 for c in counts):
        violations.append(f"cell_counts contains negative entries: {counts}")

    if len(complex.boundaries) != n:
        violations.append(
            f"boundaries has length {len(complex.boundaries)}, expected {n}")
        return violations
    if len(complex.weights) != n + 1:
        violations.append(
            f"weights has length {len(complex.weights)}, expected {n + 1}")
        return violations

    for k in range(1, n + 1):
        b = complex.boundaries[k - 1]
        expected = (counts[k - 1], counts[k])
        if b.shape != expected:
            violations.append(
                f"boundaries[{k}] has shape {b.shape}, expected {expected}")

    for k in range(n + 1):
        w = complex.weights[k]
        if w.shape != (counts[k],):
            violations.append(
                f"weights[{k}] has length {w.shape}, expected ({counts[k]},)")
            continue
        if not np.all(np.isfinite(w)):
            violations.append(f"weights[{k}] contains non-finite entries")
        bad = np.nonzero(w <= 0)[0]
        for idx in bad:
            violations.append(
                f"weights[{k}][{idx}] = {w[idx]!r} is not strictly positive")

    # boundary-of-boundary vanishes, exact in integer arithmetic
    for k in range(1, n):
        bk = complex.boundaries[k - 1]
        bk1 = complex.boundaries[k]
        if bk.shape[1] != bk1.shape[0]:
            continue  # shape violation already recorded
        product = bk @ bk1
        if np.any(product != 0):
            row, col = np.argwhere(product != 0)[0]
            violations.append(
                f"boundaries[{k}] @ boundaries[{k + 1}] is nonzero at "
                f"({row}, {col}): composition of boundaries must vanish")

    return violations


def _require_valid(complex: CWComplex) -> None:
    violations = validate(complex)
    if violations:
        raise ValidationError("invalid complex: " + "; ".join(violations))


def boundary_apply(complex: CWComplex, chain: Chain) -> Chain:
    """Apply the boundary operator: a k-chain maps to the (k-1)-chain
    ``B_k @ coefficients``."""
    k = chain.degree
    if not 1 <= k <= complex.dimension:
        raise ValidationError(
            f"chain degree must lie in [1, {complex.dimension}], got {k}")
    if chain.coefficients.shape != (complex.cell_counts[k],):
        raise ValidationError(
            f"chain has {chain.coefficients.shape[0]} coefficients, expected "
            f"{complex.cell_counts[k]}")
    return Chain(k - 1, complex.boundaries[k - 1] @ chain.coefficients)


def hodge_laplacian(complex: CWComplex, degree: int) -> np.ndarray:
    """Degree-k Hodge Laplacian as a dense ``N_k x N_k`` matrix.

    The down term uses ``B_k`` and the up term ``B_{k+1}``; whichever is
    absent (``k = 0`` or ``k = dimension``) contributes zero.  With identity
    weights and ``degree = 0`` this reduces to the combinatorial graph
    Laplacian ``B_1 @ B_1.T``.
    """
    if not 0 <= degree <= complex.dimension:
        raise ValidationError(
            f"degree must lie in [0, {complex.dimension}], got {degree}")
    _require_valid(complex)

    n_k = complex.cell_counts[degree]
    lap = np.zeros((n_k, n_k))
    if degree >= 1:
        b = complex.boundaries[degree - 1].astype(float)
        w_faces_inv = 1.0 / complex.weights[degree - 1]
        w_cells = complex.weights[degree]
        lap += (b.T * w_faces_inv[None, :]) @ b * w_cells[None, :]
    if degree < complex.dimension:
        b_up = complex.boundaries[degree].astype(float)
        w_cells_inv = 1.0 / complex.weights[degree]
        w_up = complex.weights[degree + 1]
        lap += w_cells_inv[:, None] * ((b_up * w_up[None, :]) @ b_up.T)
    return lap


def symmetric_representative(complex: CWComplex, degree: int) -> np.ndarray:
    """Similarity transform ``W^{1/2} L_k W^{-1/2}`` of the Hodge Laplacian.

    This is the matrix of the same operator in an orthonormal basis for the
    weighted inner product: symmetric, positive semidefinite, and with the
    same spectrum as :func:`hodge_laplacian`.  Round-off asymmetry is removed
    by averaging with the transpose.
    """
    lap = hodge_laplacian(complex, degree)
    sqrt_w = np.sqrt(complex.weights[degree])
    rep = sqrt_w[:, None] * lap / sqrt_w[None, :]
    return (rep + rep.T) / 2.0


# -- random generation -------------------------------------------------------

def _half_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    return np.abs(rng.standard_normal(size)) + WEIGHT_FLOOR


def _uniform(rng: np.random.Generator, size: int) -> np.ndarray:
    return WEIGHT_FLOOR + rng.random(size)


def _ones(rng: np.random.Generator, size: int) -> np.ndarray:
    return np.ones(size)


WEIGHT_LAWS = {
    "half_normal": _half_normal,
    "uniform": _uniform,
    "ones": _ones,
}


def random_complex(seed: int, n_vertices: int, edge_prob: float = 0.3,
                   fill_prob: float = 0.5, weight_law="half_normal") -> CWComplex:
    """Seeded random complex of dimension at most two.

    The 1-skeleton is an Erdos-Renyi graph on ``n_vertices`` vertices; every
    triangle of the skeleton is filled as a 2-cell independently with
    probability ``fill_prob``.  Weights are drawn from ``weight_law`` (a key
    of :data:`WEIGHT_LAWS` or a callable ``(rng, size) -> array``); the
    default is the absolute value of a unit Gaussian plus a positive floor.

    Deterministic for a fixed seed, and always emits a valid complex.
    """
    if n_vertices < 1:
        raise ValidationError(f"n_vertices must be >= 1, got {n_vertices}")
    edge_prob = float(edge_prob)
    fill_prob = float(fill_prob)
    if not 0.0 <= edge_prob <= 1.0 or not 0.0 <= fill_prob <= 1.0:
        raise ValidationError("edge_prob and fill_prob must lie in [0, 1]")
    if callable(weight_law):
        law = weight_law
    else:
        try:
            law = WEIGHT_LAWS[weight_law]
        except KeyError:
            raise ValidationError(
                f"unknown weight_law {weight_law!r}; choose from "
                f"{sorted(WEIGHT_LAWS)} or pass a callable") from None

    rng = np.random.default_rng(seed)
    pairs = list(itertools.combinations(range(n_vertices), 2))
    keep = rng.random(len(pairs)) < edge_prob
    edges = [pair for pair, k in zip(pairs, keep) if k]
    edge_index = {pair: idx for idx, pair in enumerate(edges)}

    adjacency = set(edges)
    triangles = [
        (i, j, k)
        for i, j, k in itertools.combinations(range(n_vertices), 3)
        if (i, j) in adjacency and (i, k) in adjacency and (j, k) in adjacency
    ]
    keep_tri = rng.random(len(triangles)) < fill_prob
    faces = [tri for tri, k in zip(triangles, keep_tri) if k]

    b1 = np.zeros((n_vertices, len(edges)), dtype=np.int64)
    for idx, (i, j) in enumerate(edges):
        b1[i, idx] = -1
        b1[j, idx] = 1

    b2 = np.zeros((len(edges), len(faces)), dtype=np.int64)
    for idx, (i, j, k) in enumerate(faces):
        # oriented boundary (j,k) - (i,k) + (i,j); composes to zero with b1
        b2[edge_index[(j, k)], idx] = 1
        b2[edge_index[(i, k)], idx] = -1
        b2[edge_index[(i, j)], idx] = 1

    if faces:
        dimension = 2
        counts = (n_vertices, len(edges), len(faces))
        boundaries = (b1, b2)
    elif edges:
        dimension = 1
        counts = (n_vertices, len(edges))
        boundaries = (b1,)
    else:
        dimension = 0
        counts = (n_vertices,)
        boundaries = ()

    weights = tuple(law(rng, counts[k]) for k in range(dimension + 1))
    return CWComplex(dimension, counts, boundaries, weights)


def reweighted(complex: CWComplex, transform) -> CWComplex:
    """Copy of the complex with every weight vector mapped through
    ``transform`` (an elementwise callable).  Structure is unchanged."""
    new_weights = tuple(np.asarray(transform(w), dtype=float) for w in complex.weights)
    return replace(complex, weights=new_weights)


# -- serialization ------------------------------------------------------------

def to_json_dict(complex: CWComplex) -> dict:
    """Canonical JSON-ready representation with sparse incidence triplets
    sorted by (degree, column, row)."""
    boundaries = []
    for k in range(1, complex.dimension + 1):
        b = complex.boundaries[k - 1]
        cols, rows = np.nonzero(b.T)  # iterate column-major for (col, row) order
        entries = [[int(r), int(c), int(b[r, c])] for c, r in zip(cols, rows)]
        boundaries.append({"k": k, "entries": entries})
    return {
        "dimension": complex.dimension,
        "cells": list(complex.cell_counts),
        "boundaries": boundaries,
        "weights": [[float(x) for x in w] for w in complex.weights],
    }


def from_json_dict(data: dict) -> CWComplex:
    """Parse the file format produced by :func:`to_json_dict`."""
    try:
        dimension = int(data["dimension"])
        counts = [int(c) for c in data["cells"]]
        weight_lists = data["weights"]
        boundary_specs = data["boundaries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed complex document: {exc}") from exc

    if len(counts) != dimension + 1:
        raise ValidationError(
            f"cells has length {len(counts)}, expected {dimension + 1}")
    if len(weight_lists) != dimension + 1:
        raise ValidationError(
            f"weights has length {len(weight_lists)}, expected {dimension + 1}")

    by_degree = {}
    for spec in boundary_specs:
        try:
            k = int(spec["k"])
            entries = spec["entries"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed boundary block: {exc}") from exc
        if not 1 <= k <= dimension:
            raise ValidationError(f"boundary degree {k} outside [1, {dimension}]")
        if k in by_degree:
            raise ValidationError(f"duplicate boundary block for degree {k}")
        by_degree[k] = entries

    boundaries = []
    for k in range(1, dimension + 1):
        b = np.zeros((counts[k - 1], counts[k]), dtype=np.int64)
        for entry in by_degree.get(k, []):
            try:
                row, col, coeff = (int(v) for v in entry)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"malformed incidence triplet {entry!r}") from exc
            if not (0 <= row < counts[k - 1] and 0 <= col < counts[k]):
                raise ValidationError(
                    f"incidence triplet {entry!r} out of bounds for degree {k}")
            b[row, col] = coeff
        boundaries.append(b)

    weights = [np.asarray(w, dtype=float) for w in weight_lists]
    return CWComplex(dimension, counts, boundaries, weights)


def canonical_json(complex: CWComplex) -> str:
    return json.dumps(to_json_dict(complex), sort_keys=True, separators=(",", ":"))


def complex_hash(complex: CWComplex) -> str:
    """Content hash of the canonical serialization (used for cache keys)."""
    return hashlib.sha256(canonical_json(complex).encode("utf-8")).hexdigest()


def save_complex(complex: CWComplex, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(complex))
        fh.write("\n")


def load_complex(path) -> CWComplex:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path} is not valid JSON: {exc}") from exc
    return from_json_dict(data)
