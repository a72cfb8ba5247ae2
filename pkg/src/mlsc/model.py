"""Core types of the multi-layer sparse coding model.

A model is an ordered chain of dictionaries ``D_1, ..., D_k`` with
``D_1`` of shape ``(n, m_1)`` and ``D_i`` of shape ``(m_{i-1}, m_i)``.  A
signal admits a representation when ``x = D_1 g_1``, ``g_{i-1} = D_i g_i``
and every ``g_i`` is sparse.  Viewed from the deepest layer, the zeros of
the intermediate representations are linear (analysis) constraints on
``g_k``; :func:`build_phi` stacks them and returns an orthonormal basis of
the admissible subspace.

Layer indices in the public API are 1-based (``effective_dictionary(model,
1, 2)``), entry indices inside numpy arrays are 0-based.  The file formats
in :mod:`mlsc.io` convert entry indices to 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

#: Relative singular value threshold used for every numerical rank decision.
RANK_RTOL = 1e-10


def as_dictionary(D, name: str = "dictionary") -> np.ndarray:
    """Validate and return ``D`` as a read-only 2-D float array."""
    arr = np.array(D, dtype=float, copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _frozen(v) -> np.ndarray:
    arr = np.array(v, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def _index_set(idx, size: int, name: str) -> np.ndarray:
    arr = np.unique(np.asarray(idx, dtype=int).ravel())
    if arr.size and (arr[0] < 0 or arr[-1] >= size):
        raise ValueError(f"{name} has indices outside [0, {size})")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MultiLayerModel:
    """Chain of dictionaries ``D_1 ... D_k``."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(as_dictionary(D, f"D_{i + 1}") for i, D in enumerate(self.layers))
        if not layers:
            raise ValueError("a model needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i - 1].shape[1] != layers[i].shape[0]:
                raise ValueError(
                    f"D_{i} has {layers[i - 1].shape[1]} columns but D_{i + 1} has "
                    f"{layers[i].shape[0]} rows"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def signal_dim(self) -> int:
        return self.layers[0].shape[0]

    @property
    def dims(self) -> tuple:
        """``(n, m_1, ..., m_k)``."""
        return (self.signal_dim,) + tuple(D.shape[1] for D in self.layers)

    def layer(self, i: int) -> np.ndarray:
        """Dictionary ``D_i`` (1-based)."""
        if not 1 <= i <= self.depth:
            raise IndexError(f"layer index {i} outside 1..{self.depth}")
        return self.layers[i - 1]

    def effective(self, i: int, j: int | None = None) -> np.ndarray:
        return effective_dictionary(self, i, j)


def effective_dictionary(model: MultiLayerModel, i: int, j: int | None = None) -> np.ndarray:
    """Product ``D_i D_{i+1} ... D_j``.

    With a single index the product starts at the first layer, so
    ``effective_dictionary(model, j)`` is ``D_(j) = D_(1, j)``.
    """
    if j is None:
        i, j = 1, i
    k = model.depth
    if not (1 <= i <= j <= k):
        raise IndexError(f"need 1 <= i <= j <= {k}, got i={i}, j={j}")
    out = model.layers[i - 1]
    for D in model.layers[i:j]:
        out = out @ D
    return out


def propagation_matrices(model: MultiLayerModel) -> list:
    """``[D_(2,k), D_(3,k), ..., D_(k,k)]``: maps from ``g_k`` to each mid-layer."""
    k = model.depth
    mats = []
    acc = None
    for i in range(k, 1, -1):
        acc = model.layers[i - 1] if acc is None else model.layers[i - 1] @ acc
        mats.append(acc)
    return mats[::-1]


@dataclass(frozen=True)
class SupportPattern:
    """Per-layer supports (0-based, sorted) and their complements.

    ``supports[i - 1]`` is the support of ``g_i``; the co-support is its
    complement in ``range(m_i)``.
    """

    supports: tuple
    sizes: tuple

    def __post_init__(self):
        if len(self.supports) != len(self.sizes):
            raise ValueError("one support per layer is required")
        sup = tuple(
            _index_set(s, m, f"support of layer {i + 1}")
            for i, (s, m) in enumerate(zip(self.supports, self.sizes))
        )
        object.__setattr__(self, "supports", sup)
        object.__setattr__(self, "sizes", tuple(int(m) for m in self.sizes))

    @classmethod
    def from_cosupports(cls, cosupports, deep_support, sizes) -> "SupportPattern":
        """Build from mid-layer co-supports and the deepest support."""
        sizes = tuple(int(m) for m in sizes)
        sup = []
        for cs, m in zip(cosupports, sizes[:-1]):
            mask = np.ones(m, dtype=bool)
            mask[np.asarray(cs, dtype=int)] = False
            sup.append(np.flatnonzero(mask))
        sup.append(np.asarray(deep_support, dtype=int))
        return cls(tuple(sup), sizes)

    @property
    def cosupports(self) -> tuple:
        out = []
        for s, m in zip(self.supports, self.sizes):
            mask = np.ones(m, dtype=bool)
            mask[s] = False
            out.append(np.flatnonzero(mask))
        return tuple(out)

    @property
    def sparsities(self) -> tuple:
        return tuple(len(s) for s in self.supports)

    @property
    def cosparsities(self) -> tuple:
        return tuple(m - len(s) for s, m in zip(self.supports, self.sizes))

    @property
    def total_cosparsity(self) -> int:
        """Sum of the mid-layer co-sparsities."""
        return int(sum(self.cosparsities[:-1]))


def support_of(v, rtol: float = 0.0) -> np.ndarray:
    """Indices of entries with ``|v_j| > rtol * ||v||_2``."""
    v = np.asarray(v, dtype=float)
    thr = rtol * np.linalg.norm(v)
    return np.flatnonzero(np.abs(v) > thr)


@dataclass(frozen=True)
class RepresentationStack:
    """Signal ``x`` and its representations ``g_1 ... g_k``."""

    x: np.ndarray
    gammas: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x))
        object.__setattr__(self, "gammas", tuple(_frozen(g) for g in self.gammas))

    @property
    def depth(self) -> int:
        return len(self.gammas)

    def gamma(self, i: int) -> np.ndarray:
        """``g_i`` with ``g_0 = x`` (1-based layers)."""
        return self.x if i == 0 else self.gammas[i - 1]

    def pattern(self, rtol: float = 0.0) -> SupportPattern:
        sizes = [len(g) for g in self.gammas]
        return SupportPattern(tuple(support_of(g, rtol) for g in self.gammas), sizes)


@dataclass(frozen=True)
class StackReport:
    residuals: tuple
    consistent: tuple
    l0: tuple
    tol: float

    @property
    def valid(self) -> bool:
        return all(self.consistent)


def validate_stack(model: MultiLayerModel, stack: RepresentationStack, tol: float = 1e-10) -> StackReport:
    """Residuals ``||g_{i-1} - D_i g_i||_2`` per layer (``g_0 = x``) and l0 counts."""
    if stack.depth != model.depth:
        raise ValueError(f"stack has {stack.depth} layers, model has {model.depth}")
    res = []
    for i in range(1, model.depth + 1):
        res.append(float(np.linalg.norm(stack.gamma(i - 1) - model.layer(i) @ stack.gamma(i))))
    l0 = tuple(int(np.count_nonzero(g)) for g in stack.gammas)
    return StackReport(tuple(res), tuple(r <= tol for r in res), l0, tol)


def numerical_rank(sv: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Count singular values above ``rtol * max(sv)``."""
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.count_nonzero(sv > rtol * sv[0]))


def _fix_signs(B: np.ndarray) -> np.ndarray:
    # first nonzero entry of each column made positive
    for c in range(B.shape[1]):
        col = B[:, c]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))
        if nz.size and col[nz[0]] < 0:
            B[:, c] = -col
    return B


def kernel_basis(A: np.ndarray, ncols: int | None = None, rtol: float = RANK_RTOL):
    """Orthonormal basis of ``ker(A)`` and the numerical rank of ``A``.

    Returns ``(K, r)`` with ``K`` of shape ``(ncols, ncols - r)``.  A matrix
    with no rows has rank 0 and ``K`` is the identity.
    """
    A = np.asarray(A, dtype=float)
    if ncols is None:
        ncols = A.shape[1]
    if A.size == 0:
        return np.eye(ncols), 0
    _, sv, Vt = np.linalg.svd(A, full_matrices=True)
    r = numerical_rank(sv, rtol)
    K = np.ascontiguousarray(Vt[r:].T)
    return _fix_signs(K), r


@dataclass(frozen=True)
class AnalysisConstraint:
    """Analysis constraints on ``g_k`` induced by mid-layer co-supports.

    ``phi_full`` stacks rows ``cosupports[i]`` of ``D_(i+1,k)``;
    ``phi_restricted`` keeps the columns in ``deep_support``; ``kernel`` is an
    orthonormal basis of ``ker(phi_restricted)`` with ``rank`` its rank.
    """

    phi_full: np.ndarray
    phi_restricted: np.ndarray
    kernel: np.ndarray
    rank: int
    deep_support: np.ndarray
    cosupports: tuple

    @property
    def dof(self) -> int:
        """Free dimensions ``s_k - r`` of the deepest representation."""
        return self.kernel.shape[1]

    def embed(self, alpha) -> np.ndarray:
        """Full-length ``g_k`` with ``g_k[support] = K alpha``."""
        m = self.phi_full.shape[1]
        out = np.zeros(m)
        out[self.deep_support] = self.kernel @ np.asarray(alpha, dtype=float)
        return out


def stack_phi(model: MultiLayerModel, cosupports: Sequence) -> np.ndarray:
    """Rows ``cosupports[i-1]`` of ``D_(i+1,k)`` stacked in layer order."""
    k = model.depth
    if len(cosupports) != k - 1:
        raise ValueError(f"expected {k - 1} mid-layer co-supports, got {len(cosupports)}")
    mk = model.dims[-1]
    blocks = [np.zeros((0, mk))]
    for i, (P, cs) in enumerate(zip(propagation_matrices(model), cosupports)):
        cs = np.asarray(cs, dtype=int).ravel()
        if cs.size and (cs.min() < 0 or cs.max() >= P.shape[0]):
            raise ValueError(f"co-support of layer {i + 1} out of range")
        blocks.append(P[cs])
    return np.vstack(blocks)


def build_phi(model: MultiLayerModel, cosupports: Sequence, deep_support) -> AnalysisConstraint:
    """Analysis matrix, its restriction to the deepest support and the kernel basis."""
    deep = np.asarray(deep_support, dtype=int).ravel()
    mk = model.dims[-1]
    if deep.size == 0:
        raise ValueError("deepest support is empty")
    if len(np.unique(deep)) != deep.size or deep.min() < 0 or deep.max() >= mk:
        raise ValueError("deepest support must hold distinct indices in range")
    phi = stack_phi(model, cosupports)
    phi_r = phi[:, deep]
    K, r = kernel_basis(phi_r, ncols=deep.size)
    for a in (phi, phi_r, K, deep):
        a.setflags(write=False)
    cs = tuple(np.asarray(c, dtype=int).ravel() for c in cosupports)
    return AnalysisConstraint(phi, phi_r, K, r, deep, cs)
