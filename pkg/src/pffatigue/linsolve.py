"""Sparse direct solves with separately counted factorize / solve phases.

Backed by SuperLU (``scipy.sparse.linalg.splu``) in symmetric mode with
diagonal pivoting, i.e. an LDL^T-like factorization of the symmetrically
permuted matrix.  The fill-reducing ordering of each subproblem is computed
on its first factorization and reused afterwards, since the sparsity
pattern never changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_SYM_OPTIONS = dict(SymmetricMode=True)


class FactorizationError(RuntimeError):
    """Singular or indefinite matrix; ``tag`` names the subproblem."""

    def __init__(self, tag: str, message: str):
        super().__init__(f"[{tag}] {message}")
        self.tag = tag


@dataclass
class FactorCounter:
    """Factorization events per subproblem.

    One *paired* factorization is one refactorization of both subproblem
    matrices.  When the two are refactorized independently the paired count
    is defined as the number of displacement refactorizations.
    """

    counts: dict[str, int] = field(default_factory=lambda: {"u": 0, "phi": 0})

    def record(self, tag: str) -> None:
        self.counts[tag] = self.counts.get(tag, 0) + 1

    @property
    def paired(self) -> int:
        return self.counts.get("u", 0)

    def __getitem__(self, tag: str) -> int:
        return self.counts.get(tag, 0)


class Ordering:
    """Fill-reducing symmetric permutation, computed once and reused."""

    def __init__(self):
        self.perm: np.ndarray | None = None

    def permute(self, A: sp.csc_matrix) -> sp.csc_matrix:
        p = self.perm
        return A[p][:, p].tocsc()


@dataclass(frozen=True)
class Factorization:
    """Reusable factorization of a symmetric matrix.

    ``created_at`` is the increment index at which it was computed.
    """

    lu: spla.SuperLU
    tag: str
    created_at: int
    perm: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.lu.shape

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return solve(self, rhs)


def factorize(matrix, tag: str = "u", counter: FactorCounter | None = None,
              ordering: Ordering | None = None, created_at: int = 0,
              check_definite: bool = True) -> Factorization:
    """Factorize a sparse symmetric matrix.

    Raises :class:`FactorizationError` if the matrix is singular, or has a
    non-positive pivot while ``check_definite`` is set.
    """
    A = sp.csc_matrix(matrix)
    if A.shape[0] != A.shape[1]:
        raise FactorizationError(tag, f"matrix is not square: {A.shape}")
    perm = None
    try:
        if ordering is not None and ordering.perm is not None:
            perm = ordering.perm
            lu = spla.splu(ordering.permute(A), permc_spec="NATURAL", diag_pivot_thresh=0.0, options=_SYM_OPTIONS)
        else:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=_SYM_OPTIONS)
            if ordering is not None:
                ordering.perm = np.argsort(lu.perm_c)
    except RuntimeError as exc:
        raise FactorizationError(tag, f"factorization failed: {exc}") from exc
    pivots = lu.U.diagonal()
    if not np.all(np.isfinite(pivots)) or np.any(pivots == 0.0):
        raise FactorizationError(tag, "matrix is singular")
    if check_definite and np.any(pivots < 0.0):
        raise FactorizationError(tag, f"matrix is indefinite ({int(np.sum(pivots < 0))} negative pivots)")
    if counter is not None:
        counter.record(tag)
    return Factorization(lu, tag, created_at, perm)


def solve(f: Factorization, rhs: np.ndarray) -> np.ndarray:
    """Back-substitution with an existing factorization (not counted)."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != f.shape[0]:
        raise ValueError(f"[{f.tag}] rhs has length {rhs.shape[0]}, matrix has {f.shape[0]} rows")
    if f.perm is None:
        return f.lu.solve(rhs)
    x = np.empty_like(rhs)
    x[f.perm] = f.lu.solve(rhs[f.perm])
    return x
