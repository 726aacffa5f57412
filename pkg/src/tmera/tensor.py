"""Dense complex tensors with optional leg labels, and the linear-algebra
primitives the rest of the package is built on.

Conventions
-----------
* All tensor data is ``complex128`` and stored C-contiguously, so the flat
  view returned by :attr:`Tensor.data` enumerates entries with the *last*
  leg varying fastest (row-major).  This layout is part of the contract:
  checkpoint files serialize exactly these bytes.
* A :class:`Matricization` names which legs become matrix rows and which
  become columns.  Row/column multi-indices are enumerated in the leg order
  given, again row-major.
* ``svd`` returns singular values in descending order; ``herm_eig`` returns
  eigenvalues in ascending order.  Both inherit LAPACK's deterministic
  behaviour for a fixed input.
"""

from __future__ import annotations

import numpy as np


class TensorError(ValueError):
    """Base class for all tensor-layer errors."""


class LegMismatchError(TensorError):
    """A contraction pairing joins two legs of unequal dimension."""

    def __init__(self, leg_a, dim_a, leg_b, dim_b):
        self.pair = (leg_a, leg_b)
        super().__init__(
            f"cannot pair leg {leg_a!r} (dim {dim_a}) with leg {leg_b!r} (dim {dim_b})"
        )


class NonFiniteError(TensorError):
    """Input contains NaN or Inf where finite data is required."""


class NotHermitianError(TensorError):
    """Matricized input is not Hermitian within tolerance."""


class ShapeError(TensorError):
    """Matricization or decomposition shape requirement violated."""


class Tensor:
    """A dense complex tensor: dimensions, flat data, optional leg labels.

    Parameters
    ----------
    array : array_like
        Anything numpy can coerce; stored as C-contiguous complex128.
    legs : sequence of str, optional
        One unique label per leg.  Purely descriptive — all operations also
        accept positional leg indices.
    """

    __slots__ = ("array", "legs")

    def __init__(self, array, legs=None):
        arr = np.asarray(array, dtype=np.complex128)
        if arr.ndim == 0:
            raise TensorError("a tensor needs at least one leg; got a scalar")
        arr = np.ascontiguousarray(arr)
        if any(d <= 0 for d in arr.shape):
            raise TensorError(f"all leg dimensions must be positive, got {arr.shape}")
        if legs is not None:
            legs = tuple(legs)
            if len(legs) != arr.ndim:
                raise TensorError(
                    f"{len(legs)} labels for a {arr.ndim}-leg tensor"
                )
            if len(set(legs)) != len(legs):
                raise TensorError(f"leg labels must be unique, got {legs}")
        self.array = arr
        self.legs = legs

    @property
    def ndim(self):
        return self.array.ndim

    @property
    def dims(self):
        return self.array.shape

    @property
    def data(self):
        """Flat row-major view of the entries (last leg fastest)."""
        return self.array.reshape(-1)

    def leg_index(self, leg):
        """Resolve a leg given either its position or its label."""
        if isinstance(leg, (int, np.integer)):
            n = self.array.ndim
            i = int(leg)
            if not -n <= i < n:
                raise TensorError(f"leg index {i} out of range for {n} legs")
            return i % n
        if self.legs is None:
            raise TensorError(f"tensor has no labels; cannot resolve leg {leg!r}")
        try:
            return self.legs.index(leg)
        except ValueError:
            raise TensorError(f"no leg labelled {leg!r} (have {self.legs})") from None

    def conj(self):
        return Tensor(self.array.conj(), self.legs)

    def transpose(self, perm):
        perm = [self.leg_index(p) for p in perm]
        legs = tuple(self.legs[p] for p in perm) if self.legs is not None else None
        return Tensor(self.array.transpose(perm), legs)

    def relabel(self, legs):
        return Tensor(self.array, legs)

    def __repr__(self):
        lab = f", legs={self.legs}" if self.legs is not None else ""
        return f"Tensor(dims={self.dims}{lab})"


class Matricization:
    """A split of a tensor's legs into matrix rows and columns.

    ``row_legs`` and ``col_legs`` are leg positions; together they must be a
    permutation of ``range(ndim)`` of the tensor being matricized.
    """

    __slots__ = ("row_legs", "col_legs")

    def __init__(self, row_legs, col_legs):
        self.row_legs = tuple(int(p) for p in row_legs)
        self.col_legs = tuple(int(p) for p in col_legs)

    def check(self, ndim):
        both = self.row_legs + self.col_legs
        if sorted(both) != list(range(ndim)):
            raise ShapeError(
                f"row legs {self.row_legs} and col legs {self.col_legs} do not "
                f"partition the {ndim} legs of the tensor"
            )

    def __repr__(self):
        return f"Matricization(rows={self.row_legs}, cols={self.col_legs})"


def matricize(a: Tensor, m: Matricization) -> np.ndarray:
    """Reshape tensor ``a`` into the 2-D array selected by ``m``."""
    m.check(a.ndim)
    perm = m.row_legs + m.col_legs
    nrow = int(np.prod([a.dims[p] for p in m.row_legs], dtype=np.int64))
    ncol = int(np.prod([a.dims[p] for p in m.col_legs], dtype=np.int64))
    return a.array.transpose(perm).reshape(nrow, ncol)


def tensorize(mat: np.ndarray, m: Matricization, dims, legs=None) -> Tensor:
    """Inverse of :func:`matricize`: rebuild a tensor with leg dims ``dims``."""
    dims = tuple(int(d) for d in dims)
    m.check(len(dims))
    perm = m.row_legs + m.col_legs
    shaped = np.asarray(mat, dtype=np.complex128).reshape([dims[p] for p in perm])
    inv = np.argsort(perm)
    return Tensor(shaped.transpose(inv), legs)


def contract(a: Tensor, b: Tensor, pairs) -> Tensor:
    """Contract ``a`` with ``b`` over the given leg pairs.

    Each pair is ``(leg_of_a, leg_of_b)``, by position or label.  The result
    carries the unpaired legs of ``a`` followed by those of ``b``, in input
    order.  Pairing legs of unequal dimension raises :class:`LegMismatchError`
    naming the offending pair.
    """
    axes_a, axes_b = [], []
    for la, lb in pairs:
        ia, ib = a.leg_index(la), b.leg_index(lb)
        if a.dims[ia] != b.dims[ib]:
            raise LegMismatchError(la, a.dims[ia], lb, b.dims[ib])
        axes_a.append(ia)
        axes_b.append(ib)
    if len(set(axes_a)) != len(axes_a) or len(set(axes_b)) != len(axes_b):
        raise TensorError("a leg may appear in at most one pair")
    out = np.tensordot(a.array, b.array, axes=(axes_a, axes_b))
    legs = None
    if a.legs is not None and b.legs is not None:
        keep_a = [l for i, l in enumerate(a.legs) if i not in axes_a]
        keep_b = [l for i, l in enumerate(b.legs) if i not in axes_b]
        merged = keep_a + keep_b
        legs = tuple(merged) if len(set(merged)) == len(merged) else None
    return Tensor(out, legs)


def svd(a: Tensor, m: Matricization):
    """Singular value decomposition of the matricized tensor.

    Returns ``(U, s, V)`` with ``matricize(a, m) == U @ diag(s) @ V.conj().T``
    (thin form), ``s`` real and descending.  ``U`` is returned as a tensor
    with the row legs plus a new final leg; ``V`` with the column legs plus
    a new final leg.
    """
    mat = matricize(a, m)
    if not np.all(np.isfinite(mat)):
        raise NonFiniteError("svd input contains non-finite entries")
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    k = s.shape[0]
    row_dims = [a.dims[p] for p in m.row_legs]
    col_dims = [a.dims[p] for p in m.col_legs]
    U = Tensor(u.reshape(row_dims + [k]))
    V = Tensor(vh.conj().T.reshape(col_dims + [k]))
    return U, s, V


def polar_decompose(b: Tensor, m: Matricization):
    """Polar factors of the matricized tensor: ``b = V @ P``.

    ``V`` has orthonormal columns (a square unitary when rows == cols) and is
    the closest isometry to ``b``; ``P`` is Hermitian positive semidefinite on
    the column space.  Requires rows >= cols.  ``V`` is returned with the
    shape and legs of ``b``; ``P`` as a plain matrix.

    Among all isometries ``X`` of the same shape, ``V`` maximizes
    ``Re tr(X^dagger b)`` — the property the update rules rely on.
    """
    mat = matricize(b, m)
    if mat.shape[0] < mat.shape[1]:
        raise ShapeError(
            f"polar factor needs rows >= cols, got {mat.shape[0]} x {mat.shape[1]}"
        )
    if not np.all(np.isfinite(mat)):
        raise NonFiniteError("polar input contains non-finite entries")
    u, s, wh = np.linalg.svd(mat, full_matrices=False)
    v = u @ wh
    p = wh.conj().T @ (s[:, None] * wh)
    V = tensorize(v, m, b.dims, b.legs)
    return V, p


def herm_eig(h: Tensor, m: Matricization, tol: float = 1e-10):
    """Eigendecomposition of a Hermitian matricized tensor.

    Returns ``(evals, Q)`` with real ascending ``evals`` and unitary ``Q``
    (columns are eigenvectors, returned as a tensor with the row legs plus a
    final eigenvector-index leg).  Deviation from Hermiticity beyond ``tol``
    (relative to the largest entry) raises :class:`NotHermitianError`.
    """
    mat = matricize(h, m)
    if mat.shape[0] != mat.shape[1]:
        raise ShapeError(f"herm_eig needs a square matricization, got {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise NonFiniteError("herm_eig input contains non-finite entries")
    scale = max(np.abs(mat).max(), 1.0)
    dev = np.abs(mat - mat.conj().T).max()
    if dev > tol * scale:
        raise NotHermitianError(
            f"matrix deviates from Hermiticity by {dev:.3e} (tol {tol:.1e} * {scale:.3e})"
        )
    evals, q = np.linalg.eigh((mat + mat.conj().T) / 2.0)
    row_dims = [h.dims[p] for p in m.row_legs]
    Q = Tensor(q.reshape(row_dims + [q.shape[1]]))
    return evals, Q
