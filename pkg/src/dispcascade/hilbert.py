"""Dense operator algebra on small composite Hilbert spaces.

Subsystem order used throughout the package for the transfer model::

    (source atom, source cavity, fictitious cavity[, ...], target atom, target cavity)

Everything here is dense; the largest space in use is 2**5 = 32 (or
4 * 2**M * 4 for the fermionic builder with M <= 10, which is still small
enough to keep dense).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from math import prod
from typing import Sequence

import numpy as np

__all__ = [
    "HilbertError",
    "HilbertSpace",
    "Operator",
    "DensityMatrix",
    "Tolerances",
    "lowering_op",
    "raising_op",
    "number_op",
    "identity",
    "embed",
    "adjoint",
    "add",
    "scale",
    "multiply",
    "commutator",
    "trace",
    "expectation",
    "basis_projector",
    "partial_trace",
    "single_excitation_lowering",
    "min_eigenvalue",
    "kron_all",
]


class HilbertError(ValueError):
    """Invalid dimension, embedding or space mismatch."""


@dataclass(frozen=True)
class Tolerances:
    herm: float = 1e-10
    trace: float = 1e-9
    pos: float = 1e-9


DEFAULT_TOL = Tolerances()


@dataclass(frozen=True)
class HilbertSpace:
    dims: tuple[int, ...]

    def __init__(self, dims: Sequence[int]):
        dims = tuple(int(d) for d in dims)
        if not dims or any(d < 1 for d in dims):
            raise HilbertError(f"dimensions must be positive integers, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def total_dim(self) -> int:
        return prod(self.dims)

    def __len__(self) -> int:
        return len(self.dims)

    def index(self, occupations: Sequence[int]) -> int:
        """Flat basis index of a product state given per-subsystem levels."""
        if len(occupations) != len(self.dims):
            raise HilbertError("one level per subsystem required")
        return int(np.ravel_multi_index(tuple(occupations), self.dims))

    def ket(self, occupations: Sequence[int]) -> np.ndarray:
        v = np.zeros(self.total_dim, dtype=complex)
        v[self.index(occupations)] = 1.0
        return v


@dataclass(frozen=True, eq=False)
class Operator:
    """A square complex matrix tied to a :class:`HilbertSpace`.

    The matrix is copied and marked read-only so instances can be shared
    between workers.
    """

    space: HilbertSpace
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        n = self.space.total_dim
        if m.shape != (n, n):
            raise HilbertError(f"matrix shape {m.shape} does not match space dimension {n}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dag(self) -> "Operator":
        return adjoint(self)

    def __add__(self, other: "Operator") -> "Operator":
        return add(self, other)

    def __sub__(self, other: "Operator") -> "Operator":
        return add(self, scale(-1.0, other))

    def __neg__(self) -> "Operator":
        return scale(-1.0, self)

    def __matmul__(self, other: "Operator") -> "Operator":
        return multiply(self, other)

    def __mul__(self, z: complex) -> "Operator":
        return scale(z, self)

    __rmul__ = __mul__

    def is_hermitian(self, tol: float = DEFAULT_TOL.herm) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= tol)


def _as_space(space: HilbertSpace | Sequence[int]) -> HilbertSpace:
    return space if isinstance(space, HilbertSpace) else HilbertSpace(space)


def _check_same(a: Operator, b: Operator) -> None:
    if a.space != b.space:
        raise HilbertError(f"space mismatch: {a.space.dims} vs {b.space.dims}")


def lowering_op(dim: int) -> Operator:
    """Truncated annihilation operator: sqrt(n) at (n-1, n)."""
    if int(dim) != dim or dim < 2:
        raise HilbertError(f"lowering operator needs dim >= 2, got {dim}")
    dim = int(dim)
    return Operator(HilbertSpace([dim]), np.diag(np.sqrt(np.arange(1, dim)), k=1))


def raising_op(dim: int) -> Operator:
    return adjoint(lowering_op(dim))


def number_op(dim: int) -> Operator:
    return Operator(HilbertSpace([dim]), np.diag(np.arange(dim, dtype=float)))


def identity(space: HilbertSpace | Sequence[int] | int) -> Operator:
    if isinstance(space, (int, np.integer)):
        space = [int(space)]
    space = _as_space(space)
    return Operator(space, np.eye(space.total_dim))


def embed(local_op: Operator, space: HilbertSpace | Sequence[int], position: int) -> Operator:
    """Lift ``local_op`` into ``space`` as I x ... x local_op x ... x I."""
    space = _as_space(space)
    if not 0 <= position < len(space.dims):
        raise HilbertError(f"position {position} out of range for {len(space.dims)} subsystems")
    d = local_op.space.total_dim
    if d != space.dims[position]:
        raise HilbertError(
            f"local operator has dimension {d}, slot {position} has dimension {space.dims[position]}"
        )
    left = prod(space.dims[:position])
    right = prod(space.dims[position + 1:])
    m = np.kron(np.kron(np.eye(left), local_op.matrix), np.eye(right))
    return Operator(space, m)


def adjoint(op: Operator) -> Operator:
    return Operator(op.space, op.matrix.conj().T)


def add(a: Operator, b: Operator) -> Operator:
    _check_same(a, b)
    return Operator(a.space, a.matrix + b.matrix)


def scale(z: complex, a: Operator) -> Operator:
    return Operator(a.space, z * a.matrix)


def multiply(a: Operator, b: Operator) -> Operator:
    _check_same(a, b)
    return Operator(a.space, a.matrix @ b.matrix)


def commutator(a: Operator, b: Operator) -> Operator:
    _check_same(a, b)
    return Operator(a.space, a.matrix @ b.matrix - b.matrix @ a.matrix)


def trace(op: Operator | np.ndarray) -> complex:
    m = op.matrix if isinstance(op, Operator) else op
    return complex(np.trace(m))


def expectation(op: Operator, rho: "DensityMatrix | Operator | np.ndarray") -> complex:
    """Tr(op rho)."""
    if isinstance(rho, DensityMatrix):
        rho = rho.op
    if isinstance(rho, Operator):
        _check_same(op, rho)
        rho = rho.matrix
    # Tr(AB) without forming the product
    return complex(np.sum(op.matrix * np.asarray(rho).T))


def basis_projector(space: HilbertSpace | Sequence[int], index: int) -> Operator:
    space = _as_space(space)
    m = np.zeros((space.total_dim, space.total_dim), dtype=complex)
    m[index, index] = 1.0
    return Operator(space, m)


def partial_trace(rho: np.ndarray | Operator, space: HilbertSpace | Sequence[int],
                  keep: Sequence[int]) -> np.ndarray:
    """Reduced matrix on the subsystems listed in ``keep`` (kept in space order)."""
    space = _as_space(space)
    m = rho.matrix if isinstance(rho, Operator) else np.asarray(rho)
    keep = sorted(set(keep))
    n = len(space.dims)
    t = m.reshape(space.dims + space.dims)
    traced = [i for i in range(n) if i not in keep]
    # contract traced subsystems pairwise, highest index first so axes stay valid
    for offset, i in enumerate(sorted(traced, reverse=True)):
        cur = n - offset
        t = np.trace(t, axis1=i, axis2=i + cur)
    d = prod(space.dims[i] for i in keep) if keep else 1
    return t.reshape(d, d)


def single_excitation_lowering(n_modes: int, mode: int) -> Operator:
    """Lowering operator |ground><mode| on the ground + single-excitation basis.

    Basis index 0 is the global ground state, index ``mode + 1`` the state
    with one quantum in ``mode``. The dynamics of the package never leave
    this subspace when started inside it, so these matrices are exact
    compressions of the full tensor-product operators.
    """
    if not 0 <= mode < n_modes:
        raise HilbertError(f"mode {mode} out of range for {n_modes} modes")
    m = np.zeros((n_modes + 1, n_modes + 1), dtype=complex)
    m[0, mode + 1] = 1.0
    return Operator(HilbertSpace([n_modes + 1]), m)


class DensityMatrix:
    """Validated state matrix.

    Hermiticity and unit trace are checked on construction; positivity only
    when ``check_positive`` is set, since it needs an eigenvalue solve.
    """

    __slots__ = ("op",)

    def __init__(self, op: Operator | np.ndarray, space: HilbertSpace | Sequence[int] | None = None,
                 tol: Tolerances = DEFAULT_TOL, check_positive: bool = False):
        if not isinstance(op, Operator):
            m = np.asarray(op, dtype=complex)
            op = Operator(_as_space(space) if space is not None else HilbertSpace([m.shape[0]]), m)
        m = op.matrix
        herm = np.max(np.abs(m - m.conj().T), initial=0.0)
        if herm > tol.herm:
            raise HilbertError(f"density matrix not Hermitian (max deviation {herm:.3e})")
        tr = np.trace(m).real
        if abs(tr - 1.0) > tol.trace:
            raise HilbertError(f"density matrix trace {tr!r} differs from 1")
        if check_positive and min_eigenvalue(m) < -tol.pos:
            raise HilbertError("density matrix has a negative eigenvalue")
        self.op = op

    @classmethod
    def pure(cls, ket: np.ndarray, space: HilbertSpace | Sequence[int] | None = None) -> "DensityMatrix":
        ket = np.asarray(ket, dtype=complex)
        ket = ket / np.linalg.norm(ket)
        return cls(np.outer(ket, ket.conj()), space)

    @classmethod
    def basis(cls, space: HilbertSpace | Sequence[int], index: int) -> "DensityMatrix":
        return cls(basis_projector(space, index))

    @property
    def space(self) -> HilbertSpace:
        return self.op.space

    @property
    def matrix(self) -> np.ndarray:
        return self.op.matrix

    def population(self, index: int) -> float:
        return float(self.op.matrix[index, index].real)

    def __repr__(self) -> str:
        return f"DensityMatrix(dims={self.space.dims})"


def min_eigenvalue(m: np.ndarray) -> float:
    h = 0.5 * (m + m.conj().T)
    return float(np.linalg.eigvalsh(h)[0])


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats)
