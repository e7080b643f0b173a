"""Dense linear algebra, seeded randomness and finite differences.

Tensors are plain ``numpy.ndarray`` objects in float64. The helpers here add
the shape/finiteness checks the rest of the package relies on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError, PreconditionError

DTYPE = np.float64


def tensor(data, shape=None) -> np.ndarray:
    """Build a float64 array from external data, rejecting NaN/Inf."""
    arr = np.array(data, dtype=DTYPE)
    if shape is not None:
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite entries in tensor of shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(x: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(x, dtype=DTYPE))))


@dataclass(frozen=True)
class SvdResult:
    """``m = u @ diag(singular_values) @ v`` with ``v`` holding right vectors as rows."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        k = self.singular_values.shape[0]
        return (self.u[:, :k] * self.singular_values) @ self.v[:k]


def svd(m: np.ndarray, full: bool = True) -> SvdResult:
    """SVD with a deterministic sign convention.

    Each left singular vector is flipped so that its first entry that is not
    numerically zero is nonnegative; the matching right vector flips with it.
    """
    m = tensor(m)
    if m.ndim != 2:
        raise DimensionError(f"svd expects a matrix, got shape {m.shape}")
    try:
        u, s, vh = np.linalg.svd(m, full_matrices=full)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"svd did not converge for {m.shape[0]}x{m.shape[1]} matrix") from exc
    u = u.copy()
    vh = vh.copy()
    tol = 1e-12 * max(1.0, float(np.max(np.abs(u))) if u.size else 1.0)
    for j in range(u.shape[1]):
        nz = np.flatnonzero(np.abs(u[:, j]) > tol)
        if nz.size and u[nz[0], j] < 0:
            u[:, j] *= -1.0
            if j < vh.shape[0]:
                vh[j] *= -1.0
    return SvdResult(u=u, singular_values=s, v=vh)


def givens(theta: float, p: int, i: int, j: int) -> np.ndarray:
    """Plane rotation by ``theta`` between 0-based axes ``i`` and ``j``."""
    r = np.eye(p, dtype=DTYPE)
    if i == j:
        return r
    c, s = np.cos(theta), np.sin(theta)
    r[i, i] = c
    r[j, j] = c
    r[i, j] = -s
    r[j, i] = s
    return r


def givens_pairs(p: int) -> list[tuple[int, int]]:
    """Mirror pairing of axes (0-based): first with last, second with second-to-last.

    For odd ``p`` the middle axis is left fixed.
    """
    return [(i, p - 1 - i) for i in range(p // 2)]


def givens_product(theta: float, p: int, basis: np.ndarray | None = None) -> np.ndarray:
    """Rotation ``basis.T @ prod(r_ij(theta)) @ basis`` over the mirror axis pairs.

    ``basis`` must be orthogonal (rows are the axes that get paired, so pass
    the right-singular-vector matrix of a data-by-feature matrix directly).
    """
    if p < 1:
        raise PreconditionError(f"dimension must be positive, got {p}")
    basis = np.eye(p, dtype=DTYPE) if basis is None else tensor(basis)
    if basis.shape != (p, p):
        raise DimensionError(f"basis shape {basis.shape} does not match p={p}")
    if np.max(np.abs(basis.T @ basis - np.eye(p))) > 1e-8:
        raise PreconditionError("basis is not orthogonal within 1e-8")
    c, s = np.cos(theta), np.sin(theta)
    core = np.eye(p, dtype=DTYPE)
    # the pairs are disjoint, so the product is a block matrix
    for i, j in givens_pairs(p):
        core[i, i] = c
        core[j, j] = c
        core[i, j] = -s
        core[j, i] = s
    return basis.T @ core @ basis


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.array(x, dtype=DTYPE)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"function is not finite near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


class Rng:
    """Seeded PCG64 stream addressed by ``(seed, scope path)``.

    ``derive`` never consumes state from the parent: the child stream is a pure
    function of the seed and the full path of scope names.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise PreconditionError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_name_key(p) for p in self.path))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def derive(self, name: str) -> "Rng":
        return Rng(self.seed, self.path + (name,))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.gen.choice(a, size=size, replace=replace, p=p)
