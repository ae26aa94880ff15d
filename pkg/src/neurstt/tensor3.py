"""Dense 3-D tensor algebra: unfolding, folding, mode products, Tucker
reconstruction and the SVD / nuclear-norm kernels.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n1, n2, n3)``
indexed ``x[i, j, k]`` (height, width, frame).  Unfoldings follow the cyclic
convention: the mode-``m`` unfolding places ``x[i, j, k]`` at row ``i_m`` and
the remaining two indices are flattened in cyclic order with the first one
varying fastest, e.g. mode 1 puts ``x[i, j, k]`` at column ``j + k * n2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# unfolding axis orders, cyclic: (m, m+1, m+2)
_CYCLIC_AXES = {1: (0, 1, 2), 2: (1, 2, 0), 3: (2, 0, 1)}

#: singular values below ``RANK_RTOL * s_max`` are treated as zero
RANK_RTOL = 1e-12


class TensorShapeError(ValueError):
    """Raised on an invalid mode or incompatible dimensions."""


class NumericError(ArithmeticError):
    """Raised when a kernel meets non-finite input or output."""


def _check_mode(mode):
    if mode not in _CYCLIC_AXES:
        raise TensorShapeError(f"mode must be 1, 2 or 3, got {mode!r}")


def as_tensor(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or min(x.shape) < 1:
        raise TensorShapeError(f"expected a non-empty 3-D tensor, got shape {x.shape}")
    return x


def unfold(x, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of a 3-D tensor (``n_mode x prod(other dims)``)."""
    _check_mode(mode)
    x = as_tensor(x)
    axes = _CYCLIC_AXES[mode]
    t = np.transpose(x, axes)
    return np.reshape(t, (t.shape[0], -1), order="F")


def unfolded_shape(mode: int, dims) -> tuple[int, int]:
    _check_mode(mode)
    n = tuple(int(d) for d in dims)
    a, b, c = (n[ax] for ax in _CYCLIC_AXES[mode])
    return a, b * c


def fold(m, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold` for the given mode and target dims."""
    _check_mode(mode)
    m = np.asarray(m, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise TensorShapeError(f"dims must have length 3, got {dims}")
    expected = unfolded_shape(mode, dims)
    if m.shape != expected:
        raise TensorShapeError(
            f"matrix shape {m.shape} does not match mode-{mode} unfolding {expected} of {dims}"
        )
    axes = _CYCLIC_AXES[mode]
    permuted = tuple(dims[ax] for ax in axes)
    t = np.reshape(m, permuted, order="F")
    return np.transpose(t, np.argsort(axes))


def mode_product(x, m, mode: int) -> np.ndarray:
    """Tensor-matrix product ``x ×_mode m``; the mode-th dim becomes ``m.shape[0]``."""
    _check_mode(mode)
    x = as_tensor(x)
    m = np.asarray(m, dtype=np.float64)
    ax = mode - 1
    if m.ndim != 2 or m.shape[1] != x.shape[ax]:
        raise TensorShapeError(
            f"matrix of shape {m.shape} cannot multiply mode {mode} of tensor {x.shape}"
        )
    # contract along ax, then move the new axis back into place
    y = np.tensordot(m, x, axes=([1], [ax]))
    return np.moveaxis(y, 0, ax)


def tucker_reconstruct(core, f1, f2, f3) -> np.ndarray:
    """``core ×1 f1 ×2 f2 ×3 f3``."""
    core = as_tensor(core)
    out = core
    for mode, f in enumerate((f1, f2, f3), start=1):
        out = mode_product(out, f, mode)
    return out


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def _check_finite(m, what):
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{what}: non-finite entries in input")


def svd(m) -> SvdResult:
    """Thin SVD with a deterministic sign convention.

    The first nonzero entry of every column of ``u`` is made nonnegative
    (``v`` flipped to match).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise TensorShapeError(f"svd expects a matrix, got shape {m.shape}")
    _check_finite(m, "svd")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    v = vt.T.copy()
    u = u.copy()
    for col in range(u.shape[1]):
        nz = np.flatnonzero(u[:, col])
        if nz.size and u[nz[0], col] < 0:
            u[:, col] *= -1.0
            v[:, col] *= -1.0
    return SvdResult(u=u, s=s, v=v)


def nuclear_norm(m) -> float:
    """Sum of singular values."""
    m = np.asarray(m, dtype=np.float64)
    _check_finite(m, "nuclear_norm")
    if m.size == 0:
        return 0.0
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def numerical_rank(m, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(np.asarray(m, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def to_linear(x) -> np.ndarray:
    """Flatten in the frame-major layout: offset ``k*n1*n2 + i*n2 + j``."""
    x = as_tensor(x)
    return np.ascontiguousarray(np.transpose(x, (2, 0, 1))).ravel()


def from_linear(values, dims) -> np.ndarray:
    """Inverse of :func:`to_linear`."""
    n1, n2, n3 = (int(d) for d in dims)
    values = np.asarray(values, dtype=np.float64)
    if values.size != n1 * n2 * n3:
        raise TensorShapeError(f"{values.size} values cannot fill dims {(n1, n2, n3)}")
    return np.transpose(values.reshape(n3, n1, n2), (1, 2, 0)).copy()
