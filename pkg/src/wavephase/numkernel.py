"""Numerical kernel: sequence-axis DFT, symmetric sparse matrices, CG, gradient checks.

Dense tensors are plain float64 numpy arrays; spectra are complex128 arrays of
the same shape. The DFT convention is unnormalised forward,

    X[..., k] = sum_t x[..., t] * exp(-2j*pi*k*t/T)

with the 1/T factor carried by the inverse. Power-of-two lengths use an
iterative radix-2 FFT; every other length goes through Bluestein's chirp-z
identity on a padded radix-2 transform, so results are exact DFTs for any T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import _accel
from ._accel import njit
from .errors import InvalidArgument, SolverError


def as_tensor(x, ndim=None, name="tensor"):
    """Validate and return ``x`` as a finite float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0 or any(n < 1 for n in arr.shape):
        raise InvalidArgument(f"{name} is empty (shape {arr.shape})")
    if ndim is not None and arr.ndim != ndim:
        raise InvalidArgument(f"{name} must have rank {ndim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains NaN or Inf")
    return arr


def _use_numba(flag):
    return _accel.USE_NUMBA if flag is None else (flag and _accel.HAS_NUMBA)


# --------------------------------------------------------------------------
# FFT kernels


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@njit
def _fft_radix2_numba(a, sign):
    # in-place, rows of a; twiddles computed directly per stage (no recurrence drift)
    rows, n = a.shape
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            for r in range(rows):
                tmp = a[r, i]
                a[r, i] = a[r, j]
                a[r, j] = tmp
    m = 2
    while m <= n:
        half = m // 2
        for k in range(half):
            ang = sign * 2.0 * np.pi * k / m
            w = complex(np.cos(ang), np.sin(ang))
            for start in range(0, n, m):
                i0 = start + k
                i1 = i0 + half
                for r in range(rows):
                    v = a[r, i1] * w
                    u = a[r, i0]
                    a[r, i0] = u + v
                    a[r, i1] = u - v
        m *= 2
    return a


def _fft_radix2_numpy(a, sign):
    rows, n = a.shape
    a = a[:, _bit_reverse_indices(n)]
    m = 2
    while m <= n:
        half = m // 2
        ang = sign * 2.0 * np.pi * np.arange(half) / m
        tw = np.cos(ang) + 1j * np.sin(ang)
        blocks = a.reshape(rows, n // m, m)
        u = blocks[:, :, :half]
        v = blocks[:, :, half:] * tw
        a = np.concatenate([u + v, u - v], axis=2).reshape(rows, n)
        m *= 2
    return a


def _fft_pow2(a, sign, use_numba):
    a = np.ascontiguousarray(a, dtype=np.complex128)
    if use_numba:
        return _fft_radix2_numba(a.copy(), float(sign))
    return _fft_radix2_numpy(a, sign)


def _bluestein(a, sign, use_numba):
    rows, n = a.shape
    k = np.arange(n, dtype=np.int64)
    # k^2 mod 2n keeps the chirp argument small for large n
    ang = sign * np.pi * ((k * k) % (2 * n)) / n
    chirp = np.cos(ang) + 1j * np.sin(ang)
    m = 1 << (2 * n - 2).bit_length()
    buf = np.zeros((rows, m), dtype=np.complex128)
    buf[:, :n] = a * chirp
    kern = np.zeros((1, m), dtype=np.complex128)
    kern[0, :n] = np.conj(chirp)
    kern[0, m - n + 1:] = np.conj(chirp[1:][::-1])
    fa = _fft_pow2(buf, -1.0, use_numba)
    fb = _fft_pow2(kern, -1.0, use_numba)
    conv = _fft_pow2(fa * fb, 1.0, use_numba) / m
    return conv[:, :n] * chirp


def _dft_direct(a, sign):
    n = a.shape[-1]
    t = np.arange(n)
    ang = sign * 2.0 * np.pi * ((np.outer(t, t)) % n) / n
    return a @ (np.cos(ang) + 1j * np.sin(ang))


def _dft_last_axis(x, sign, method, use_numba):
    shape = x.shape
    a = np.asarray(x, dtype=np.complex128).reshape(-1, shape[-1])
    n = shape[-1]
    if method == "direct":
        out = _dft_direct(a, sign)
    elif n == 1:
        out = a.copy()
    elif _is_pow2(n):
        out = _fft_pow2(a, sign, use_numba)
    else:
        out = _bluestein(a, sign, use_numba)
    return out.reshape(shape)


def dft_seq(V, method="auto", use_numba=None):
    """Unnormalised DFT along the last (sequence) axis of a real tensor."""
    V = as_tensor(V, name="V")
    if method not in ("auto", "direct"):
        raise InvalidArgument(f"unknown DFT method {method!r}")
    return _dft_last_axis(V, -1.0, method, _use_numba(use_numba))


def idft_seq(S, return_residue=False, method="auto", use_numba=None):
    """Inverse of :func:`dft_seq` (carries the 1/T factor); returns the real part.

    With ``return_residue=True`` also returns the largest absolute imaginary
    part that was discarded. For Hermitian-symmetric input it is below 1e-9.
    """
    S = np.asarray(S, dtype=np.complex128)
    if S.size == 0:
        raise InvalidArgument("spectrum is empty")
    if not np.all(np.isfinite(S)):
        raise InvalidArgument("spectrum contains NaN or Inf")
    z = _dft_last_axis(S, 1.0, method, _use_numba(use_numba)) / S.shape[-1]
    if return_residue:
        return z.real.copy(), float(np.max(np.abs(z.imag)))
    return z.real.copy()


# --------------------------------------------------------------------------
# symmetric sparse matrices


@njit
def _csr_matmat_numba(indptr, indices, data, x):
    n, r = x.shape
    out = np.zeros((n, r))
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            v = data[p]
            for c in range(r):
                out[i, c] += v * x[j, c]
    return out


def _csr_matmat_numpy(indptr, indices, data, x):
    rows = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    out = np.zeros(x.shape)
    np.add.at(out, rows, data[:, None] * x[indices])
    return out


@dataclass(frozen=True)
class SparseSym:
    """Symmetric matrix in CSR storage (both triangles stored)."""

    order: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @classmethod
    def from_triplets(cls, order, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size and (rows.min() < 0 or cols.min() < 0 or max(rows.max(), cols.max()) >= order):
            raise InvalidArgument("triplet index out of range")
        dense = np.zeros((order, order))
        np.add.at(dense, (rows, cols), vals)
        if not np.array_equal(dense, dense.T):
            raise InvalidArgument("triplets do not describe a symmetric matrix")
        return cls.from_dense(dense)

    @classmethod
    def from_dense(cls, A):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidArgument(f"expected a square matrix, got {A.shape}")
        if not np.array_equal(A, A.T):
            raise InvalidArgument("matrix is not symmetric")
        n = A.shape[0]
        rr, cc = np.nonzero(A)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rr + 1, 1)
        return cls(n, np.cumsum(indptr), cc.astype(np.int64), A[rr, cc].copy())

    @property
    def nnz(self):
        return int(self.data.size)

    def to_dense(self):
        out = np.zeros((self.order, self.order))
        rows = np.repeat(np.arange(self.order), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def triplets(self):
        rows = np.repeat(np.arange(self.order), np.diff(self.indptr))
        return rows, self.indices.copy(), self.data.copy()

    def matvec(self, x, use_numba=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.order:
            raise InvalidArgument(f"vector length {x.shape[0]} != order {self.order}")
        flat = x.ndim == 1
        x2 = np.ascontiguousarray(x.reshape(self.order, -1))
        if _use_numba(use_numba):
            out = _csr_matmat_numba(self.indptr, self.indices, self.data, x2)
        else:
            out = _csr_matmat_numpy(self.indptr, self.indices, self.data, x2)
        return out[:, 0] if flat else out

    __matmul__ = matvec

    def row_sums(self):
        return self.matvec(np.ones(self.order))

    def psd_probe(self, n_probes=32, seed=0, eps=1e-10):
        """Random-probe check x^T A x >= -eps |x|^2."""
        rng = np.random.default_rng(seed)
        for _ in range(n_probes):
            x = rng.standard_normal(self.order)
            if x @ self.matvec(x) < -eps * (x @ x):
                return False
        return True


# --------------------------------------------------------------------------
# conjugate gradient


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


@njit
def _cg_numba(indptr, indices, data, shift, b, tol, max_iter, anorm):
    n = b.shape[0]
    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rs = r @ r
    bnorm = np.sqrt(b @ b)
    if bnorm == 0.0:
        return x, 0, 0.0
    it = 0
    while it < max_iter and np.sqrt(rs) > tol * (anorm * np.sqrt(x @ x) + bnorm):
        ap = shift * p
        for i in range(n):
            acc = 0.0
            for q in range(indptr[i], indptr[i + 1]):
                acc += data[q] * p[indices[q]]
            ap[i] += acc
        denom = p @ ap
        if denom <= 0.0:
            break
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    return x, it, np.sqrt(rs) / bnorm


def _cg_numpy(A, shift, b, tol, max_iter, anorm):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = r @ r
    bnorm = math.sqrt(b @ b)
    if bnorm == 0.0:
        return x, 0, 0.0
    it = 0
    while it < max_iter and math.sqrt(rs) > tol * (anorm * math.sqrt(x @ x) + bnorm):
        ap = A.matvec(p, use_numba=False) + shift * p
        denom = p @ ap
        if denom <= 0.0:
            break
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    return x, it, math.sqrt(rs) / bnorm


def cg_solve(A, b, tol=1e-12, max_iter=None, shift=0.0, use_numba=None):
    """Solve ``(A + diag(shift)) x = b`` by conjugate gradients.

    ``b`` may be a vector or an ``N x r`` matrix whose columns are solved
    independently, in column order. The stopping rule is the normwise
    backward error ``|Ax - b| <= tol (|A| |x| + |b|)`` on the true residual,
    with ``|A|`` bounded by the max absolute row sum; failure raises
    :class:`SolverError`. A plain ``tol |b|`` rule is unattainable for
    ill-conditioned systems such as a heavily weighted Laplacian.
    """
    if tol <= 0:
        raise InvalidArgument("tol must be positive")
    b = as_tensor(b, name="b")
    n = A.order
    if b.shape[0] != n:
        raise InvalidArgument(f"rhs has {b.shape[0]} rows, operator order is {n}")
    shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), (n,)).copy()
    if max_iter is None:
        max_iter = 10 * n + 10
    cols = b.reshape(n, -1)
    out = np.empty_like(cols)
    iters = 0
    worst = 0.0
    fast = _use_numba(use_numba)
    absrow = np.zeros(n)
    np.add.at(absrow, np.repeat(np.arange(n), np.diff(A.indptr)), np.abs(A.data))
    anorm = float((absrow + np.abs(shift)).max()) if n else 0.0
    for c in range(cols.shape[1]):
        rhs = np.ascontiguousarray(cols[:, c])
        if fast:
            x, it, _ = _cg_numba(A.indptr, A.indices, A.data, shift, rhs, tol, max_iter, anorm)
        else:
            x, it, _ = _cg_numpy(A, shift, rhs, tol, max_iter, anorm)
        bnorm = np.linalg.norm(rhs)
        res = np.linalg.norm(A.matvec(x) + shift * x - rhs)
        scale = anorm * np.linalg.norm(x) + bnorm
        rel = res / scale if scale > 0 else res
        # recurrence residual can drift below the true residual near tol
        if rel > tol and bnorm > 0:
            raise SolverError("conjugate gradient did not converge", rel, it)
        out[:, c] = x
        iters = max(iters, int(it))
        worst = max(worst, float(rel))
    return CGResult(out.reshape(b.shape), iters, worst)


# --------------------------------------------------------------------------
# gradient verification


class GradReport(NamedTuple):
    max_rel_err: float
    worst_coordinate: tuple


def grad_check(f: Callable[[np.ndarray], float], analytic_grad, x, h=1e-5, abs_floor=1e-8):
    """Compare ``analytic_grad`` with central differences of ``f`` at ``x``.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|)``; when both
    magnitudes are under ``abs_floor`` the absolute difference is used.
    """
    if h <= 0:
        raise InvalidArgument("h must be positive")
    x = np.array(x, dtype=np.float64)
    g = np.asarray(analytic_grad, dtype=np.float64).reshape(x.shape)
    flat = x.reshape(-1)
    worst_err = -1.0
    worst_idx = 0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise InvalidArgument(f"f is not finite near coordinate {i}")
        num = (fp - fm) / (2.0 * h)
        ana = g.reshape(-1)[i]
        scale = max(abs(num), abs(ana))
        err = abs(num - ana) / scale if scale >= abs_floor else abs(num - ana)
        if err > worst_err:
            worst_err, worst_idx = err, i
    coord = tuple(int(c) for c in np.unravel_index(worst_idx, x.shape)) if x.ndim else ()
    return GradReport(float(worst_err), coord)
