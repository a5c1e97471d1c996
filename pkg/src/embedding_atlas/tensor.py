"""Dense float64 tensors and the small amount of linear algebra the toolkit needs.

Tensors are plain ``numpy.ndarray`` objects with dtype float64. This module
adds the operations whose exact behaviour matters elsewhere (row softmax,
guarded layer norm, a one-sided Jacobi reduced SVD), a counter-based seeded
RNG, and the EMAT binary / CSV serialisation formats.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

DTYPE = np.float64
LN_EPS = 1e-5

EMAT_MAGIC = b"EMAT"
EMAT_VERSION = 1


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class SvdConvergenceError(ArithmeticError):
    """Jacobi sweeps hit the iteration cap before the Gram matrix diagonalised."""

    def __init__(self, message, sweeps, residual):
        super().__init__(f"{message} (sweeps={sweeps}, residual={residual:.3e})")
        self.sweeps = sweeps
        self.residual = residual


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(m) -> np.ndarray:
    """Softmax along the last axis, shifted by the row max so large logits don't overflow."""
    m = as_tensor(m)
    e = np.exp(m - m.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x, gamma, beta, eps=LN_EPS) -> np.ndarray:
    """Normalise along the last axis with population variance.

    ``eps`` is added to the variance, so a constant row maps to ``beta``
    instead of dividing by zero.
    """
    x = as_tensor(x)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return gamma * (xc / np.sqrt(var + eps)) + beta


def _complete_basis(v: np.ndarray, k: int) -> np.ndarray:
    """Replace columns k: of ``v`` by an orthonormal completion of columns :k."""
    m, n = v.shape
    basis = v[:, :k]
    out = v.copy()
    col = k
    for e in range(m):
        if col == n:
            break
        cand = np.zeros(m)
        cand[e] = 1.0
        for _ in range(2):
            cand -= basis @ (basis.T @ cand)
        norm = np.linalg.norm(cand)
        if norm < 0.5:
            continue
        out[:, col] = cand / norm
        basis = out[:, : col + 1]
        col += 1
    return out


def reduced_svd(j, max_sweeps=100, tol=1e-15):
    """Reduced SVD ``J = U diag(S) V^T`` of a wide n x m matrix (n <= m).

    One-sided (Hestenes) Jacobi on the columns of ``J^T``: plane rotations
    are applied until every pair of columns is orthogonal to relative
    precision ``tol``. The accumulated rotation is ``U`` and the column norms
    are ``S``. Each column of ``U`` is signed so that its largest-magnitude
    entry is positive.

    Returns ``(U, S, V)`` with shapes (n, n), (n,), (m, n).
    """
    j = as_tensor(j)
    if j.ndim != 2:
        raise DimensionError(f"reduced_svd expects a matrix, got shape {j.shape}")
    n, m = j.shape
    if n > m:
        raise DimensionError(f"reduced_svd needs n <= m, got {j.shape}")

    a = j.T.copy()  # m x n, columns get orthogonalised
    u = np.eye(n)
    fro2 = float(np.sum(j * j))
    if fro2 == 0.0:
        return u, np.zeros(n), _complete_basis(np.zeros((m, n)), 0)

    tiny = np.finfo(DTYPE).tiny
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap = a[:, p]
                aq = a[:, q]
                alpha = ap @ ap
                beta = aq @ aq
                gamma = ap @ aq
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or abs(gamma) < tiny:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
                up = u[:, p].copy()
                u[:, p] = c * up - s * u[:, q]
                u[:, q] = s * up + c * u[:, q]
        if not rotated:
            break
    else:
        g = a.T @ a
        off = np.sqrt(np.sum(g * g) - np.sum(np.diag(g) ** 2))
        if off >= 1e-14 * fro2:
            raise SvdConvergenceError("one-sided Jacobi did not converge", sweeps, off / fro2)

    s = np.linalg.norm(a, axis=0)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    a = a[:, order]
    u = u[:, order]

    rank = int(np.sum(s > 1e-290))
    v = np.zeros((m, n))
    v[:, :rank] = a[:, :rank] / s[:rank]
    if rank < n:
        # zero columns carry no direction
        v = _complete_basis(v, rank)

    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(n)])
    signs[signs == 0] = 1.0
    return u * signs, s, v * signs


class Rng:
    """Seeded counter-based generator (Philox 4x64).

    ``stream`` derives independent sequences from one seed, so parallel
    workers can each own a generator without sharing state.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.Philox(seq))

    def split(self, stream: int) -> "Rng":
        return Rng(self.seed, stream)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=DTYPE)

    def uniform(self, shape, low=0.0, high=1.0) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size)


def gaussian(rng: Rng, shape) -> np.ndarray:
    """I.i.d. standard normal tensor drawn from ``rng``."""
    return rng.normal(shape)


# -- serialisation -----------------------------------------------------------

def write_emat(x, fh) -> None:
    x = as_tensor(x)
    fh.write(EMAT_MAGIC)
    fh.write(struct.pack("<II", EMAT_VERSION, x.ndim))
    fh.write(struct.pack(f"<{x.ndim}Q", *x.shape))
    fh.write(x.astype("<f8").tobytes(order="C"))


def read_emat(fh) -> np.ndarray:
    start = fh.tell() if fh.seekable() else 0
    magic = fh.read(4)
    if magic != EMAT_MAGIC:
        raise ValueError(f"bad EMAT magic {magic!r} at byte offset {start}")
    header = fh.read(8)
    if len(header) != 8:
        raise ValueError(f"truncated EMAT header at byte offset {start + 4}")
    version, rank = struct.unpack("<II", header)
    if version != EMAT_VERSION:
        raise ValueError(f"unsupported EMAT version {version} at byte offset {start + 4}")
    dims_raw = fh.read(8 * rank)
    if len(dims_raw) != 8 * rank:
        raise ValueError(f"truncated EMAT dims at byte offset {start + 12}")
    dims = struct.unpack(f"<{rank}Q", dims_raw)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError(f"truncated EMAT payload at byte offset {start + 12 + 8 * rank}")
    return np.frombuffer(payload, dtype="<f8").astype(DTYPE).reshape(dims)


def save_emat(x, path) -> None:
    with open(path, "wb") as fh:
        write_emat(x, fh)


def load_emat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_emat(fh)


def emat_bytes(x) -> bytes:
    buf = io.BytesIO()
    write_emat(x, buf)
    return buf.getvalue()


def to_csv(x, path=None) -> str:
    """One line per slice along the trailing dimension, 17 significant digits."""
    x = as_tensor(x)
    rows = x.reshape(1, -1) if x.ndim <= 1 else x.reshape(-1, x.shape[-1])
    text = "".join(",".join(format(v, ".17g") for v in row) + "\n" for row in rows)
    if path is not None:
        Path(path).write_text(text)
    return text
