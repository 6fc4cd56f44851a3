"""Three-core tensor trains over velocity space.

Every array carries optional leading batch axes, so a single object can hold
the tensor trains of all spatial points at once (batch shape ``(Nx,)``) or of
one point (batch shape ``()``).  Core layouts are

    core1: (..., Nv, r1)      core2: (..., r1, Nv, r2)      core3: (..., r2, Nv)

and ``full[k1, k2, k3] = sum_{a, b} core1[k1, a] core2[a, k2, b] core3[b, k3]``.
"""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np


class Form(enum.Enum):
    GENERAL = "General"
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"
    V = "V"


_NEXT = {Form.I: Form.II, Form.II: Form.III, Form.III: Form.IV, Form.IV: Form.V, Form.V: Form.I}

FULL_TENSOR_CAP = 20_000_000


@dataclass(frozen=True, eq=False)
class TensorTrain3:
    core1: np.ndarray
    core2: np.ndarray
    core3: np.ndarray
    form: Form = Form.GENERAL
    s: np.ndarray | None = None

    def __post_init__(self):
        c1, c2, c3 = self.core1, self.core2, self.core3
        if c1.ndim < 2 or c2.ndim < 3 or c3.ndim < 2:
            raise ValueError("cores have too few dimensions")
        nv, r1 = c1.shape[-2:]
        a, nv2, r2 = c2.shape[-3:]
        b, nv3 = c3.shape[-2:]
        if nv2 != nv or nv3 != nv:
            raise ValueError(f"mode sizes disagree: {nv}, {nv2}, {nv3}")
        if self.form in (Form.II, Form.IV):
            if self.s is None:
                raise ValueError(f"form {self.form.value} requires the S factor")
            rs = r1 if self.form is Form.II else r2
            if self.s.shape[-2:] != (rs, rs):
                raise ValueError("S factor has the wrong shape")
        if a != r1 or b != r2:
            raise ValueError(f"bond dimensions disagree: ({r1}, {a}) and ({r2}, {b})")

    @property
    def nv(self) -> int:
        return self.core1.shape[-2]

    @property
    def ranks(self) -> tuple[int, int]:
        return self.core1.shape[-1], self.core3.shape[-2]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.core1.shape[:-2]

    def general_cores(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cores with any carried S factor absorbed."""
        if self.form is Form.II:
            return self.core1 @ self.s, self.core2, self.core3
        if self.form is Form.IV:
            return self.core1, self.core2, self.s @ self.core3
        return self.core1, self.core2, self.core3

    def as_general(self) -> "TensorTrain3":
        return TensorTrain3(*self.general_cores())

    def __getitem__(self, idx) -> "TensorTrain3":
        s = None if self.s is None else self.s[idx]
        return TensorTrain3(self.core1[idx], self.core2[idx], self.core3[idx], self.form, s)

    def scaled(self, alpha) -> "TensorTrain3":
        """Multiply by a scalar (or a per-point array broadcast over the batch)."""
        alpha = np.asarray(alpha, dtype=float)
        c1, c2, c3 = self.general_cores()
        return TensorTrain3(c1 * alpha[..., None, None], c2, c3)

    def full(self, cap: int = FULL_TENSOR_CAP) -> np.ndarray:
        return tt_to_full(self, cap)


@dataclass(eq=False)
class TTSum:
    """Formal sum of tensor trains sharing Nv (ranks may differ)."""

    terms: list[TensorTrain3] = field(default_factory=list)

    def __post_init__(self):
        nvs = {t.nv for t in self.terms}
        if len(nvs) > 1:
            raise ValueError(f"terms disagree on Nv: {sorted(nvs)}")

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)

    def __add__(self, other: "TTSum") -> "TTSum":
        return TTSum(self.terms + list(other.terms))

    def scaled(self, alpha) -> "TTSum":
        return TTSum([t.scaled(alpha) for t in self.terms])

    def full(self, cap: int = FULL_TENSOR_CAP) -> np.ndarray:
        return sum(tt_to_full(t, cap) for t in self.terms)


TTLike = Union[TensorTrain3, TTSum, Sequence[TensorTrain3]]


def _terms(K: TTLike) -> list[TensorTrain3]:
    if isinstance(K, TensorTrain3):
        return [K]
    return list(K)


def mode_product(X: np.ndarray, n: int, Y: np.ndarray) -> np.ndarray:
    """Contract mode ``n`` (1-based) of ``X`` against the row index of ``Y``.

    ``(X x_n Y)[..., j, ...] = sum_i X[..., i, ...] Y[i, j]``, i.e. the
    transpose of the usual matrix action along that mode.
    """
    X = np.asarray(X)
    Y = np.asarray(Y)
    if not 1 <= n <= X.ndim:
        raise ValueError(f"mode {n} out of range for order-{X.ndim} tensor")
    if Y.ndim != 2 or X.shape[n - 1] != Y.shape[0]:
        raise ValueError(f"mode {n} has size {X.shape[n - 1]}, matrix has {Y.shape[0]} rows")
    out = np.tensordot(X, Y, axes=(n - 1, 0))
    return np.moveaxis(out, -1, n - 1)


def tt_to_full(f: TensorTrain3, cap: int = FULL_TENSOR_CAP) -> np.ndarray:
    size = f.nv ** 3 * int(np.prod(f.batch_shape, dtype=np.int64))
    if size > cap:
        raise MemoryError(f"full tensor of {size} entries exceeds cap {cap}")
    c1, c2, c3 = f.general_cores()
    tmp = np.einsum("...ajb,...bk->...ajk", c2, c3)
    return np.einsum("...ia,...ajk->...ijk", c1, tmp)


def tt_concat_sum(terms: TTLike) -> TensorTrain3:
    """Block-diagonal concatenation: a single TT equal to the sum of the terms."""
    terms = [t for t in _terms(terms)]
    if not terms:
        raise ValueError("empty sum")
    nv = terms[0].nv
    if any(t.nv != nv for t in terms):
        raise ValueError("terms disagree on Nv")
    if len(terms) == 1:
        return terms[0].as_general()
    cores = [t.general_cores() for t in terms]
    batch = np.broadcast_shapes(*(t.batch_shape for t in terms))
    r1s = [c[0].shape[-1] for c in cores]
    r2s = [c[2].shape[-2] for c in cores]
    dtype = np.result_type(*(c[1] for c in cores))
    c1 = np.concatenate([np.broadcast_to(c[0], batch + c[0].shape[-2:]) for c in cores], axis=-1)
    c3 = np.concatenate([np.broadcast_to(c[2], batch + c[2].shape[-2:]) for c in cores], axis=-2)
    c2 = np.zeros(batch + (sum(r1s), nv, sum(r2s)), dtype=dtype)
    a = b = 0
    for (_, core2, _), r1, r2 in zip(cores, r1s, r2s):
        c2[..., a:a + r1, :, b:b + r2] = core2
        a += r1
        b += r2
    return TensorTrain3(c1, c2, c3)


def scale_core_diag(f: TensorTrain3, mode: int, weights) -> TensorTrain3:
    """Scale the tensor along velocity direction ``mode`` by ``weights[k_mode]``."""
    w = np.asarray(weights, dtype=float)
    if w.shape[-1] != f.nv:
        raise ValueError(f"weights have length {w.shape[-1]}, expected {f.nv}")
    c1, c2, c3 = f.general_cores()
    if mode == 1:
        return TensorTrain3(c1 * w[..., :, None], c2, c3)
    if mode == 2:
        return TensorTrain3(c1, c2 * w[..., None, :, None], c3)
    if mode == 3:
        return TensorTrain3(c1, c2, c3 * w[..., None, :])
    raise ValueError(f"mode must be 1, 2 or 3, got {mode}")


# --------------------------------------------------------------------------
# orthogonalization

def qr_pos(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR with a non-negative diagonal of R (batched over leading axes)."""
    Q, R = np.linalg.qr(A)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    sign = np.where(d < 0, -1.0, 1.0)
    return Q * sign[..., None, :], R * sign[..., :, None]


def right_orthonormalize(c1, c2, c3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Make cores 3 then 2 right-orthonormal, pushing the factors into core 1."""
    r1, nv, r2 = c2.shape[-3:]
    q, r = qr_pos(np.swapaxes(c3, -1, -2))
    q3 = np.swapaxes(q, -1, -2)
    c2 = c2 @ np.swapaxes(r, -1, -2)[..., None, :, :]
    unfold = np.swapaxes(c2.reshape(c2.shape[:-3] + (r1, nv * r2)), -1, -2)
    q, r = qr_pos(unfold)
    q2 = np.swapaxes(q, -1, -2).reshape(c2.shape[:-3] + (r1, nv, r2))
    return c1 @ np.swapaxes(r, -1, -2), q2, q3


def orthogonalize_step(f: TensorTrain3, target: Form) -> TensorTrain3:
    """Advance ``f`` one position in the cycle I -> II -> III -> IV -> V -> I.

    ``General -> I`` (full right-orthonormalization) is also accepted.
    """
    if f.form is Form.GENERAL and target is Form.I or f.form is Form.V and target is Form.I:
        c1, c2, c3 = f.general_cores()
        return TensorTrain3(*right_orthonormalize(c1, c2, c3), form=Form.I)
    if _NEXT.get(f.form) is not target:
        raise ValueError(f"cannot convert form {f.form.value} to {target.value}")
    if target is Form.II:
        p1, s1 = qr_pos(f.core1)
        return TensorTrain3(p1, f.core2, f.core3, Form.II, s1)
    if target is Form.III:
        c2 = (f.s @ _flat2(f.core2)).reshape(f.core2.shape)
        return TensorTrain3(f.core1, c2, f.core3, Form.III)
    if target is Form.IV:
        r1, nv, r2 = f.core2.shape[-3:]
        p2, s2 = qr_pos(f.core2.reshape(f.core2.shape[:-3] + (r1 * nv, r2)))
        p2 = p2.reshape(f.core2.shape)
        return TensorTrain3(f.core1, p2, f.core3, Form.IV, s2)
    # target is Form.V
    return TensorTrain3(f.core1, f.core2, f.s @ f.core3, Form.V)


def to_form(f: TensorTrain3, target: Form) -> TensorTrain3:
    """Walk the orthogonalization cycle until ``target`` is reached."""
    if f.form is Form.GENERAL:
        f = orthogonalize_step(f, Form.I)
    while f.form is not target:
        f = orthogonalize_step(f, _NEXT[f.form])
    return f


def _gram_residual(G: np.ndarray) -> float:
    eye = np.eye(G.shape[-1])
    return float(np.max(np.linalg.norm(G - eye, ord=2, axis=(-2, -1)), initial=0.0))


def left_gram1(p1):
    return np.swapaxes(p1, -1, -2) @ p1


def _flat_left(core: np.ndarray) -> np.ndarray:
    """Merge the first two core axes: (..., a, k, b) -> (..., a*k, b)."""
    return core.reshape(core.shape[:-3] + (core.shape[-3] * core.shape[-2], core.shape[-1]))


def left_gram2(p2):
    flat = _flat_left(p2)
    return np.swapaxes(flat, -1, -2) @ flat


def right_gram2(q2):
    flat = _flat2(q2)
    return flat @ np.swapaxes(flat, -1, -2)


def right_gram3(q3):
    return q3 @ np.swapaxes(q3, -1, -2)


def orthonormality_residual(f: TensorTrain3) -> float:
    """Largest spectral-norm deviation from identity of the Gram matrices the form requires."""
    checks = {
        Form.GENERAL: [],
        Form.I: [right_gram2(f.core2), right_gram3(f.core3)],
        Form.II: [left_gram1(f.core1), right_gram2(f.core2), right_gram3(f.core3)],
        Form.III: [left_gram1(f.core1), right_gram3(f.core3)],
        Form.IV: [left_gram1(f.core1), left_gram2(f.core2), right_gram3(f.core3)],
        Form.V: [left_gram1(f.core1), left_gram2(f.core2)],
    }[f.form]
    return max((_gram_residual(G) for G in checks), default=0.0)


# --------------------------------------------------------------------------
# projections onto frozen orthonormal frames

def _flat2(core: np.ndarray) -> np.ndarray:
    """Merge the last two axes: (..., a, k, b) -> (..., a, k*b)."""
    return core.reshape(core.shape[:-2] + (core.shape[-2] * core.shape[-1],))

def project_right(K: TTLike, q2: np.ndarray, q3: np.ndarray) -> np.ndarray:
    """``R[k1, a] = sum full(K)[k1, k2, k3] q2[a, k2, b] q3[b, k3]``; shape (..., Nv, r1)."""
    out = 0.0
    for t in _terms(K):
        a1, a2, a3 = t.general_cores()
        m3 = a3 @ np.swapaxes(q3, -1, -2)                      # (rk2, r2)
        rk1, nv = a2.shape[-3:-1]
        t2 = (_flat_left(a2) @ m3).reshape(m3.shape[:-2] + (rk1, nv * m3.shape[-1]))
        m2 = t2 @ np.swapaxes(_flat2(q2), -1, -2)              # (rk1, r1)
        out = out + a1 @ m2
    return out


def project_middle(K: TTLike, p1: np.ndarray, q3: np.ndarray) -> np.ndarray:
    """``R[a, k2, b] = sum full(K)[k1, k2, k3] p1[k1, a] q3[b, k3]``; shape (..., r1, Nv, r2)."""
    out = 0.0
    for t in _terms(K):
        a1, a2, a3 = t.general_cores()
        n1 = np.swapaxes(p1, -1, -2) @ a1                      # (r1, rk1)
        n3 = a3 @ np.swapaxes(q3, -1, -2)                      # (rk2, r2)
        rk1, nv, rk2 = a2.shape[-3:]
        mid = (n1 @ _flat2(a2)).reshape(n1.shape[:-1] + (nv, rk2))
        r1 = n1.shape[-2]
        out = out + (_flat_left(mid) @ n3).reshape(mid.shape[:-3] + (r1, nv, n3.shape[-1]))
    return out


def project_left(K: TTLike, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """``R[b, k3] = sum full(K)[k1, k2, k3] p1[k1, a] p2[a, k2, b]``; shape (..., r2, Nv)."""
    out = 0.0
    for t in _terms(K):
        a1, a2, a3 = t.general_cores()
        n1 = np.swapaxes(p1, -1, -2) @ a1                      # (r1, rk1)
        rk1, nv, rk2 = a2.shape[-3:]
        r1, _, r2 = p2.shape[-3:]
        mid = (n1 @ _flat2(a2)).reshape(n1.shape[:-1] + (nv, rk2))      # (r1, Nv, rk2)
        lhs = np.swapaxes(p2.reshape(p2.shape[:-3] + (r1 * nv, r2)), -1, -2)
        n2 = lhs @ mid.reshape(mid.shape[:-3] + (r1 * nv, rk2))          # (r2, rk2)
        out = out + n2 @ a3
    return out


# --------------------------------------------------------------------------
# ranks

def effective_rank_from_singular_values(sv: np.ndarray, delta: float) -> np.ndarray:
    """``max{l : sigma_l >= delta * sigma_1}`` along the last axis (0 for an all-zero factor)."""
    sv = np.asarray(sv)
    top = sv[..., :1]
    count = np.sum(sv >= delta * top, axis=-1)
    zero = top[..., 0] <= 0
    if np.any(zero):
        warnings.warn("effective rank of an all-zero S factor reported as 0", RuntimeWarning)
    return np.where(zero, 0, count)


def effective_rank(f: TensorTrain3, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Effective ranks from the singular values of S1 (form II) and S2 (form IV)."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    f2 = f if f.form is Form.II else to_form(f, Form.II)
    sv1 = np.linalg.svd(f2.s, compute_uv=False)
    f4 = to_form(f2, Form.IV)
    sv2 = np.linalg.svd(f4.s, compute_uv=False)
    return effective_rank_from_singular_values(sv1, delta), effective_rank_from_singular_values(sv2, delta)


def _complete(basis: np.ndarray, extra: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal columns spanning a complement of ``basis`` columns (batched)."""
    n = basis.shape[-2]
    g = rng.standard_normal((n, extra))
    g = np.broadcast_to(g, basis.shape[:-2] + (n, extra))
    for _ in range(2):  # re-orthogonalize once for stability
        g = g - basis @ (np.swapaxes(basis, -1, -2) @ g)
    q, _ = qr_pos(g)
    return q


def pad_rank(f: TensorTrain3, r1: int, r2: int, seed: int = 0, eps_pad: float = 1e-12) -> TensorTrain3:
    """Embed ``f`` into a form-I tensor train of larger rank ``(r1, r2)``.

    Extra frame directions come from a fixed-seed random completion; the
    matching coefficients are ``eps_pad`` times the largest singular value.
    """
    f = to_form(f, Form.I) if f.form is not Form.I else f
    n1, n2 = f.ranks
    if r1 < n1 or r2 < n2:
        raise ValueError(f"target rank ({r1}, {r2}) below current rank ({n1}, {n2})")
    nv = f.nv
    if r1 > nv or r2 > nv:
        raise ValueError("target rank exceeds Nv")
    rng = np.random.default_rng(seed)
    c1, q2, q3 = f.core1, f.core2, f.core3
    batch = f.batch_shape

    if r2 > n2:
        new = _complete(np.swapaxes(q3, -1, -2), r2 - n2, rng)
        q3 = np.concatenate([q3, np.swapaxes(new, -1, -2)], axis=-2)
        q2 = np.concatenate([q2, np.zeros(batch + (n1, nv, r2 - n2))], axis=-1)
    if r1 > n1:
        rows = np.swapaxes(q2.reshape(batch + (n1, nv * r2)), -1, -2)
        new = _complete(rows, r1 - n1, rng)
        q2 = np.concatenate([q2, np.swapaxes(new, -1, -2).reshape(batch + (r1 - n1, nv, r2))], axis=-3)
        sigma = np.linalg.svd(c1, compute_uv=False)[..., 0]
        p1, _ = qr_pos(c1)
        cols = _complete(p1, r1 - n1, rng)
        c1 = np.concatenate([c1, eps_pad * sigma[..., None, None] * cols], axis=-1)
    return TensorTrain3(c1, q2, q3, Form.I)


# --------------------------------------------------------------------------
# binary snapshots

SNAPSHOT_MAGIC = b"TT3F"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


def save_snapshot(path: str | Path, field_tt: TensorTrain3) -> None:
    """Write a batched (Nx,) tensor-train field in the ``TT3F`` format."""
    if len(field_tt.batch_shape) != 1:
        raise ValueError("snapshot expects a field with batch shape (Nx,)")
    c1, c2, c3 = field_tt.general_cores()
    nx = field_tt.batch_shape[0]
    r1, r2 = field_tt.ranks
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, nx, field_tt.nv, r1, r2))
        for j in range(nx):
            for core in (c1[j], c2[j], c3[j]):
                fh.write(np.ascontiguousarray(core, dtype="<f8").tobytes())


def load_snapshot(path: str | Path) -> TensorTrain3:
    data = Path(path).read_bytes()
    magic, version, nx, nv, r1, r2 = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"not a TT3F snapshot: magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    sizes = (nv * r1, r1 * nv * r2, r2 * nv)
    per_point = sum(sizes)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != nx * per_point:
        raise ValueError("snapshot body has the wrong length")
    body = body.reshape(nx, per_point)
    c1 = body[:, :sizes[0]].reshape(nx, nv, r1)
    c2 = body[:, sizes[0]:sizes[0] + sizes[1]].reshape(nx, r1, nv, r2)
    c3 = body[:, sizes[0] + sizes[1]:].reshape(nx, r2, nv)
    return TensorTrain3(c1.copy(), c2.copy(), c3.copy())


def tt_svd(full: np.ndarray, r1: int | None = None, r2: int | None = None) -> TensorTrain3:
    """Tensor train of full tensors ``(..., Nv, Nv, Nv)`` by sequential truncated SVDs.

    Ranks default to the largest possible ones, in which case the
    representation is exact; otherwise each unfolding is truncated to the
    requested rank.  Leading axes are treated as a batch.
    """
    full = np.asarray(full, dtype=float)
    if full.ndim < 3:
        raise ValueError("expected at least three axes")
    batch, (n1, n2, n3) = full.shape[:-3], full.shape[-3:]
    k1 = min(n1, n2 * n3) if r1 is None else min(r1, n1, n2 * n3)
    k2 = min(k1 * n2, n3) if r2 is None else min(r2, k1 * n2, n3)
    U, s, Vt = np.linalg.svd(full.reshape(batch + (n1, n2 * n3)), full_matrices=False)
    c1 = U[..., :k1]
    rest = (s[..., :k1, None] * Vt[..., :k1, :]).reshape(batch + (k1 * n2, n3))
    U, s, Vt = np.linalg.svd(rest, full_matrices=False)
    c2 = U[..., :k2].reshape(batch + (k1, n2, k2))
    c3 = s[..., :k2, None] * Vt[..., :k2, :]
    return TensorTrain3(c1, c2, c3)


def stack(tts: Iterable[TensorTrain3]) -> TensorTrain3:
    """Stack single-point tensor trains (same ranks) into a batched field."""
    tts = [t.as_general() for t in tts]
    return TensorTrain3(
        np.stack([t.core1 for t in tts]),
        np.stack([t.core2 for t in tts]),
        np.stack([t.core3 for t in tts]),
    )
