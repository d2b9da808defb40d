"""Tight random frames, restricted-isometry estimation, and Kashin compression.

A d x D frame matrix U with orthonormal rows (D = lambda * d, lambda > 1) is
drawn via QR of a Gaussian matrix.  The iterative clipping scheme turns the
plain frame representation U^T x into coefficients with uniformly small
dynamic range, which an inner sign/magnitude-preserving quantizer then
encodes at a dimension-independent variance.

Inner quantizers here are scaled by the coefficients' maximum magnitude
(not their Euclidean norm): that is what keeps every quantized coefficient
inside [-||a||_inf, ||a||_inf] elementwise, the property the uniform error
bound relies on.  Sparsifiers break this property and are rejected.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import CompressedMessage, ParameterError, RngStream, as_vector
from .compressors import CompressorSpec, Operator, _round_to_grid, _nat_levels

INNER_KINDS = ("ternary", "std_dither", "nat_dither")

# relative residual below which extra clipping rounds are numerical no-ops
RESIDUAL_FLOOR = 1e-12

_MAGIC = b"KASHFRM1"
_VERSION = 1


class EstimationError(RuntimeError):
    """RIP estimation found no usable (delta, eta) pair; frame unusable."""


class ContractError(ValueError):
    """Inner operator does not preserve sign and maximum magnitude."""


def frame_size(d: int, lam: float) -> int:
    D = int(round(lam * d))
    if lam <= 1 or D <= d:
        raise ParameterError(f"redundancy lam={lam} must satisfy round(lam*d) > d")
    return D


@dataclass(frozen=True)
class FrameMatrix:
    """d x D matrix with orthonormal rows (U U^T = I_d)."""

    entries: np.ndarray
    d: int
    D: int

    @property
    def lam(self) -> float:
        return self.D / self.d

    def orthogonality_defect(self) -> float:
        U = self.entries
        return float(np.linalg.norm(U @ U.T - np.eye(self.d)))


@dataclass(frozen=True)
class RipParams:
    delta: float
    eta: float
    source: str  # "empirical" | "theoretical"

    def __post_init__(self):
        if not (0 < self.delta < 1 and 0 < self.eta < 1):
            raise ParameterError("RIP parameters must lie in (0, 1)")

    @property
    def level_K(self) -> float:
        return 1.0 / (math.sqrt(self.delta) * (1.0 - self.eta))


@dataclass(frozen=True)
class KashinCoefficients:
    a: np.ndarray
    residual_norm: float
    level_bound: float


def generate_frame(d: int, lam: float, rng: RngStream) -> FrameMatrix:
    """Random orthogonal frame: QR of a D x d Gaussian matrix, transposed."""
    from scipy.linalg import qr  # in-place economic QR halves peak memory

    D = frame_size(d, lam)
    gen = rng.generator()
    for _ in range(3):
        G = gen.standard_normal((D, d))
        Q, R = qr(G, mode="economic", overwrite_a=True, check_finite=False)
        diag = np.diag(R).copy()
        del G, R
        if np.all(diag != 0):
            Q *= np.sign(diag)  # fix signs so the distribution is Haar-like
            return FrameMatrix(entries=np.ascontiguousarray(Q.T), d=d, D=D)
    raise ParameterError("degenerate QR decomposition (repeatedly)")


def theoretical_rip_params(lam: float) -> RipParams:
    """High-probability (delta, eta) for random orthogonal frames."""
    if lam <= 1:
        raise ParameterError("lam must be > 1")
    root = 1.0 / math.sqrt(lam)
    return RipParams(delta=(1.0 - root) ** 2 / 5**4, eta=0.75 + 0.25 * root,
                     source="theoretical")


def rip_probability_bound(d: int, lam: float) -> float:
    """Lower bound on the probability that a random frame attains the
    theoretical (delta, eta); clamped to [0, 1] (negative for lam near 1)."""
    if lam <= 1:
        raise ParameterError("lam must be > 1")
    root = math.sqrt(lam)
    inner = 1.0 / 26 + math.log(1.0 - 1.0 / root) / 208
    p = 1.0 - 5.0 * math.exp(-d * (root - 1.0) ** 2 * inner)
    return min(1.0, max(0.0, p))


def kashin_variance_bound(lam: float) -> float:
    """Dimension-independent variance bound for Kashin compression."""
    if lam <= 1:
        raise ParameterError("lam must be > 1")
    return (10.0 * math.sqrt(lam) / (math.sqrt(lam) - 1.0)) ** 4


def _sparse_sample_max_norm(U: np.ndarray, support: int, n: int, rng: RngStream,
                            chunk: int = 512) -> float:
    """Max of ||U x||_2 over n random unit vectors with the given support size
    (uniform support, Gaussian values, normalized)."""
    d, D = U.shape
    gen = rng.generator()
    if support >= D:
        support = D
    best = 0.0
    if support == 1:
        col_norms = np.linalg.norm(U, axis=0)
        idx = gen.integers(0, D, size=n)
        return float(col_norms[idx].max())
    Ut = U.T
    done = 0
    while done < n:
        c = min(chunk, n - done)
        ranks = gen.random((c, D)).argpartition(support - 1, axis=1)[:, :support]
        vals = gen.standard_normal((c, support))
        vals /= np.linalg.norm(vals, axis=1, keepdims=True)
        X = np.zeros((c, D))
        X[np.arange(c)[:, None], ranks] = vals
        norms = np.linalg.norm(X @ Ut, axis=1)
        best = max(best, float(norms.max()))
        done += c
    return best


def rip_sample_check(frame: FrameMatrix, params: RipParams, sample_size: int,
                     rng: RngStream) -> bool:
    """Sampled verification of the restricted-isometry contraction."""
    support = max(1, int(params.delta * frame.D))
    eta_hat = _sparse_sample_max_norm(frame.entries, support, sample_size, rng)
    return eta_hat <= params.eta


def estimate_rip(frame: FrameMatrix, sample_size: int, rng: RngStream) -> RipParams:
    """Tune (delta, eta) to minimize the representation level K.

    Walks a geometric grid of delta candidates from 0.9 downwards, estimates
    eta(delta) as the max embedding norm over sampled sparse unit vectors,
    then refines once around the best candidate.
    """
    if sample_size < 1000:
        raise ParameterError("sample_size must be >= 1000")
    U = frame.entries
    D = frame.D

    def evaluate(deltas, stream):
        best = None
        for i, delta in enumerate(deltas):
            support = int(delta * D)
            if support < 1:
                continue
            eta_hat = _sparse_sample_max_norm(U, support, sample_size, stream.child(i))
            if eta_hat >= 1.0:
                continue
            K = 1.0 / (math.sqrt(delta) * (1.0 - eta_hat))
            if best is None or K < best[2]:
                best = (delta, eta_hat, K)
        return best

    grid = np.geomspace(0.9, 1e-4, 40)
    best = evaluate(grid, rng.child(0))
    if best is None:
        raise EstimationError("eta >= 1 for every delta candidate; frame unusable")
    ratio = (0.9 / 1e-4) ** (1 / 39)
    refine = np.geomspace(min(best[0] * ratio, 0.9), best[0] / ratio, 11)
    refined = evaluate(refine, rng.child(1))
    if refined is not None and refined[2] < best[2]:
        best = refined
    return RipParams(delta=best[0], eta=best[1], source="empirical")


def default_rounds(eta: float, target: float = 1e-6) -> int:
    """Smallest iteration count r with eta^r <= target."""
    if not 0 < eta < 1:
        raise ParameterError("eta must lie in (0, 1)")
    return max(1, math.ceil(math.log(target) / math.log(eta)))


def kashin_representation(frame: FrameMatrix, x, params: RipParams,
                          r: int) -> KashinCoefficients:
    """Iterative clipping: r rounds of project, clip at M, deflate M by eta."""
    x = as_vector(x)
    if x.size != frame.d:
        raise ParameterError(f"vector length {x.size} != frame dimension {frame.d}")
    if r < 1:
        raise ParameterError("r must be >= 1")
    U = frame.entries
    D = frame.D
    norm0 = np.linalg.norm(x)
    a = np.zeros(D)
    if norm0 == 0.0:
        return KashinCoefficients(a=a, residual_norm=0.0, level_bound=0.0)
    M = norm0 / math.sqrt(params.delta * D)
    resid = x.copy()
    for _ in range(r):
        b = U.T @ resid
        b_hat = np.sign(b) * np.minimum(np.abs(b), M)
        resid = resid - U @ b_hat
        a = a + b_hat
        M = params.eta * M
        # once the residual is negligible the remaining rounds only add
        # subnormal noise (and run ~100x slower on it); stop early
        if np.linalg.norm(resid) <= RESIDUAL_FLOOR * norm0:
            break
    return KashinCoefficients(
        a=a,
        residual_norm=float(np.linalg.norm(resid)),
        level_bound=params.level_K / math.sqrt(D) * norm0,
    )


def kashin_representation_batch(frame: FrameMatrix, X: np.ndarray,
                                params: RipParams, r: int) -> np.ndarray:
    """Row-wise kashin_representation for an (n, d) stack of vectors.

    Same clipping iteration, but the projections become matrix products over
    all rows at once, which is much faster than n separate runs.  Zero rows
    yield zero coefficient rows.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.ndim != 2 or X.shape[1] != frame.d:
        raise ParameterError(f"expected (n, {frame.d}) rows, got {X.shape}")
    if r < 1:
        raise ParameterError("r must be >= 1")
    U = frame.entries
    norms0 = np.linalg.norm(X, axis=1, keepdims=True)
    M = norms0 / math.sqrt(params.delta * frame.D)
    A = np.zeros((X.shape[0], frame.D))
    resid = X.copy()
    for _ in range(r):
        B = resid @ U
        B_hat = np.sign(B) * np.minimum(np.abs(B), M)
        resid -= B_hat @ U.T
        A += B_hat
        M = params.eta * M
        # see kashin_representation: stop once every row is negligible
        row_norms = np.linalg.norm(resid, axis=1, keepdims=True)
        if np.all(row_norms <= RESIDUAL_FLOOR * norms0):
            break
    return A


# --- max-magnitude-scaled inner quantizers ----------------------------------


def inner_bits(spec: CompressorSpec, D: int) -> float:
    if spec.inner == "ternary":
        return 31.0 + D * math.log2(3)
    if spec.inner == "std_dither":
        return 31.0 + D * (1 + math.ceil(math.log2(spec.s + 1)))
    if spec.inner == "nat_dither":
        return 31.0 + D * math.log2(2 * spec.s + 1)
    raise ContractError(
        f"inner operator {spec.inner!r} violates the sign/magnitude condition"
    )


def _inner_quantize_batch(a: np.ndarray, spec: CompressorSpec, trials: int,
                          gen: np.random.Generator) -> np.ndarray:
    """Quantize coefficients, scaled by their max magnitude.

    Output rows q satisfy 0 <= q_i * sign(a_i) <= ||a||_inf elementwise and
    E[q] = a.
    """
    M = np.abs(a).max()
    if M == 0.0:
        return np.zeros((trials, a.size))
    t = np.abs(a) / M
    sgn = M * np.sign(a)
    if spec.inner == "ternary":
        return np.where(gen.random((trials, a.size)) < t, sgn, 0.0)
    if spec.inner == "std_dither":
        s = spec.s
        lo = np.floor(t * s) / s
        hi = np.maximum(np.minimum(lo + 1.0 / s, 1.0), t)
    elif spec.inner == "nat_dither":
        lo, hi = _nat_levels(t, spec.s)
    else:
        raise ContractError(
            f"inner operator {spec.inner!r} violates the sign/magnitude condition"
        )
    u = gen.random((trials, a.size))
    level = _round_to_grid(t[None, :], lo[None, :], hi[None, :], u)
    return sgn * level


def kashin_compress(x, frame: FrameMatrix, params: RipParams, r: int,
                    inner: CompressorSpec, rng: RngStream) -> CompressedMessage:
    """Compress x by quantizing its Kashin coefficients; decode is U @ C(a)."""
    if inner.kind != "kashin":
        inner = CompressorSpec(kind="kashin", lam=frame.lam, inner=inner.kind,
                               s=inner.s)
    x = as_vector(x)
    bits = inner_bits(inner, frame.D)
    tag = inner.tag
    if not np.any(x):
        return CompressedMessage(payload=np.zeros(x.size), bits=bits,
                                 origin_dim=x.size, scheme_tag=tag,
                                 decoder=lambda p: p)
    coeffs = kashin_representation(frame, x, params, r)
    qa = _inner_quantize_batch(coeffs.a, inner, 1, rng.generator())[0]
    U = frame.entries

    def _decode(payload, _U=U):
        return _U @ payload

    return CompressedMessage(payload=qa, bits=bits, origin_dim=x.size,
                             scheme_tag=tag, decoder=_decode)


class KashinOperator(Operator):
    """Frame + RIP params built once; per-call work is represent + quantize."""

    def __init__(self, spec: CompressorSpec, d: int, setup_rng: RngStream,
                 sample_size: Optional[int] = None, params: Optional[RipParams] = None):
        super().__init__(spec, d)
        self.frame = generate_frame(d, spec.lam, setup_rng.child(0))
        if params is None:
            if sample_size is None:
                sample_size = 10_000 if d <= 256 else 2000
            params = estimate_rip(self.frame, sample_size, setup_rng.child(1))
        self.params = params
        self.rounds = default_rounds(params.eta)
        self._omega_hat: Optional[float] = None
        self._setup_rng = setup_rng

    def compress(self, x, rng: RngStream) -> CompressedMessage:
        return kashin_compress(x, self.frame, self.params, self.rounds,
                               self.spec, rng)

    def compress_many(self, X, streams) -> list:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        A = kashin_representation_batch(self.frame, X, self.params, self.rounds)
        U = self.frame.entries

        def _decode(payload, _U=U):
            return _U @ payload

        msgs = []
        for a, stream in zip(A, streams):
            qa = _inner_quantize_batch(a, self.spec, 1, stream.generator())[0]
            msgs.append(CompressedMessage(
                payload=qa, bits=self.bits, origin_dim=self.d,
                scheme_tag=self.tag, decoder=_decode,
            ))
        return msgs

    def decode_batch_sweep(self, X, trials: int, stream_fn):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        A = kashin_representation_batch(self.frame, X, self.params, self.rounds)
        Ut = self.frame.entries.T
        for j in range(X.shape[0]):
            q = _inner_quantize_batch(A[j], self.spec, trials,
                                      stream_fn(j).generator())
            yield q @ Ut

    def decode_batch(self, x, trials: int, rng: RngStream) -> np.ndarray:
        x = as_vector(x)
        if not np.any(x):
            return np.zeros((trials, self.d))
        coeffs = kashin_representation(self.frame, x, self.params, self.rounds)
        q = _inner_quantize_batch(coeffs.a, self.spec, trials, rng.generator())
        return q @ self.frame.entries.T

    def stepsize_omega(self) -> float:
        """Monte-Carlo estimate of the variance (the closed-form bound is far
        too loose to set a stepsize with)."""
        if self._omega_hat is None:
            stream = self._setup_rng.child(2)
            gen = stream.generator()
            total = 0.0
            probes = 16
            for i in range(probes):
                x = gen.standard_normal(self.d)
                dec = self.decode_batch(x, 32, stream.child(i))
                errs = ((dec - x) ** 2).sum(axis=1) / (x @ x)
                total += float(errs.mean())
            self._omega_hat = total / probes
        return self._omega_hat


# --- frame cache file --------------------------------------------------------

_HEADER = struct.Struct("<8sIIIQddd")  # magic, version, d, D, seed, delta, eta, K


def save_frame(path, frame: FrameMatrix, params: RipParams, seed: int) -> None:
    """Binary layout: little-endian header (magic 'KASHFRM1', u32 version,
    u32 d, u32 D, u64 seed, f64 delta, f64 eta, f64 K) then d*D float64
    entries, row-major."""
    header = _HEADER.pack(_MAGIC, _VERSION, frame.d, frame.D, seed,
                          params.delta, params.eta, params.level_K)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(frame.entries).tobytes())


def load_frame(path):
    """Returns (FrameMatrix, RipParams, seed); validates magic and shape."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParameterError(f"{path}: truncated frame cache")
    magic, version, d, D, seed, delta, eta, K = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ParameterError(f"{path}: not a frame cache file")
    entries = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if entries.size != d * D:
        raise ParameterError(f"{path}: expected {d * D} entries, got {entries.size}")
    frame = FrameMatrix(entries=entries.reshape(d, D).copy(), d=d, D=D)
    params = RipParams(delta=delta, eta=eta, source="empirical")
    return frame, params, seed
