"""Baseline compression operators: sparsifiers, ditherers, and sign/ternary quantizers.

Every operator returns a `CompressedMessage` whose bit cost follows the
fixed-width accounting conventions documented in the README (norms cost 31
bits because they are positive; fractional bits are allowed for
entropy-style terms such as log2 of a binomial coefficient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import CompressedMessage, ParameterError, RngStream, as_vector

UNBIASED_KINDS = frozenset({"identity", "randk", "std_dither", "nat_dither", "ternary"})
BIASED_KINDS = frozenset({"topk", "scaled_sign"})
KNOWN_KINDS = UNBIASED_KINDS | BIASED_KINDS | {"kashin", "polytope"}


@dataclass(frozen=True)
class CompressorSpec:
    """Tagged description of one operator and its parameters.

    kind: identity | randk | topk | std_dither | nat_dither | ternary |
          scaled_sign | kashin | polytope
    k     sparsifier support size, s  dithering levels, lam  frame redundancy,
    inner inner quantizer kind for Kashin compression, m  polytope vertices.
    scaled=True wraps an unbiased operator with the 1/(omega+1) contraction
    scaling, turning it into a biased operator with alpha = omega/(omega+1).
    """

    kind: str
    k: Optional[int] = None
    s: Optional[int] = None
    lam: Optional[float] = None
    inner: Optional[str] = None
    m: Optional[int] = None
    scaled: bool = False

    def __post_init__(self):
        if self.kind not in KNOWN_KINDS:
            raise ParameterError(f"unknown compressor kind {self.kind!r}")
        if self.kind in ("randk", "topk") and (self.k is None or self.k < 1):
            raise ParameterError(f"{self.kind} requires k >= 1")
        if self.kind in ("std_dither", "nat_dither") and (self.s is None or self.s < 1):
            raise ParameterError(f"{self.kind} requires s >= 1")
        if self.kind == "kashin":
            if self.lam is None or self.lam <= 1:
                raise ParameterError("kashin requires lam > 1")
            if self.inner not in ("ternary", "std_dither", "nat_dither"):
                raise ParameterError(
                    "kashin inner quantizer must be ternary, std_dither or nat_dither"
                )
            if self.inner in ("std_dither", "nat_dither") and (self.s is None or self.s < 1):
                raise ParameterError("kashin with a dithering inner requires s >= 1")
        if self.kind == "polytope" and (self.m is None or self.m < 4):
            raise ParameterError("polytope requires m >= 4 vertices")
        if self.scaled and not self.is_unbiased_base:
            raise ParameterError("Lemma-1 scaling applies to unbiased operators only")

    @property
    def is_unbiased_base(self) -> bool:
        return self.kind in UNBIASED_KINDS or self.kind in ("kashin", "polytope")

    @property
    def is_unbiased(self) -> bool:
        return self.is_unbiased_base and not self.scaled

    @property
    def tag(self) -> str:
        parts = [self.kind]
        if self.k is not None:
            parts.append(f"k{self.k}")
        if self.s is not None:
            parts.append(f"s{self.s}")
        if self.lam is not None:
            parts.append(f"lam{self.lam:g}")
        if self.inner is not None:
            parts.append(self.inner)
        if self.m is not None:
            parts.append(f"m{self.m}")
        tag = "-".join(parts)
        return f"scaled-{tag}" if self.scaled else tag


def scale_to_contractive(spec: CompressorSpec) -> CompressorSpec:
    """Lemma-1 wrapper: unbiased omega-operator -> biased alpha = omega/(omega+1)."""
    if spec.scaled:
        raise ParameterError("operator is already Lemma-1 scaled")
    if not spec.is_unbiased_base:
        raise ParameterError(f"{spec.kind} is biased; Lemma-1 scaling does not apply")
    return replace(spec, scaled=True)


def log2_binom(d: int, k: int) -> float:
    return (math.lgamma(d + 1) - math.lgamma(k + 1) - math.lgamma(d - k + 1)) / math.log(2)


def theoretical_omega(spec: CompressorSpec, d: int) -> float:
    """Closed-form variance parameter for the unbiased kinds."""
    if spec.scaled or not spec.is_unbiased_base:
        raise ParameterError(f"{spec.tag} has no unbiased variance parameter")
    if spec.kind == "identity":
        return 0.0
    if spec.kind == "randk":
        _check_k(spec.k, d)
        return d / spec.k - 1.0
    if spec.kind == "std_dither":
        return min(math.sqrt(d) / spec.s, d / spec.s**2)
    if spec.kind == "nat_dither":
        # second branch read as d / 2^(2s-2); the printed 2-2s exponent is a typo
        return min(math.sqrt(d) / 2 ** (spec.s - 1), d / 2 ** (2 * spec.s - 2))
    if spec.kind == "ternary":
        return math.sqrt(d) - 1.0
    if spec.kind == "kashin":
        from .kashin import kashin_variance_bound

        return kashin_variance_bound(spec.lam)
    raise ParameterError(f"no closed-form omega for {spec.kind}")


def theoretical_alpha(spec: CompressorSpec, d: int) -> float:
    """Closed-form contraction factor for the biased kinds (incl. scaled ones)."""
    if spec.scaled:
        w = theoretical_omega(replace(spec, scaled=False), d)
        return w / (w + 1.0)
    if spec.kind == "topk":
        _check_k(spec.k, d)
        return 1.0 - spec.k / d
    if spec.kind == "scaled_sign":
        return 1.0 - 1.0 / d
    raise ParameterError(f"{spec.tag} has no closed-form alpha")


def theoretical_bits(spec: CompressorSpec, d: int) -> float:
    """Bit cost of one compressed message under the fixed-width conventions."""
    if d < 1:
        raise ParameterError("d must be >= 1")
    if spec.kind == "identity":
        return 32.0 * d
    if spec.kind in ("randk", "topk"):
        _check_k(spec.k, d)
        return 32.0 * spec.k + log2_binom(d, spec.k)
    if spec.kind == "std_dither":
        return 31.0 + d * (1 + math.ceil(math.log2(spec.s + 1)))
    if spec.kind == "nat_dither":
        return 31.0 + d * math.log2(2 * spec.s + 1)
    if spec.kind == "ternary":
        return 31.0 + d * math.log2(3)
    if spec.kind == "scaled_sign":
        return 31.0 + d
    if spec.kind == "kashin":
        from .kashin import frame_size, inner_bits

        return inner_bits(spec, frame_size(d, spec.lam))
    if spec.kind == "polytope":
        return 31.0 + math.log2(spec.m)
    raise ParameterError(f"unsupported kind {spec.kind}")


def _check_k(k, d):
    if k is None or not 1 <= k <= d:
        raise ParameterError(f"k={k} out of range for dimension {d}")


def _identity_decode(payload):
    return payload


def _message(vec: np.ndarray, bits: float, tag: str) -> CompressedMessage:
    return CompressedMessage(
        payload=vec, bits=bits, origin_dim=vec.size, scheme_tag=tag,
        decoder=_identity_decode,
    )


# --- the six Table-style operators ------------------------------------------


def random_sparsification(x, k: int, rng: RngStream) -> CompressedMessage:
    """Keep a uniformly random support of size k, rescale kept entries by d/k."""
    x = as_vector(x)
    d = x.size
    _check_k(k, d)
    gen = rng.generator()
    idx = gen.choice(d, size=k, replace=False)
    out = np.zeros(d)
    out[idx] = x[idx] * (d / k)
    return _message(out, 32.0 * k + log2_binom(d, k), f"randk-k{k}")


def topk(x, k: int) -> CompressedMessage:
    """Keep the k largest-magnitude entries unscaled; ties go to the lowest index."""
    x = as_vector(x)
    d = x.size
    _check_k(k, d)
    order = np.argsort(-np.abs(x), kind="stable")
    out = np.zeros(d)
    out[order[:k]] = x[order[:k]]
    return _message(out, 32.0 * k + log2_binom(d, k), f"topk-k{k}")


def _round_to_grid(t: np.ndarray, lo: np.ndarray, hi: np.ndarray, u: np.ndarray):
    """Unbiased two-point rounding of t in [lo, hi]: pick hi w.p. (t-lo)/(hi-lo)."""
    gap = hi - lo
    p = np.where(gap > 0, (t - lo) / np.where(gap > 0, gap, 1.0), 0.0)
    return np.where(u < p, hi, lo)


def standard_dithering(x, s: int, rng: RngStream) -> CompressedMessage:
    """Randomized rounding of |x_i|/||x||_2 onto the uniform grid {0, 1/s, ..., 1}."""
    x = as_vector(x)
    if s < 1:
        raise ParameterError("s must be >= 1")
    d = x.size
    bits = 31.0 + d * (1 + math.ceil(math.log2(s + 1)))
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return _message(np.zeros(d), bits, f"std_dither-s{s}")
    t = np.abs(x) / norm
    lo = np.floor(t * s) / s
    hi = np.minimum(lo + 1.0 / s, 1.0)
    level = _round_to_grid(t, lo, np.maximum(hi, t), rng.generator().random(d))
    out = norm * np.sign(x) * level
    return _message(out, bits, f"std_dither-s{s}")


def _nat_levels(t: np.ndarray, s: int):
    """Adjacent binary-geometric levels around t in [0, 1]; grid {0, 2^(1-s), ..., 1}."""
    tiny = np.finfo(float).tiny
    j = np.floor(np.log2(np.maximum(t, tiny)))  # 2^j <= t < 2^(j+1)
    j = np.clip(j, 1 - s, 0.0)
    lo = np.where(t < 2.0 ** (1 - s), 0.0, 2.0**j)
    hi = np.where(t < 2.0 ** (1 - s), 2.0 ** (1 - s), np.minimum(2.0 ** (j + 1), 1.0))
    exact = t >= 1.0
    lo = np.where(exact, 1.0, lo)
    hi = np.where(exact, 1.0, hi)
    # t sitting exactly on a level rounds to itself
    on_level = (t == lo) | (t == hi)
    lo = np.where(on_level & (t == hi), hi, lo)
    return np.where(on_level, t, lo), np.where(on_level, t, hi)


def natural_dithering(x, s: int, rng: RngStream) -> CompressedMessage:
    """Randomized rounding of |x_i|/||x||_2 onto the levels {0, 2^(1-s), ..., 1}."""
    x = as_vector(x)
    if s < 1:
        raise ParameterError("s must be >= 1")
    d = x.size
    bits = 31.0 + d * math.log2(2 * s + 1)
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return _message(np.zeros(d), bits, f"nat_dither-s{s}")
    t = np.abs(x) / norm
    lo, hi = _nat_levels(t, s)
    level = _round_to_grid(t, lo, hi, rng.generator().random(d))
    out = norm * np.sign(x) * level
    return _message(out, bits, f"nat_dither-s{s}")


def ternary_quantize(x, rng: RngStream) -> CompressedMessage:
    """Coordinate i becomes ||x||_2 * sign(x_i) with probability |x_i|/||x||_2."""
    x = as_vector(x)
    d = x.size
    bits = 31.0 + d * math.log2(3)
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return _message(np.zeros(d), bits, "ternary")
    p = np.abs(x) / norm
    keep = rng.generator().random(d) < p
    out = np.where(keep, norm * np.sign(x), 0.0)
    return _message(out, bits, "ternary")


def scaled_sign(x) -> CompressedMessage:
    """Deterministic (||x||_1 / d) * sign(x); nonnegative entries count as +."""
    x = as_vector(x)
    d = x.size
    bits = 31.0 + d
    if not np.any(x):
        return _message(np.zeros(d), bits, "scaled_sign")
    mag = np.abs(x).sum() / d
    out = mag * np.where(x >= 0, 1.0, -1.0)
    return _message(out, bits, "scaled_sign")


# --- operator objects --------------------------------------------------------


class Operator:
    """Uniform interface over the compression schemes.

    `compress` produces one message; `decode_batch` produces `trials` decoded
    draws at once (rows), which is what the Monte-Carlo harnesses consume.
    Both are pure given the RngStream.
    """

    def __init__(self, spec: CompressorSpec, d: int):
        self.spec = spec
        self.d = d
        self.bits = theoretical_bits(spec, d)
        self.tag = spec.tag

    def compress(self, x, rng: RngStream) -> CompressedMessage:
        raise NotImplementedError

    def compress_many(self, X, streams) -> list:
        """Compress several vectors at once (one message and stream each).

        Semantically a loop over `compress`; operators with expensive
        per-vector preparation (Kashin) override this with a batched path.
        """
        return [self.compress(x, s) for x, s in zip(np.atleast_2d(X), streams)]

    def decode_batch(self, x, trials: int, rng: RngStream) -> np.ndarray:
        x = as_vector(x)
        out = np.empty((trials, self.d))
        for t in range(trials):
            from .core import decode

            out[t] = decode(self.compress(x, rng.child(t)))
        return out

    def decode_batch_sweep(self, X, trials: int, stream_fn):
        """Yield one (trials, d) decoded block per row of X.

        stream_fn(j) must return the RngStream for row j.  Default defers to
        decode_batch row by row; Kashin overrides to share the batched
        representation step across rows.
        """
        for j, x in enumerate(np.atleast_2d(X)):
            yield self.decode_batch(x, trials, stream_fn(j))

    def stepsize_omega(self) -> float:
        """Variance parameter used by the default compressed-GD stepsize rule."""
        return theoretical_omega(self.spec, self.d)


class BaselineOperator(Operator):
    def compress(self, x, rng: RngStream) -> CompressedMessage:
        kind = self.spec.kind
        if kind == "identity":
            return _message(as_vector(x).copy(), self.bits, "identity")
        if kind == "randk":
            return random_sparsification(x, self.spec.k, rng)
        if kind == "topk":
            return topk(x, self.spec.k)
        if kind == "std_dither":
            return standard_dithering(x, self.spec.s, rng)
        if kind == "nat_dither":
            return natural_dithering(x, self.spec.s, rng)
        if kind == "ternary":
            return ternary_quantize(x, rng)
        if kind == "scaled_sign":
            return scaled_sign(x)
        raise ParameterError(f"unsupported kind {kind}")

    def decode_batch(self, x, trials: int, rng: RngStream) -> np.ndarray:
        x = as_vector(x)
        d = self.d
        kind = self.spec.kind
        gen = rng.generator()
        if kind == "identity":
            return np.tile(x, (trials, 1))
        if kind in ("topk", "scaled_sign"):
            from .core import decode

            return np.tile(decode(self.compress(x, rng)), (trials, 1))
        if kind == "randk":
            k = self.spec.k
            ranks = gen.random((trials, d)).argpartition(k - 1, axis=1)[:, :k]
            out = np.zeros((trials, d))
            rows = np.arange(trials)[:, None]
            out[rows, ranks] = x[ranks] * (d / k)
            return out
        norm = np.linalg.norm(x)
        if norm == 0.0:
            return np.zeros((trials, d))
        t = np.abs(x) / norm
        sgn = norm * np.sign(x)
        if kind == "ternary":
            return np.where(gen.random((trials, d)) < t, sgn, 0.0)
        if kind == "std_dither":
            s = self.spec.s
            lo = np.floor(t * s) / s
            hi = np.minimum(lo + 1.0 / s, 1.0)
            hi = np.maximum(hi, t)
        elif kind == "nat_dither":
            lo, hi = _nat_levels(t, self.spec.s)
        else:
            raise ParameterError(f"unsupported kind {kind}")
        u = gen.random((trials, d))
        level = _round_to_grid(t[None, :], lo[None, :], hi[None, :], u)
        return sgn * level


class ScaledOperator(Operator):
    """Lemma-1 contraction wrapper: decode is multiplied by 1/(omega+1)."""

    def __init__(self, base: Operator):
        spec = scale_to_contractive(base.spec) if not base.spec.scaled else base.spec
        super().__init__(replace(spec, scaled=False), base.d)
        self.spec = spec
        self.tag = spec.tag
        self.base = base
        self.factor = 1.0 / (base.stepsize_omega() + 1.0)

    def _wrap(self, msg: CompressedMessage) -> CompressedMessage:
        factor = self.factor
        inner_decoder = msg.decoder

        def _scaled_decode(payload, _f=factor, _dec=inner_decoder):
            return _f * np.asarray(_dec(payload))

        return CompressedMessage(
            payload=msg.payload, bits=msg.bits, origin_dim=msg.origin_dim,
            scheme_tag=self.tag, decoder=_scaled_decode,
        )

    def compress(self, x, rng: RngStream) -> CompressedMessage:
        return self._wrap(self.base.compress(x, rng))

    def compress_many(self, X, streams) -> list:
        return [self._wrap(m) for m in self.base.compress_many(X, streams)]

    def decode_batch(self, x, trials: int, rng: RngStream) -> np.ndarray:
        return self.factor * self.base.decode_batch(x, trials, rng)

    def decode_batch_sweep(self, X, trials: int, stream_fn):
        for dec in self.base.decode_batch_sweep(X, trials, stream_fn):
            yield self.factor * dec

    def stepsize_omega(self) -> float:
        raise ParameterError("scaled operators are biased; no omega")


def build_operator(spec: CompressorSpec, d: int, setup_rng: RngStream) -> Operator:
    """Instantiate an operator for dimension d.

    Kashin and polytope operators do their one-off construction work here
    (frame generation, RIP estimation, vertex placement) driven by setup_rng.
    """
    if spec.kind == "kashin":
        from .kashin import KashinOperator

        base = KashinOperator(spec, d, setup_rng)
    elif spec.kind == "polytope":
        from .polytope import PolytopeOperator

        base = PolytopeOperator(spec, d, setup_rng)
    else:
        base = BaselineOperator(replace(spec, scaled=False), d)
    if spec.scaled:
        return ScaledOperator(base)
    return base
