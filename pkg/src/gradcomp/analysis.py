"""Empirical variance measurement and variance-vs-bits accounting.

The central inequality checked here: any compression with normalized
variance alpha and bit cost b in dimension d satisfies alpha * 4^(b/d) >= 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .core import ParameterError, RngStream, as_vector
from .compressors import CompressorSpec, Operator, build_operator

FLOAT_FORMAT_BITS = 32  # simulated scalar wire format for the adjusted check


@dataclass(frozen=True)
class VarianceBitsRecord:
    scheme_tag: str
    d: int
    vector_seed: int
    alpha_hat: float
    stderr: float
    bits: float
    bits_per_coord: float
    up_margin: float
    trials: int


def empirical_normalized_variance(op: Operator, x, trials: int,
                                  rng: RngStream,
                                  chunk: int = 2000) -> Tuple[float, float]:
    """Mean and Monte-Carlo standard error of ||C(x) - x||^2 / ||x||^2."""
    x = as_vector(x)
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    denom = float(x @ x)
    if denom == 0.0:
        raise ParameterError("variance is undefined for the zero vector")
    sums = 0.0
    sq_sums = 0.0
    done = 0
    part = 0
    while done < trials:
        c = min(chunk, trials - done)
        dec = op.decode_batch(x, c, rng.child(part))
        ratios = ((dec - x) ** 2).sum(axis=1) / denom
        sums += float(ratios.sum())
        sq_sums += float((ratios**2).sum())
        done += c
        part += 1
    mean = sums / trials
    var = max(sq_sums / trials - mean**2, 0.0)
    stderr = math.sqrt(var / trials)
    return mean, stderr


def empirical_alpha(spec: CompressorSpec, d: int, n_vectors: int, trials: int,
                    rng: RngStream) -> float:
    """Worst measured contraction factor over Gaussian test vectors.

    Unbiased operators are mapped through the omega -> omega/(omega+1)
    scaling; biased ones are measured directly.
    """
    op = build_operator(spec, d, rng.child(0))
    worst = 0.0
    for j in range(n_vectors):
        x = rng.child(1).child(j).generator().standard_normal(d)
        value, _ = _alpha_for_vector(op, x, trials, rng.child(2).child(j))
        worst = max(worst, value)
    return worst


def _alpha_for_vector(op: Operator, x, trials: int,
                      rng: RngStream) -> Tuple[float, float]:
    if op.spec.is_unbiased:
        omega_hat, se = empirical_normalized_variance(op, x, trials, rng)
        # d alpha/d omega = 1/(1+omega)^2: propagate the standard error
        return omega_hat / (omega_hat + 1.0), se / (1.0 + omega_hat) ** 2
    eff_trials = trials if _is_randomized(op.spec) else 1
    return empirical_normalized_variance(op, x, eff_trials, rng)


def _is_randomized(spec: CompressorSpec) -> bool:
    base = spec.kind
    if spec.scaled:
        return base not in ("identity", "topk", "scaled_sign")
    return base not in ("identity", "topk", "scaled_sign")


def up_check(alpha: float, bits: float, d: int) -> float:
    """Margin alpha * 4^(b/d) of the uncertainty principle; callers assert >= 1."""
    if not 0.0 <= alpha <= 1.0 + 1e-12:
        raise ParameterError("alpha must lie in [0, 1]")
    if bits < 0:
        raise ParameterError("bits must be nonnegative")
    return alpha * 4.0 ** (bits / d)


def up_check_adjusted(alpha: float, bits: float, d: int,
                      r: int = FLOAT_FORMAT_BITS) -> float:
    """Digital-format margin (alpha + 4^(-r)) * 4^(b/d) for r-bit scalars."""
    if r < 1:
        raise ParameterError("r must be >= 1")
    if bits < 0:
        raise ParameterError("bits must be nonnegative")
    return (alpha + 4.0 ** (-r)) * 4.0 ** (bits / d)


def variance_bits_sweep(specs: Sequence[CompressorSpec], d: int,
                        n_vectors: int, trials: int,
                        rng: RngStream) -> List[VarianceBitsRecord]:
    """One record per (operator, Gaussian test vector).

    Deterministic given rng: vector j always uses the same seed-derived
    draw, so reruns byte-reproduce the records.  Exact (zero-variance)
    configurations fall back to the adjusted digital-format margin.
    """
    if d < 2:
        raise ParameterError("sweep requires d >= 2")
    records: List[VarianceBitsRecord] = []
    X = np.stack([rng.child(1).child(j).generator().standard_normal(d)
                  for j in range(n_vectors)])
    for i, spec in enumerate(specs):
        op = build_operator(spec, d, rng.child(0).child(i))
        eff_trials = trials if _is_randomized(spec) else 1
        # stream layout identical to empirical_normalized_variance's first
        # chunk, so the batched sweep path reproduces the per-vector one
        stream_fn = lambda j, _i=i: rng.child(2).child(_i).child(j).child(0)
        decoded = op.decode_batch_sweep(X, eff_trials, stream_fn)
        for j, dec in enumerate(decoded):
            x = X[j]
            denom = float(x @ x)
            ratios = ((dec - x) ** 2).sum(axis=1) / denom
            mean = float(ratios.mean())
            var = max(float((ratios**2).mean()) - mean**2, 0.0)
            se = math.sqrt(var / eff_trials)
            if op.spec.is_unbiased:
                alpha_hat, se = mean / (mean + 1.0), se / (1.0 + mean) ** 2
            else:
                alpha_hat = mean
            bits = op.bits
            if alpha_hat > 0.0:
                margin = up_check(min(alpha_hat, 1.0), bits, d)
            else:
                margin = up_check_adjusted(0.0, bits, d)
            records.append(VarianceBitsRecord(
                scheme_tag=op.tag, d=d, vector_seed=j,
                alpha_hat=alpha_hat, stderr=se, bits=bits,
                bits_per_coord=bits / d, up_margin=margin, trials=eff_trials,
            ))
    return records
