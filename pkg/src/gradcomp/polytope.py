"""Unit-sphere polytope compression at small dimension.

A direction is encoded as a random vertex of a polytope circumscribing the
unit sphere (vertex index costs log2(m) bits, the magnitude 31 bits); the
variance of the resulting unbiased estimator is R^2 - 1 where R is the
vertex radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear
from scipy.spatial import ConvexHull

from .core import CompressedMessage, ParameterError, RngStream, as_vector
from .compressors import CompressorSpec, Operator

MAX_DIM = 16
MAX_VERTICES = 2**16


class HullError(RuntimeError):
    """Polytope construction or weight solving failed to contain the probe."""


@dataclass(frozen=True)
class PolytopeFrame:
    vertices: np.ndarray  # m x d, all rows of norm R
    m: int
    R: float
    d: int


def _spread_directions(d: int, m: int, gen: np.random.Generator,
                       iters: int = 300, lr: float = 0.1) -> np.ndarray:
    """Repulsion heuristic: push m unit vectors apart on the sphere."""
    V = gen.standard_normal((m, d))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    for _ in range(iters):
        diff = V[:, None, :] - V[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        np.fill_diagonal(dist, np.inf)
        force = (diff / dist[:, :, None] ** 3).sum(axis=1)
        V = V + lr * force
        V /= np.linalg.norm(V, axis=1, keepdims=True)
    return V


def build_polytope(d: int, m: int, rng: RngStream) -> PolytopeFrame:
    """Circumscribe the unit sphere: regular m-gon at d=2, repulsion-spread
    directions scaled by the smallest radius passing the containment probes
    at d >= 3."""
    if not 2 <= d <= MAX_DIM:
        raise ParameterError(f"polytope compression supports 2 <= d <= {MAX_DIM}")
    if not 2 * d <= m <= MAX_VERTICES:
        raise ParameterError(f"need 2d <= m <= {MAX_VERTICES} vertices")
    if d == 2:
        R = 1.0 / math.cos(math.pi / m)
        angles = 2 * math.pi * np.arange(m) / m
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return PolytopeFrame(vertices=R * dirs, m=m, R=R, d=2)
    gen = rng.generator()
    dirs = _spread_directions(d, m, gen)
    # Exact inradius of hull(dirs) from the facet offsets; scaling by its
    # reciprocal makes every unit vector an interior point of the hull.
    hull = ConvexHull(dirs)
    inradius = float(-hull.equations[:, -1].max())
    if inradius <= 0:
        raise HullError("origin is not interior to the direction hull")
    R = (1.0 + 1e-9) / inradius
    frame = PolytopeFrame(vertices=R * dirs, m=m, R=R, d=d)
    probes = gen.standard_normal((50, d))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    for v in probes:
        convex_weights(frame, v)  # raises if containment fails
    return frame


def convex_weights(frame: PolytopeFrame, v) -> np.ndarray:
    """Simplex weights w with sum_k w_k * vertex_k = v for a unit vector v.

    Solved as nonnegative least squares (BVLS) on the system augmented with
    the sum-to-one row; residual above 1e-6 signals v outside the hull.
    """
    v = as_vector(v)
    if v.size != frame.d:
        raise ParameterError(f"probe length {v.size} != polytope dimension {frame.d}")
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ParameterError("convex_weights expects a unit vector")
    scale = 10.0  # weight of the sum-to-one constraint row
    A = np.vstack([frame.vertices.T, scale * np.ones(frame.m)])
    b = np.concatenate([v, [scale]])
    w = lsq_linear(A, b, bounds=(0, np.inf), method="bvls", tol=1e-14).x
    total = w.sum()
    if total <= 0:
        raise HullError("degenerate weight solution")
    w = w / total
    resid = np.linalg.norm(frame.vertices.T @ w - v)
    if resid > 1e-6:
        raise HullError(f"reconstruction residual {resid:.2e} > 1e-6; "
                        "unit vector outside the hull")
    return w


def polytope_compress(x, frame: PolytopeFrame, rng: RngStream) -> CompressedMessage:
    """Sample a vertex with the convex-combination probabilities of x's
    direction; decode is ||x||_2 times the sampled vertex."""
    x = as_vector(x)
    bits = 31.0 + math.log2(frame.m)
    tag = f"polytope-m{frame.m}"
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return CompressedMessage(payload=np.zeros(x.size), bits=bits,
                                 origin_dim=x.size, scheme_tag=tag,
                                 decoder=lambda p: p)
    w = convex_weights(frame, x / norm)
    idx = int(rng.generator().choice(frame.m, p=w))
    V = frame.vertices

    def _decode(payload, _V=V):
        i, n = payload
        return n * _V[i]

    return CompressedMessage(payload=(idx, norm), bits=bits, origin_dim=x.size,
                             scheme_tag=tag, decoder=_decode)


class PolytopeOperator(Operator):
    def __init__(self, spec: CompressorSpec, d: int, setup_rng: RngStream):
        super().__init__(spec, d)
        self.frame = build_polytope(d, spec.m, setup_rng)

    def compress(self, x, rng: RngStream) -> CompressedMessage:
        return polytope_compress(x, self.frame, rng)

    def decode_batch(self, x, trials: int, rng: RngStream) -> np.ndarray:
        x = as_vector(x)
        norm = np.linalg.norm(x)
        if norm == 0.0:
            return np.zeros((trials, self.d))
        w = convex_weights(self.frame, x / norm)
        idx = rng.generator().choice(self.frame.m, size=trials, p=w)
        return norm * self.frame.vertices[idx]

    def stepsize_omega(self) -> float:
        return self.frame.R**2 - 1.0
