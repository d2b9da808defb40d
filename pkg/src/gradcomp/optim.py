"""Synthetic quadratic problems and (distributed) compressed gradient descent."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import ParameterError, RngStream, as_vector, decode
from .compressors import CompressorSpec, Operator, build_operator

SUBOPT_TARGET = 1e-10
DIVERGENCE_LIMIT = 1e10


class DivergenceError(RuntimeError):
    """Raised when the suboptimality ratio exceeds the divergence limit.

    Carries the trajectory recorded so far in `trajectory`.
    """

    def __init__(self, trajectory: "Trajectory"):
        super().__init__(
            f"run diverged after {len(trajectory.iterates)} iterations"
        )
        self.trajectory = trajectory


@dataclass(frozen=True)
class QuadraticProblem:
    """f(x) = 1/2 x^T A x - b^T x with a controlled spectrum."""

    A: np.ndarray
    b_vec: np.ndarray
    x_star: np.ndarray
    f_star: float
    mu: float
    L: float

    @property
    def d(self) -> int:
        return self.b_vec.size

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    def value(self, x) -> float:
        x = np.asarray(x)
        return 0.5 * float(x @ (self.A @ x)) - float(self.b_vec @ x)

    def gradient(self, x) -> np.ndarray:
        return self.A @ x - self.b_vec


@dataclass(frozen=True)
class DistributedProblem:
    """Average of n homogeneous-free quadratics f_i(x) = 1/2 x^T A_i x."""

    locals_A: Tuple[np.ndarray, ...]
    A: np.ndarray
    mu: float
    L: float

    @property
    def n(self) -> int:
        return len(self.locals_A)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    # minimizer is the origin, f* = 0
    def value(self, x) -> float:
        x = np.asarray(x)
        return 0.5 * float(x @ (self.A @ x))

    def local_gradient(self, i: int, x) -> np.ndarray:
        return self.locals_A[i] @ x


@dataclass
class Trajectory:
    scheme_tag: str
    gamma: float
    iterates: List[Tuple[int, float, float]] = field(default_factory=list)

    def record(self, k: int, subopt: float, cum_bits: float) -> None:
        if self.iterates and cum_bits < self.iterates[-1][2]:
            raise ParameterError("cumulative bits must be nondecreasing")
        self.iterates.append((k, subopt, cum_bits))


def suboptimality_series(t: Trajectory) -> List[float]:
    if not t.iterates:
        raise ParameterError("empty trajectory")
    return [s for (_, s, _) in t.iterates]


def _random_spd(d: int, kappa: float, gen: np.random.Generator) -> np.ndarray:
    """Q diag(spectrum) Q^T with a log-uniform spectrum pinned to [1, kappa]."""
    if kappa < 1:
        raise ParameterError("kappa must be >= 1")
    spectrum = np.exp(gen.uniform(0.0, math.log(kappa) if kappa > 1 else 0.0, d))
    spectrum[0] = 1.0
    if d > 1:
        spectrum[1] = kappa
    G = gen.standard_normal((d, d))
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diag(R))
    return (Q * spectrum) @ Q.T


def generate_quadratic(d: int, kappa: float, rng: RngStream) -> QuadraticProblem:
    if d < 1:
        raise ParameterError("d must be >= 1")
    gen = rng.generator()
    A = _random_spd(d, kappa, gen)
    b = gen.standard_normal(d)
    x_star = np.linalg.solve(A, b)
    f_star = 0.5 * float(x_star @ (A @ x_star)) - float(b @ x_star)
    L = kappa if d > 1 else 1.0
    return QuadraticProblem(A=A, b_vec=b, x_star=x_star, f_star=f_star,
                            mu=1.0, L=float(L))


def generate_distributed_quadratic(n: int, d: int, kappa: float,
                                   rng: RngStream) -> DistributedProblem:
    """n local matrices from the single-node recipe, no linear terms, so the
    minimizer of the average is the origin with value 0."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    locals_A = tuple(_random_spd(d, kappa, rng.child(i).generator())
                     for i in range(n))
    A = np.mean(locals_A, axis=0)
    eigs = np.linalg.eigvalsh(A)
    return DistributedProblem(locals_A=locals_A, A=A,
                              mu=float(eigs[0]), L=float(eigs[-1]))


def default_stepsize(op: Operator, L: float, n: int = 1) -> float:
    """1/((1 + omega/n) L) for unbiased operators (variance averages over the
    n workers); (1 - alpha)/L for contractive ones."""
    if op.spec.is_unbiased:
        return 1.0 / ((1.0 + op.stepsize_omega() / n) * L)
    from .compressors import theoretical_alpha

    alpha = theoretical_alpha(op.spec, op.d)
    return (1.0 - alpha) / L


def _compressed_descent(value, gradients, n: int, d: int, op: Operator,
                        gamma: float, max_iter: int, rng: RngStream,
                        f_star: float, tag: str) -> Trajectory:
    if gamma <= 0:
        raise ParameterError("stepsize gamma must be positive")
    x = rng.child(1).generator().standard_normal(d)
    f0_gap = value(x) - f_star
    if f0_gap <= 0:
        raise ParameterError("starting point is already optimal")
    traj = Trajectory(scheme_tag=tag, gamma=gamma)
    traj.record(0, 1.0, 0.0)
    cum_bits = 0.0
    for k in range(1, max_iter + 1):
        round_stream = rng.child(2).child(k)
        grads = np.stack([gradients(i, x) for i in range(n)])
        msgs = op.compress_many(grads, [round_stream.child(i) for i in range(n)])
        step = np.zeros(d)
        for msg in msgs:
            step += decode(msg)
            cum_bits += msg.bits
        x = x - gamma * (step / n)
        subopt = (value(x) - f_star) / f0_gap
        traj.record(k, subopt, cum_bits)
        if subopt > DIVERGENCE_LIMIT or not math.isfinite(subopt):
            raise DivergenceError(traj)
        if subopt <= SUBOPT_TARGET:
            break
    return traj


def cgd_run(p: QuadraticProblem, spec: CompressorSpec, gamma: Optional[float],
            max_iter: int, rng: RngStream) -> Trajectory:
    """Single-node compressed gradient descent on f = 1/2 x^T A x - b^T x."""
    op = build_operator(spec, p.d, rng.child(0))
    if gamma is None:
        gamma = default_stepsize(op, p.L, n=1)
    return _compressed_descent(
        p.value, lambda _i, x: p.gradient(x), 1, p.d, op, gamma, max_iter,
        rng, p.f_star, op.tag,
    )


def dcgd_run(p: DistributedProblem, spec: CompressorSpec,
             gamma: Optional[float], max_iter: int,
             rng: RngStream) -> Trajectory:
    """Distributed compressed gradient descent: each of the n workers
    compresses its local gradient with an independent stream, the server
    averages the decoded messages and takes the step."""
    op = build_operator(spec, p.d, rng.child(0))
    if gamma is None:
        gamma = default_stepsize(op, p.L, n=p.n)
    return _compressed_descent(
        p.value, p.local_gradient, p.n, p.d, op, gamma, max_iter, rng,
        0.0, op.tag,
    )
