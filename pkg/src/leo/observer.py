"""Luenberger/open-loop observer rollouts, gain synthesis, and conditioning.

Gain synthesis places the eigenvalues of A - LC by the dual Sylvester
construction: pick a real block-diagonal F carrying the requested spectrum
and a random q x n matrix G, solve

    A^T X - X F = C^T G

for X through the equivalent Kronecker linear system, and read off
L = (G X^{-1})^T. This works for any output dimension, unlike
single-output Ackermann-style formulas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import (
    PolePlacementInfeasible,
    RankDeficientError,
    ShapeError,
    SynthesisFailureError,
)
from .lti_core import (
    LtiParams,
    Trajectory,
    condition_number,
    is_observable,
    matrix_from_json,
    matrix_to_json,
    observability_matrix,
    one_norm,
)

__all__ = [
    "ObserverGain",
    "CoordinateTransform",
    "default_observer_poles",
    "max_spectrum_deviation",
    "place_observer_poles",
    "run_luenberger",
    "run_open_loop",
    "conditioning_transform",
    "apply_transform",
    "invert_transform",
]

# Repeated requested poles are split apart by this much so the spectrum
# matrix F stays diagonalizable.
_MULTIPLICITY_SPREAD = 1e-4
_PLACEMENT_TOL = 1e-7
_MAX_G_ATTEMPTS = 10


@dataclass(frozen=True)
class ObserverGain:
    """Observer gain L together with the pole locations it was built for."""

    L: np.ndarray
    desired_poles: tuple[complex, ...]

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float)
        if L.ndim != 2:
            raise ShapeError(f"L must be 2-D, got shape {L.shape}")
        object.__setattr__(self, "L", L)
        object.__setattr__(
            self, "desired_poles", tuple(complex(z) for z in self.desired_poles)
        )

    def to_json(self) -> dict:
        return {
            "L": matrix_to_json(self.L),
            "desired_poles": [[z.real, z.imag] for z in self.desired_poles],
        }

    @staticmethod
    def from_json(obj: dict) -> "ObserverGain":
        return ObserverGain(
            L=matrix_from_json(obj["L"]),
            desired_poles=tuple(complex(re, im) for re, im in obj["desired_poles"]),
        )


@dataclass(frozen=True)
class CoordinateTransform:
    """Invertible change of state coordinates x -> T x."""

    T: np.ndarray
    T_inv: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.T, dtype=float)
        T_inv = np.asarray(self.T_inv, dtype=float)
        n = T.shape[0]
        if T.shape != (n, n) or T_inv.shape != (n, n):
            raise ShapeError("transform matrices must be square and same-sized")
        if one_norm(T @ T_inv - np.eye(n)) >= 1e-8:
            raise ShapeError("T_inv is not an inverse of T to the required accuracy")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "T_inv", T_inv)

    @staticmethod
    def identity(n: int) -> "CoordinateTransform":
        eye = np.eye(n)
        return CoordinateTransform(T=eye, T_inv=eye.copy())

    @staticmethod
    def from_matrix(T: np.ndarray) -> "CoordinateTransform":
        T = np.asarray(T, dtype=float)
        return CoordinateTransform(T=T, T_inv=np.linalg.solve(T, np.eye(T.shape[0])))

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.T, np.eye(self.T.shape[0])))

    def compose(self, inner: "CoordinateTransform") -> "CoordinateTransform":
        """Transform equivalent to applying ``inner`` first, then ``self``."""
        return CoordinateTransform(T=self.T @ inner.T, T_inv=inner.T_inv @ self.T_inv)


def default_observer_poles(n: int) -> np.ndarray:
    """n real poles evenly spaced on [0.1, 0.5]: stable and reasonably fast."""
    return np.linspace(0.1, 0.5, n)


def _group_poles(poles: np.ndarray) -> tuple[list[float], list[tuple[float, float]]]:
    """Split into real poles and (a, b) conjugate pairs a +- bi; validate closure."""
    reals: list[float] = []
    upper: list[complex] = []
    lower: list[complex] = []
    for z in poles:
        if abs(z.imag) < 1e-12:
            reals.append(float(z.real))
        elif z.imag > 0:
            upper.append(z)
        else:
            lower.append(z)
    if len(upper) != len(lower):
        raise ValueError("desired poles are not closed under conjugation")
    lower = sorted(lower, key=lambda z: (z.real, z.imag))
    pairs: list[tuple[float, float]] = []
    for z in sorted(upper, key=lambda z: (z.real, -z.imag)):
        mate = min(lower, key=lambda w: abs(w - z.conjugate()))
        if abs(mate - z.conjugate()) > 1e-9:
            raise ValueError("desired poles are not closed under conjugation")
        lower.remove(mate)
        pairs.append((float(z.real), float(abs(z.imag))))
    return sorted(reals), sorted(pairs)


def _spread_duplicates(values: list, shift_fn) -> list:
    """Apply growing +-shifts to repeated entries so all become distinct."""
    out = []
    for v in values:
        bumped, k = v, 0
        while any(_close(bumped, u) for u in out):
            k += 1
            sign = 1 if k % 2 else -1
            bumped = shift_fn(v, sign * ((k + 1) // 2) * _MULTIPLICITY_SPREAD)
        out.append(bumped)
    return out


def _close(a, b) -> bool:
    return abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)).max() < 1e-12


def _spectrum_block_diag(poles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real block-diagonal matrix realizing the poles, repeats nudged apart.

    Returns the matrix and its (possibly perturbed) eigenvalue multiset.
    """
    reals, pairs = _group_poles(poles)
    reals = _spread_duplicates(reals, lambda v, d: v + d)
    pairs = _spread_duplicates(pairs, lambda v, d: (v[0] + d, v[1]))
    n = len(poles)
    F = np.zeros((n, n))
    attained = []
    idx = 0
    for r in reals:
        F[idx, idx] = r
        attained.append(complex(r))
        idx += 1
    for a, b in pairs:
        F[idx : idx + 2, idx : idx + 2] = [[a, b], [-b, a]]
        attained += [complex(a, b), complex(a, -b)]
        idx += 2
    return F, np.asarray(attained)


def max_spectrum_deviation(attained: np.ndarray, requested: np.ndarray) -> float:
    """Largest pairwise distance under the best one-to-one eigenvalue matching."""
    cost = np.abs(attained[:, None] - requested[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def place_observer_poles(A: np.ndarray, C: np.ndarray, desired) -> ObserverGain:
    """Synthesize L so that eig(A - LC) equals the requested pole multiset.

    Parameters
    ----------
    A, C : arrays, n x n and q x n, forming an observable pair.
    desired : sequence of n pole locations, closed under conjugation,
        all strictly inside the unit disk.

    Raises
    ------
    PolePlacementInfeasible
        If (A, C) is unobservable; callers typically fall back to reusing a
        previously synthesized gain.
    SynthesisFailureError
        If every random G attempt leads to a singular or inaccurate solve.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    desired = np.asarray([complex(z) for z in desired])
    if desired.size != n:
        raise ShapeError(f"need exactly {n} desired poles, got {desired.size}")
    if np.any(np.abs(desired) >= 1.0):
        raise ValueError("all desired poles must lie strictly inside the unit disk")
    if not is_observable(A, C):
        raise PolePlacementInfeasible("pair (A, C) is not observable")

    eig_A = np.linalg.eigvals(A)
    if max_spectrum_deviation(eig_A, desired) < 1e-9:
        # The spectrum is already in place; the zero gain realizes it exactly.
        return ObserverGain(L=np.zeros((n, C.shape[0])), desired_poles=tuple(desired))

    F, targets = _spectrum_block_diag(desired)
    # Kronecker form of A^T X - X F = C^T G, with column-stacked vec(X).
    K = np.kron(np.eye(n), A.T) - np.kron(F.T, np.eye(n))
    rhs_left = C.T
    singular_operator = bool(np.linalg.matrix_rank(K) < n * n)

    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(889231)))
    best: tuple[float, np.ndarray] | None = None
    for _ in range(_MAX_G_ATTEMPTS):
        G = gen.standard_normal((C.shape[0], n))
        rhs = (rhs_left @ G).reshape(-1, order="F")
        if singular_operator:
            vecX = np.linalg.lstsq(K, rhs, rcond=None)[0]
        else:
            vecX = np.linalg.solve(K, rhs)
        X = vecX.reshape(n, n, order="F")
        sv = np.linalg.svd(X, compute_uv=False)
        if sv[0] == 0.0 or sv[-1] < 1e-10 * sv[0]:
            continue
        L = np.linalg.solve(X.T, G.T)
        deviation = max_spectrum_deviation(np.linalg.eigvals(A - L @ C), targets)
        if deviation < _PLACEMENT_TOL:
            return ObserverGain(L=L, desired_poles=tuple(desired))
        if best is None or deviation < best[0]:
            best = (deviation, L)
    raise SynthesisFailureError(
        f"pole placement did not converge in {_MAX_G_ATTEMPTS} attempts"
        + (f" (best deviation {best[0]:.3e})" if best else "")
    )


def _gain_matrix(gain) -> np.ndarray:
    if isinstance(gain, ObserverGain):
        return gain.L
    return np.asarray(gain, dtype=float)


def run_luenberger(
    params: LtiParams,
    gain,
    inputs: np.ndarray,
    measured_outputs: np.ndarray,
    x0_hat: np.ndarray,
    horizon: int | None = None,
) -> Trajectory:
    """Closed-loop observer rollout x^_{k+1} = A x^_k + B u_k + L (y_k - C x^_k).

    ``measured_outputs`` are the true system's measurements; the returned
    trajectory's outputs are the observer's own C x^_k.
    """
    n, p, q = params.dims
    L = _gain_matrix(gain)
    if L.shape != (n, q):
        raise ShapeError(f"gain must be {n}x{q}, got {L.shape}")
    inputs = np.asarray(inputs, dtype=float).reshape(-1, p)
    measured = np.asarray(measured_outputs, dtype=float).reshape(-1, q)
    T = inputs.shape[0] if horizon is None else int(horizon)
    if inputs.shape[0] < T or measured.shape[0] < T:
        raise ShapeError("inputs/measured outputs shorter than the horizon")
    x0_hat = np.asarray(x0_hat, dtype=float).reshape(n)

    A, B, C = params.A, params.B, params.C
    states = np.empty((T + 1, n))
    states[0] = x0_hat
    for k in range(T):
        innovation = measured[k] - C @ states[k]
        states[k + 1] = A @ states[k] + B @ inputs[k] + L @ innovation
    outputs = states @ C.T
    return Trajectory(inputs=inputs[:T], states=states, outputs=outputs)


def run_open_loop(
    params: LtiParams,
    inputs: np.ndarray,
    x0_hat: np.ndarray,
    horizon: int | None = None,
) -> Trajectory:
    """Pure predictor rollout (a Luenberger observer with zero gain)."""
    n, p, q = params.dims
    inputs = np.asarray(inputs, dtype=float).reshape(-1, p)
    T = inputs.shape[0] if horizon is None else int(horizon)
    dummy = np.zeros((T, q))
    return run_luenberger(params, np.zeros((n, q)), inputs, dummy, x0_hat, T)


def apply_transform(t: CoordinateTransform, params: LtiParams) -> LtiParams:
    """Realize the same input/output behavior in coordinates x' = T x."""
    return LtiParams(
        A=t.T @ params.A @ t.T_inv,
        B=t.T @ params.B,
        C=params.C @ t.T_inv,
    )


def invert_transform(t: CoordinateTransform, params: LtiParams) -> LtiParams:
    """Exact inverse of ``apply_transform``."""
    return LtiParams(
        A=t.T_inv @ params.A @ t.T,
        B=t.T_inv @ params.B,
        C=params.C @ t.T,
    )


def _obs_condition(params: LtiParams) -> tuple[np.ndarray, float]:
    n = params.dims[0]
    O = observability_matrix(params.A, params.C, n)
    return O, condition_number(O)


def conditioning_transform(
    params: LtiParams, threshold: float = 1e8
) -> tuple[CoordinateTransform, LtiParams]:
    """Change coordinates so the observability stack is better conditioned.

    Below the threshold the identity transform is returned unchanged. Above
    it, the primary candidate is the R factor of O = QR with rows scaled to
    unit norm (which maps the stack close to an orthonormal one); a plain R
    and a diagonal column equilibration serve as fallbacks. The selected
    transform is guaranteed not to increase the condition number.
    """
    n = params.dims[0]
    if not is_observable(params.A, params.C):
        raise RankDeficientError("cannot condition an unobservable realization")
    O, cond0 = _obs_condition(params)
    identity = CoordinateTransform.identity(n)
    if cond0 <= threshold:
        return identity, params

    candidates: list[np.ndarray] = []
    R = np.linalg.qr(O, mode="r")[:n, :n]
    r_diag = np.abs(np.diag(R))
    if r_diag.min() > 1e-12 * max(r_diag.max(), 1.0):
        row_norms = np.linalg.norm(R, axis=1)
        candidates.append(R / row_norms[:, None])
        candidates.append(R.copy())
    # Diagonal balancing: scale each state by its column norm in the stack.
    col_norms = np.linalg.norm(O, axis=0)
    if np.all(col_norms > 0):
        candidates.append(np.diag(col_norms))

    best: tuple[float, CoordinateTransform, LtiParams] | None = None
    for T in candidates:
        try:
            tf = CoordinateTransform.from_matrix(T)
            transformed = apply_transform(tf, params)
            cond = _obs_condition(transformed)[1]
        except (np.linalg.LinAlgError, ShapeError, ValueError):
            continue
        if cond < cond0 and (best is None or cond < best[0]):
            best = (cond, tf, transformed)
    if best is None:
        return identity, params
    return best[1], best[2]
