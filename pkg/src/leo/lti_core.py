"""Core types and dense small-matrix numerics for discrete-time LTI systems.

Conventions used throughout the package:

* matrices are dense row-major ``numpy`` arrays of ``float64`` with explicit
  2-D shape; state/output/input samples are 1-D vectors,
* ``||.||_1`` is the vector 1-norm (sum of absolute values) and, for a
  matrix, the induced 1-norm (maximum absolute column sum),
* a horizon ``T`` means ``T`` transitions: ``T`` inputs, ``T + 1`` states and
  ``T + 1`` outputs (one measurement per visited state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import (
    GenerationError,
    NumericalError,
    ShapeError,
)

__all__ = [
    "LtiParams",
    "TrueSystem",
    "NoiseRealization",
    "Trajectory",
    "RngStream",
    "SystemGenConfig",
    "one_norm",
    "simulate_true",
    "observability_matrix",
    "is_observable",
    "spectral_radius",
    "is_schur",
    "pinv",
    "condition_number",
    "random_system",
    "matrix_to_json",
    "matrix_from_json",
]

# Relative singular-value cutoff for numerical rank decisions.
RANK_RTOL = 1e-9


def _as_matrix(M, rows: int | None = None, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    out = np.asarray(M, dtype=float)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    if rows is not None and out.shape[0] != rows:
        raise ShapeError(f"{name} must have {rows} rows, got {out.shape[0]}")
    if cols is not None and out.shape[1] != cols:
        raise ShapeError(f"{name} must have {cols} columns, got {out.shape[1]}")
    if not np.all(np.isfinite(out)):
        raise ShapeError(f"{name} contains non-finite entries")
    return out


def _as_vector(v, size: int | None = None, name: str = "vector") -> np.ndarray:
    out = np.asarray(v, dtype=float).reshape(-1)
    if size is not None and out.size != size:
        raise ShapeError(f"{name} must have {size} entries, got {out.size}")
    if not np.all(np.isfinite(out)):
        raise ShapeError(f"{name} contains non-finite entries")
    return out


def one_norm(M: np.ndarray) -> float:
    """1-norm: sum of absolute values for vectors, max column sum for matrices."""
    M = np.asarray(M, dtype=float)
    if M.ndim <= 1:
        return float(np.abs(M).sum())
    if M.size == 0:
        return 0.0
    return float(np.abs(M).sum(axis=0).max())


@dataclass(frozen=True)
class LtiParams:
    """System matrix triple (A, B, C) of a discrete-time LTI model.

    ``A`` is n x n, ``B`` is n x p with p <= n, ``C`` is q x n with q >= 1.
    The same type represents real, nominal and learned models.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise ShapeError(f"A must be square, got {A.shape}")
        B = _as_matrix(self.B, rows=n, name="B")
        C = _as_matrix(self.C, cols=n, name="C")
        if B.shape[1] > n:
            raise ShapeError(f"input dimension p={B.shape[1]} exceeds n={n}")
        if C.shape[0] < 1:
            raise ShapeError("C must have at least one row")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(n, p, q): state, input and output dimensions."""
        return self.A.shape[0], self.B.shape[1], self.C.shape[0]

    def to_json(self) -> dict:
        return {
            "A": matrix_to_json(self.A),
            "B": matrix_to_json(self.B),
            "C": matrix_to_json(self.C),
        }

    @staticmethod
    def from_json(obj: dict) -> "LtiParams":
        return LtiParams(
            A=matrix_from_json(obj["A"]),
            B=matrix_from_json(obj["B"]),
            C=matrix_from_json(obj["C"]),
        )


@dataclass(frozen=True)
class TrueSystem:
    """Ground truth of one trial: real matrices, their perturbations, and x0.

    The nominal model available to the designer is the real model minus the
    perturbations; ``nominal()`` returns it.
    """

    real: LtiParams
    delta_A: np.ndarray
    delta_B: np.ndarray
    delta_C: np.ndarray
    x0_real: np.ndarray

    def __post_init__(self):
        n, p, q = self.real.dims
        object.__setattr__(self, "delta_A", _as_matrix(self.delta_A, n, n, "delta_A"))
        object.__setattr__(self, "delta_B", _as_matrix(self.delta_B, n, p, "delta_B"))
        object.__setattr__(self, "delta_C", _as_matrix(self.delta_C, q, n, "delta_C"))
        object.__setattr__(self, "x0_real", _as_vector(self.x0_real, n, "x0_real"))

    def nominal(self) -> LtiParams:
        """Perturbed matrices the designer actually has access to."""
        return LtiParams(
            A=self.real.A - self.delta_A,
            B=self.real.B - self.delta_B,
            C=self.real.C - self.delta_C,
        )


@dataclass(frozen=True)
class NoiseRealization:
    """Process noise w (one n-vector per transition) and measurement noise v
    (one q-vector per measured state, so one more sample than ``w``)."""

    w: np.ndarray  # (T, n)
    v: np.ndarray  # (T + 1, q)

    def __post_init__(self):
        w = _as_matrix(self.w, name="w")
        v = _as_matrix(self.v, name="v")
        if v.shape[0] != w.shape[0] + 1:
            raise ShapeError(
                f"v must have one more sample than w, got {v.shape[0]} vs {w.shape[0]}"
            )
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)

    @property
    def horizon(self) -> int:
        return self.w.shape[0]

    @staticmethod
    def zero(T: int, n: int, q: int) -> "NoiseRealization":
        return NoiseRealization(w=np.zeros((T, n)), v=np.zeros((T + 1, q)))


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed inputs, states and outputs of one rollout.

    ``inputs`` has T rows (k = 0..T-1); ``states`` and ``outputs`` have T + 1
    rows (k = 0..T).
    """

    inputs: np.ndarray   # (T, p)
    states: np.ndarray   # (T + 1, n)
    outputs: np.ndarray  # (T + 1, q)

    def __post_init__(self):
        inputs = _as_matrix(self.inputs, name="inputs")
        states = _as_matrix(self.states, name="states")
        outputs = _as_matrix(self.outputs, name="outputs")
        if states.shape[0] != inputs.shape[0] + 1:
            raise ShapeError("states must have exactly one more row than inputs")
        if outputs.shape[0] != states.shape[0]:
            raise ShapeError("outputs must have one row per state")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "outputs", outputs)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class RngStream:
    """Splittable, counter-based random stream.

    The same (seed, path) always yields the same sample sequence, and
    ``substream`` derives statistically independent child streams, so
    concurrent trial workers never share generator state.
    """

    seed: int
    path: tuple[int, ...] = field(default=())

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, *indices: int) -> "RngStream":
        return replace(self, path=self.path + tuple(int(i) for i in indices))


def _generator_from(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


def simulate_true(
    sys: TrueSystem,
    inputs: np.ndarray,
    noise: NoiseRealization,
    horizon: int | None = None,
) -> Trajectory:
    """Roll the real (noisy) system forward from its true initial state.

    x_{k+1} = A_real x_k + B_real u_k + w_k and y_k = C_real x_k + v_k.
    ``noise`` may be longer than the horizon; extra samples are ignored.
    """
    n, p, q = sys.real.dims
    inputs = _as_matrix(inputs, cols=p, name="inputs")
    T = inputs.shape[0] if horizon is None else int(horizon)
    if inputs.shape[0] < T:
        raise ShapeError(f"need {T} inputs, got {inputs.shape[0]}")
    if noise.w.shape[0] < T or noise.v.shape[0] < T + 1:
        raise ShapeError("noise realization shorter than the simulation horizon")
    if noise.w.shape[1] != n or noise.v.shape[1] != q:
        raise ShapeError("noise dimensions do not match the system")

    A, B, C = sys.real.A, sys.real.B, sys.real.C
    states = np.empty((T + 1, n))
    outputs = np.empty((T + 1, q))
    states[0] = sys.x0_real
    for k in range(T):
        outputs[k] = C @ states[k] + noise.v[k]
        states[k + 1] = A @ states[k] + B @ inputs[k] + noise.w[k]
    outputs[T] = C @ states[T] + noise.v[T]
    return Trajectory(inputs=inputs[:T], states=states, outputs=outputs)


def observability_matrix(A: np.ndarray, C: np.ndarray, N: int) -> np.ndarray:
    """Vertical stack of C A^j for j = 0..N-1 (shape Nq x n)."""
    A = _as_matrix(A, name="A")
    C = _as_matrix(C, cols=A.shape[0], name="C")
    if N < 1:
        raise ValueError("N must be >= 1")
    blocks = []
    block = C
    for _ in range(N):
        blocks.append(block)
        block = block @ A
    return np.vstack(blocks)


def is_observable(A: np.ndarray, C: np.ndarray) -> bool:
    """True iff the N = n observability stack has full column rank.

    Rank uses the singular-value cutoff ``RANK_RTOL * sigma_max``.
    """
    A = _as_matrix(A, name="A")
    n = A.shape[0]
    O = observability_matrix(A, C, n)
    s = np.linalg.svd(O, compute_uv=False)
    if s[0] == 0.0:
        return False
    return bool(np.sum(s > RANK_RTOL * s[0]) == n)


def spectral_radius(A: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    A = _as_matrix(A, name="A")
    if A.shape[0] != A.shape[1]:
        raise ShapeError("spectral radius requires a square matrix")
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - hard to trigger
        raise NumericalError(f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(np.abs(eig))) if eig.size else 0.0


def is_schur(A: np.ndarray) -> bool:
    """True iff every eigenvalue lies strictly inside the unit disk."""
    return spectral_radius(A) < 1.0


def pinv(M: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD with a relative cutoff.

    Singular values below ``rcond * sigma_max`` are treated as zero. The
    result satisfies the four Penrose conditions to ~1e-10 for well-scaled
    input.
    """
    M = _as_matrix(M, name="M")
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalError(f"SVD failed to converge: {exc}") from exc
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((M.shape[1], M.shape[0]))
    keep = s > rcond * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (Vt.T * inv_s) @ U.T


def condition_number(M: np.ndarray) -> float:
    """sigma_max / sigma_min; +inf when the matrix is numerically singular."""
    M = _as_matrix(M, name="M")
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("condition number of a zero matrix is undefined")
    smin = s[-1]
    if smin < s[0] * 1e-16:
        return math.inf
    return float(s[0] / smin)


@dataclass(frozen=True)
class SystemGenConfig:
    """Knobs for random system generation.

    ``target_radius`` fixes the spectral radius of every generated A so all
    trials face comparable dynamics; perturbations are elementwise Gaussian.
    """

    target_radius: float = 0.9
    perturbation_std: float = 0.05
    x0_std: float = 1.0
    max_resamples: int = 100


def random_system(
    n: int,
    p: int,
    q: int,
    rng,
    gen_config: SystemGenConfig | None = None,
) -> TrueSystem:
    """Draw a Schur-stable, observable random system plus its perturbations.

    A is sampled with standard normal entries and rescaled to the target
    spectral radius; B and C are resampled (up to ``max_resamples``) until
    (A, C) is observable. Perturbations delta_A/B/C are i.i.d.
    ``Normal(0, perturbation_std**2)`` per element and x0 is standard normal
    per component.
    """
    if not (1 <= p <= n):
        raise ValueError(f"need 1 <= p <= n, got p={p}, n={n}")
    if q < 1:
        raise ValueError("need q >= 1")
    cfg = gen_config or SystemGenConfig()
    gen = _generator_from(rng)

    A = gen.standard_normal((n, n))
    rho = spectral_radius(A)
    while rho < 1e-12:  # probability-zero degenerate draw
        A = gen.standard_normal((n, n))
        rho = spectral_radius(A)
    A = cfg.target_radius / rho * A

    for _ in range(cfg.max_resamples):
        B = gen.standard_normal((n, p))
        C = gen.standard_normal((q, n))
        if is_observable(A, C):
            break
    else:
        raise GenerationError(
            f"no observable (A, C) draw in {cfg.max_resamples} attempts at dims ({n},{p},{q})"
        )

    real = LtiParams(A=A, B=B, C=C)
    return TrueSystem(
        real=real,
        delta_A=gen.normal(0.0, cfg.perturbation_std, (n, n)),
        delta_B=gen.normal(0.0, cfg.perturbation_std, (n, p)),
        delta_C=gen.normal(0.0, cfg.perturbation_std, (q, n)),
        x0_real=gen.normal(0.0, cfg.x0_std, n),
    )


def matrix_to_json(M: np.ndarray) -> dict:
    """Serialize a matrix as {"rows", "cols", "data"} with row-major data."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    return {
        "rows": int(M.shape[0]),
        "cols": int(M.shape[1]),
        "data": [float(x) for x in M.reshape(-1)],
    }


def matrix_from_json(obj: dict) -> np.ndarray:
    rows, cols = int(obj["rows"]), int(obj["cols"])
    data = np.asarray(obj["data"], dtype=float)
    if data.size != rows * cols:
        raise ShapeError(
            f"matrix JSON declares {rows}x{cols} but carries {data.size} entries"
        )
    return data.reshape(rows, cols)
