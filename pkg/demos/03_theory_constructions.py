"""The constructive results behind the approach, executed numerically.

Three small constructions justify estimating a slowly varying system with a
constant-coefficient observer:

1. any state window with full column rank is replayed exactly by a fitted
   constant model (local matching),
2. an invertible transition matrix lets you back-solve an initial condition
   that steers that model onto a prescribed state, and singular matrices can
   be nudged invertible within any tolerance,
3. two realizations that produce identical outputs cannot have initial
   states further apart than an explicit operator-norm bound, which is what
   anchoring the learned matrices to their starting values exploits.
"""

import numpy as np

from leo import (
    LtiParams,
    RngStream,
    back_solve_initial_state,
    fit_local_lti,
    initial_state_gap_bound,
    make_invertible,
    one_norm,
    random_system,
    stack_inputs,
)
from leo.local_lti import TrajectoryWindow

rng = RngStream(99)
gen = rng.generator()

# --- 1. local matching of a time-varying trajectory --------------------
n, N = 3, 3
A0, B0, C0 = gen.normal(0, 0.5, (n, n)), gen.normal(0, 1, (n, 1)), gen.normal(0, 1, (1, n))
x = gen.normal(0, 1, n)
states, ins, outs = [x], [], []
for _ in range(N):
    Ak = A0 + 0.05 * gen.standard_normal((n, n))  # the system drifts each step
    u = gen.normal(0, 1, 1)
    ins.append(u)
    outs.append(C0 @ states[-1])
    states.append(Ak @ states[-1] + B0 @ u)
window = TrajectoryWindow(
    X=np.column_stack(states[:N]),
    X_next=np.column_stack(states[1:]),
    U=np.column_stack(ins),
    Y=np.column_stack(outs),
)
fitted = fit_local_lti(window)
x_replay = window.X[:, 0].copy()
worst = 0.0
for j in range(N):
    worst = max(worst, np.abs(x_replay - window.X[:, j]).max())
    x_replay = fitted.A @ x_replay + fitted.B @ window.U[:, j]
print(f"1. fitted constant model replays the drifting window to {worst:.2e}")

# --- 2. invertibility nudge + back-solving the initial condition --------
singular = np.array([[1.0, 1.0], [1.0, 1.0]])
fixed = make_invertible(singular, delta=1e-3)
print(f"2. nudged a rank-1 matrix invertible, moving it only {one_norm(fixed - singular):.2e}")

# Back-solving runs the dynamics in reverse, so it wants a transition
# matrix that is comfortably invertible, not one sitting at the nudge
# tolerance: inverting a barely-invertible A across K steps amplifies
# rounding by (1/sigma_min)^K.
params = LtiParams(
    A=np.array([[0.7, 0.3], [-0.2, 0.6]]), B=gen.normal(0, 1, (2, 1)), C=np.eye(2)[:1]
)
target = np.array([0.3, -0.7])
K = 8
u_seq = gen.normal(0, 1, (K, 1))
x0 = back_solve_initial_state(params, u_seq, target, K)
x_fwd = x0.copy()
for k in range(K):
    x_fwd = params.A @ x_fwd + params.B @ u_seq[k]
print(f"   back-solved x0 = {x0.round(3)} reaches the target after {K} steps"
      f" to {np.abs(x_fwd - target).sum():.2e}")

# --- 3. the initial-state drift bound -----------------------------------
base = random_system(3, 2, 1, rng.substream(3))
Tmat = np.eye(3) + 0.2 * rng.substream(4).generator().standard_normal((3, 3))
T_inv = np.linalg.solve(Tmat, np.eye(3))
twin = LtiParams(A=Tmat @ base.real.A @ T_inv, B=Tmat @ base.real.B, C=base.real.C @ T_inv)
x1 = np.array([1.0, -0.5, 0.25])
x2 = Tmat @ x1  # the twin produces identical outputs from this state
U = rng.substream(5).generator().normal(0, 1, (3, 2))
bound = initial_state_gap_bound(base.real, twin, x2, stack_inputs(U, 3), 3)
gap = np.abs(x1 - x2).sum()
print(f"3. output-matched twin realizations: measured initial-state gap {gap:.4f}")
print(f"   certified upper bound {bound:.4f} (bound holds: {gap <= bound})")
print("   close parameters => small bound, which is why the training loss")
print("   anchors the learned matrices to their nominal values.")
