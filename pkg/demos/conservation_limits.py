"""A conserved quantity forbids perfect measurements of non-commuting observables.

A spin-1/2 S_x measured under conservation of total S_z cannot be ideal with
orthogonal outcome states.  A larger apparatus makes the defect smaller.
"""

from grwcount.way import model as wm
from grwcount.way import sweep

sx, _, sz = wm.spin_matrices(0.5)
print("||[S_z, S_x]|| =", wm.commutator_obstruction(sx, sz))

m = wm.controlled_shift_model(8)
res = max(wm.chain_identity_residual(m, a, b) for a in range(2) for b in range(2))
print("commuting case, chain identity residual:", res)

rows = sweep.nonideality_sweep([k / 2 for k in range(0, 9)], seed=1, restarts=8)
print("\n   j   <Gamma_A^2>   best eps")
for r in rows:
    print(f"{r.j:4.1f}  {r.gamma2_mean:11.4f}   {r.epsilon:.5f}")
print("log-log slope (diagnostic):", round(sweep.scaling_slope(rows), 2))
