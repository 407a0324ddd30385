"""A Gaussian pointer never fits entirely in a box.

The weight outside [-D, D] is erfc(D / (sqrt(2) delta)); it falls fast but is
never zero, and free evolution pushes weight out of any clipped support at once.
"""

from grwcount import pointer

grid = pointer.Grid.spanning(-62, 62, 1 / 8)
psi = pointer.gaussian_pointer(1.0, 0.0, grid, mass=1.0, hbar=1.0)
for D in (1, 3, 10, 30, 50):
    td = pointer.tail_decompose(psi, D)
    print(f"D = {D:2d} delta: N_out = {td.N_out.order_of_magnitude():>14}  ({td.method})")

coupling = pointer.MeasurementCoupling(gamma=1.0, omega1=-10.0, omega2=10.0, T=1.0)
print("\ntwo outcomes 20 delta apart:", pointer.distinguishability_report(coupling, 1.0))

small = pointer.Grid.spanning(-25, 25, 1 / 32)
clipped = pointer.clipped(pointer.gaussian_pointer(1.0, 0.0, small, 1.0, 1.0), -3, 3)
for t in (0.0, 1e-3, 1e-2, 1e-1):
    out = clipped if t == 0 else pointer.evolve_free(clipped, t)
    print(f"t = {t:<6}: weight outside [-3, 3] = {pointer.grid_leakage(out, -3, 3):.3e}")
