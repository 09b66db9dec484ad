"""Upper and lower rate functionals on one tilted Becker-Doring path.

The lower value is explicit once the tilt is known. The upper value is a
sup over test-function paths, estimated here on indicator functions of
the first four species with two time knots. For an f-tilt whose table
lives in that basis the two should nearly coincide.

Becker-Doring also admits different densities that give the same limit
equation; bd_eta_alternative builds one and we print both costs.
"""
import numpy as np

from knary import (
    COAG, FRAG, TestFunction, TiltFunction, bd_eta_alternative, bd_kernel, path_jump_integral, r_lower_given_eta,
    r_upper_estimate, solve_bd, tau_star, tilt_eta, tilt_f,
)

T = 0.5
kern = bd_kernel(1.0, 1.0, 200)
basis = [lambda x, s=s: (np.asarray(x) == s).astype(float) for s in range(1, 5)]

f = TestFunction.from_table([0.0, 0.3, -0.2, 0.1])
tk = tilt_f(kern, f)
pf = solve_bd(tk, {1: 1.0}, T, 30)
lo = r_lower_given_eta(pf, kern, tk.tilt).value
up = r_upper_estimate(pf, kern, basis, [0.0, T], restarts=2).value
print(f"f-tilt:      r_upper ~ {up:.6f}, r_lower = {lo:.6f}")

eta = TiltFunction.by_kind({COAG: 1.5, FRAG: 0.7})
pe = solve_bd(tilt_eta(kern, eta), {1: 1.0}, T, 30)
lo = r_lower_given_eta(pe, kern, eta).value
up = r_upper_estimate(pe, kern, basis, [0.0, T], restarts=2).value
print(f"by-kind:     r_upper ~ {up:.6f}, r_lower = {lo:.6f}")

for k in (2, 3):
    alt = bd_eta_alternative(eta, pe, k, kern)
    cost = path_jump_integral(pe, kern, alt.map(lambda e: tau_star(e - 1.0)))
    print(f"alternative density (k={k}): same path, cost {cost:.6f}")
