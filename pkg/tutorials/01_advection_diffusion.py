# Three ways to solve a u' - kappa u'' = 0, u(0) = 1, u(1) = 0:
# finite differences, Chebyshev collocation and a physics-informed network.
import numpy as np

from sciml import nn, optim, pinn
from sciml import pdesolve as pd

prob = pd.AdvDiffProblem(a=1.0, kappa=1.0, ell=1.0)
print("Peclet number:", prob.peclet)

# finite differences: halving h should cut the error by about 4
Ns = [16, 32, 64, 128]
errs = []
for N in Ns:
    g = pd.solve_fd(prob, N)
    errs.append(np.max(np.abs(g.u - pd.exact_adv_diff(prob, g.x))))
print("FD errors:", ["%.2e" % e for e in errs])
print("observed orders:", np.round(pd.convergence_order(errs, Ns), 3))

# Chebyshev collocation converges much faster on smooth solutions
x = np.linspace(0, 1, 101)
for N in (4, 8, 12, 20):
    sol = pd.solve_spectral(prob, N)
    print("spectral N=%2d  max error %.2e" % (N, np.max(np.abs(sol(x) - pd.exact_adv_diff(prob, x)))))

# the PINN needs thousands of Adam steps for the same problem
cfg = nn.MlpConfig([1, 20, 20, 20, 1], "tanh")
res = pinn.train_pinn(pinn.advdiff_problem(prob, 64, lam_b=10.0), cfg, optim.OptimizerState("adam", 1e-3), 2000, seed=0)
print("PINN after 2000 iterations: loss %.2e, relative L2 error %.2e" % (res.history[-1][1], res.rel_l2_error))

# a sharper boundary layer: Pe = 20
steep = pd.AdvDiffProblem(a=20.0, kappa=1.0)
for N in (16, 64):
    g = pd.solve_fd(steep, N)
    print("Pe=20 FD N=%3d  max error %.2e" % (N, np.max(np.abs(g.u - pd.exact_adv_diff(steep, g.x)))))
