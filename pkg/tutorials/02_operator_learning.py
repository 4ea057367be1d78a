# Learning operators instead of functions: DeepONet on the antiderivative
# and an FNO on the periodic Helmholtz problem -u'' + u = a.
import numpy as np

from sciml.operatornet import deeponet as dn
from sciml.operatornet import fno
from sciml.optim import OptimizerState

sensors = np.linspace(0, 1, 32)
# held-out functions are scored on a shared grid
grid = np.linspace(0, 1, 101)
fine = np.linspace(0, 1, 1025)
funcs = dn.random_fourier_functions(120, K=5, seed=0, decay=2.0)
G = dn.antiderivative_oracle(funcs(fine), fine)[100:]
target = np.array([np.interp(grid, fine, g) for g in G])
data = dn.build_deeponet_dataset(funcs, dn.antiderivative_oracle, sensors, 120, 32, seed=1)
model = dn.init_deeponet(sensors, p=16, trunk_hidden=(40, 40), seed=2)

# too few input functions and the branch net just memorises them
for n_train in (20, 100):
    train = dn.DeepOnetDataset(data.A[:n_train], data.X[:n_train], data.U[:n_train])
    res = dn.deeponet_train(model, train, 2000, "lbfgs")
    pred = dn.deeponet_predict_grid(res.model, data.A[100:], grid[:, None])
    print("DeepONet, %3d training functions: loss %.2e, held-out relative L2 %.3f"
          % (n_train, res.history[-1][1], dn.relative_l2(pred, target)))

# FNO: 1D fields on a 64-point grid
a = fno.random_periodic_fields(60, 64, 8, seed=3)
u = fno.periodic_helmholtz_oracle(a)
A, U = a[:, :, None], u[:, :, None]
m = fno.init_fno(16, 2, (12, 0), seed=4)
out = fno.fno_train(m, A[:50], U[:50], 200, OptimizerState("adam", 1e-2))
print("FNO held-out relative L2: %.3f" % dn.relative_l2(fno.fno_forward(out.model, A[50:]), U[50:]))

# the learned kernel lives in Fourier space, so the same weights run on a finer
# grid; the held-out fields sampled at 128 points give the same answer
a128 = fno.random_periodic_fields(60, 128, 8, seed=3)[50:]
p128 = fno.fno_forward(out.model, a128[:, :, None])
p64 = fno.fno_forward(out.model, A[50:])
print("FNO on a 128-point grid: relative L2 %.3f" % dn.relative_l2(p128, fno.periodic_helmholtz_oracle(a128)[:, :, None]))
print("max difference at shared nodes: %.1e" % np.max(np.abs(p128[:, ::2] - p64)))
