# A ResNet is forward Euler with one parameter set per step. A neural ODE
# keeps one rhs network and lets the integrator take as many steps as needed.
import math

import numpy as np

from sciml import dynamics as dy
from sciml import nn
from sciml.optim import OptimizerState

cfg = nn.MlpConfig([3, 3, 3, 3, 3], "tanh", residual=True)
params = nn.init_params(cfg, 0)
print("ResNet vs Euler max deviation:", dy.resnet_ode_equivalence(cfg, params, dt=0.5))

# learn the time-1 flow of x' = x, i.e. x -> e x
X = np.linspace(-1, 1, 100)
res = dy.node_train(nn.MlpConfig([2, 16, 16, 1], "tanh"), X, math.e * X, dt=0.1,
                    optimizer=OptimizerState("adam", 1e-2), iterations=300, seed=0)
xt = np.linspace(-1, 1, 11)[:, None]
print("trained map at dt=0.1: relative error %.4f" % (np.linalg.norm(res.predict(xt) - math.e * xt) / np.linalg.norm(math.e * xt)))

# the same parameters integrated with a finer step
for dt in (0.05, 0.025):
    err = np.linalg.norm(res.predict(xt, dt) - math.e * xt) / np.linalg.norm(math.e * xt)
    print("  evaluated at dt=%.3f: relative error %.4f" % (dt, err))

# observed orders of the two integrators on the learned field
study = dy.refinement_study(res.system, np.array([0.5]), "euler", 0.1, levels=5)
print("euler orders", np.round(study["orders"], 2))
study = dy.refinement_study(res.system, np.array([0.5]), "rk4", 0.1, levels=4)
print("rk4 orders", np.round(study["orders"], 2))
