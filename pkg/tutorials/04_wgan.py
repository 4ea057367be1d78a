# Fit a 2D Gaussian with a Wasserstein GAN and a gradient penalty, then look at
# moments and at a few weak-convergence test functions.
import numpy as np

from sciml import generative as gn

target = gn.gaussian_sampler([1.0, 1.0], 0.25 * np.eye(2))
data = gn.sample(target, 512, 0)

model = gn.init_wgan(2, 2, (32, 32), (32, 32), K=5, lam=10.0, lr_d=1e-3, lr_g=1e-4, seed=1)
res = gn.train_wgan(model, data, epochs=2000, seed=0, optimizer="adam", schedule="linear")
print("status", res.status, "after %.1f s" % res.seconds)
print("last objective %.4f, penalty %.4f" % res.history[-1][1:])

G = gn.generate(res.model, 20_000, seed=2)
s = gn.empirical_stats(G)
print("generated mean", np.round(s["mean"], 3))
print("generated covariance\n", np.round(s["covariance"], 3))

rows = gn.weak_convergence_check(lambda n, r: gn.generate(res.model, n, int(r.integer(2**31))), target, n=20_000)
for name, g_mean, t_mean, gap, se, bound in rows:
    print("%-22s gap %.4f  (sampling s.e. %.4f)" % (name, gap, se))
