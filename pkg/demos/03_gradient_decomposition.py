"""Split the CE input gradient into a true-class term and a false-class sum.

The split is exact for any model. Dropping the true-class term is only a
good approximation when the true class is saturated and its prototype
contributes little, which we build by hand below.
"""

# %%
import numpy as np

from spat import NetConfig, init_params
from spat.analysis import lemma1_residual

rng = np.random.default_rng(0)
cfg = NetConfig((8, 12, 6, 4), activation="tanh")
x = rng.uniform(size=(50, 8))

# %%
rep = lemma1_residual(init_params(cfg, 0), cfg, x, rng.integers(0, 4, size=50))
print(f"random model: identity residual {rep.identity_relative.max():.1e}, "
      f"drop-true-term residual {np.median(rep.relative_residual):.2f}")

# %%
# shrink w_2 and push its bias up: sigma_2 -> 1 while w_2 barely moves the gradient
p = init_params(cfg, 0)
p.head_W[:, 2] *= 1e-3
p.head_bias[2] = 12.0
rep = lemma1_residual(p, cfg, x, 2)
print(f"saturated head: sigma_true >= {rep.sigma_true.min():.5f}, "
      f"drop-true-term residual {rep.relative_residual.max():.1e}")

# %%
# saturating through the bias alone is not enough: both terms shrink like (1 - sigma)
q = init_params(cfg, 0)
q.head_bias[2] = 12.0
rep = lemma1_residual(q, cfg, x, 2)
print(f"bias only: sigma_true >= {rep.sigma_true.min():.5f}, residual {np.median(rep.relative_residual):.2f}")
