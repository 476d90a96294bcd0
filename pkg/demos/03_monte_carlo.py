# %% [markdown]
# A shortened version of the gamma simulation study. Set
# ``replications=10_000`` for the full run (about 15 s).

# %%
import numpy as np

from glmresid.simulate import SimConfig, run_simulation

rep = run_simulation(SimConfig(replications=2000))
print(rep.n_ok, "fits,", len(rep.failures), "failures, phi_ref =", round(rep.phi_reference, 3))

# %%
mc, se = rep.bias_monte_carlo
print("bias of beta_hat  theory:", rep.bias_theory.round(4))
print("                  MC    :", mc.round(4), "+/-", se.round(4))

# %%
for kind in ("true", "pearson", "corrected", "adjusted"):
    m = rep.pooled_moments(kind)
    print(f"{kind:9s}  mean {m[0]:7.4f}  var {m[1]:.4f}  skew {m[2]:.3f}  kurt {m[3]:.3f}")

# %% [markdown]
# Distance from the estimated true-residual law, all observations pooled.

# %%
pooled = rep.gof_one_sample[0]
print("K-S", round(pooled["ks_pearson"], 4), "->", round(pooled["ks_corrected"], 4))
print("A-D", round(pooled["ad_pearson"], 2), "->", round(pooled["ad_corrected"], 2))

# %%
v = np.asarray(rep.moments["adjusted"].variance)
print("adjusted residual variance by observation:", v.round(3))
