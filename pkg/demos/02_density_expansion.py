# %% [markdown]
# How far the small-sample density of a Pearson residual sits from the
# density of the true residual, observation by observation.

# %%
import numpy as np

from glmresid import ModelSpec, irls_fit
from glmresid.residuals import density_pearson
from glmresid.simulate import SimConfig, design_matrix

cfg = SimConfig()
X = design_matrix(cfg)
fit = irls_fit(ModelSpec("gamma", "log", X, phi=cfg.phi), np.exp(X @ np.array(cfg.beta)))
fam = fit.family

# %%
x = np.linspace(-0.9, 2.0, 8)
f_eps = fam.residual_pdf(x, 1.0, cfg.phi)
lo, hi = np.argmin(fit.z_diag), np.argmax(fit.z_diag)
print("     x   f_eps   f_R(low z)  f_R(high z)")
for row in zip(x, f_eps, density_pearson(fit, lo, x), density_pearson(fit, hi, x)):
    print("{:6.2f}  {:.4f}  {:10.4f}  {:11.4f}".format(*row))

# %% [markdown]
# The expansion is not a density everywhere: far in the right tail it dips
# below zero at high leverage. ``clamp=True`` truncates it at zero.

# %%
tail = fam.residual_ppf(np.array([0.99, 0.995, 0.999]), 1.0, cfg.phi)
print(density_pearson(fit, hi, tail))
print(density_pearson(fit, hi, tail, clamp=True))
