# %% [markdown]
# Fitting a gamma regression and looking at three kinds of residuals.

# %%
import numpy as np

from glmresid import ModelSpec, irls_fit, residual_set

rng = np.random.default_rng(7)
n = 20
X = np.column_stack([np.ones(n), rng.uniform(size=(n, 2))])
mu = np.exp(X @ [0.5, 1.0, -1.0])
y = rng.gamma(4.0, mu / 4.0)  # phi = 4, so Var(y) = mu^2 / 4

# %%
fit = irls_fit(ModelSpec("gamma", "log", X), y)
print("beta_hat ", fit.beta_hat.round(4))
print("bias     ", fit.bias_beta.round(4))
print("phi_hat  ", round(fit.phi_hat, 3), "after", fit.iterations, "iterations")

# %% [markdown]
# Leverages z_ii drive the size of the correction. The largest ones move most.

# %%
rs = residual_set(fit)
order = np.argsort(fit.z_diag)[::-1][:5]
print(" obs    z_ii  pearson  corrected  adjusted")
for i in order:
    print(f"{i + 1:4d}  {fit.z_diag[i]:.3f}  {rs.pearson[i]:7.4f}  {rs.corrected[i]:9.4f}  {rs.adjusted[i]:8.4f}")

# %%
# gamma with log link has unit weights, so trace(Z) = trace(H) = p
print("sum z_ii =", fit.z_diag.sum().round(6))
