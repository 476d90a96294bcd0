"""Maximum-likelihood fitting of GLMs by iteratively reweighted least squares.

Besides the coefficients the fit carries every by-product the residual
theory needs: weights ``w_i = mu_i'^2 / V_i``, the leverages ``z_ii`` of
``Z = X (X^T W X)^{-1} X^T``, and the ``O(n^{-1})`` biases of
``beta_hat`` and ``eta_hat``

    B(beta_hat) = -(2 phi)^{-1} (X^T W X)^{-1} X^T Z_d F 1,
    B(eta_hat)  = X B(beta_hat),

with ``F = diag{mu_i' mu_i'' / V_i}``.

Linear algebra goes through a thin QR factorisation of ``W^{1/2} X``, so
``X^T W X`` is never formed explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .exceptions import ConvergenceError, DomainError, NumericalError, RankDeficientError
from .family import Family, check_phi, get_family
from .link import Link, get_link

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A GLM: family, link, design matrix and (optionally known) precision.

    ``phi=None`` means the precision is unknown and will be estimated.
    """

    family: Family
    link: Link
    X: np.ndarray
    phi: float | None = None

    def __post_init__(self):
        fam = get_family(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "link", get_link(self.link, fam))
        X = np.array(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or not np.all(np.isfinite(X)):
            raise DomainError("design matrix must be a finite 2-d array")
        n, p = X.shape
        if not p < n:
            raise RankDeficientError(f"need p < n, got n={n}, p={p}")
        r = linalg.qr(X, mode="r", pivoting=True)[0]
        d = np.abs(np.diag(r))
        if d[0] == 0 or np.any(d < RANK_TOL * d[0]):
            raise RankDeficientError(
                f"design matrix is rank deficient (rank {int(np.sum(d >= RANK_TOL * d[0]))} < {p})"
            )
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if self.phi is not None:
            object.__setattr__(self, "phi", check_phi(self.phi))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class _Geometry:
    """Weighted design quantities at a fixed ``beta``."""

    eta: np.ndarray
    mu: np.ndarray
    dmu: np.ndarray
    d2mu: np.ndarray
    variance: np.ndarray
    weights: np.ndarray
    q: np.ndarray       # orthonormal factor of W^{1/2} X
    rinv: np.ndarray    # (X^T W X)^{-1} = rinv @ rinv.T
    z_diag: np.ndarray


def _geometry(spec, beta):
    eta = spec.X @ beta
    mu = spec.link.inverse(eta)
    fam = spec.family
    fam.check_mean(mu)
    dmu = spec.link.dmu(mu)
    d2mu = spec.link.d2mu(mu)
    V = fam.variance(mu)
    w = dmu**2 / V
    q, r = np.linalg.qr(np.sqrt(w)[:, None] * spec.X)
    rinv = linalg.solve_triangular(r, np.eye(spec.p))
    xr = spec.X @ rinv
    z = np.einsum("ij,ij->i", xr, xr)
    return _Geometry(eta, mu, dmu, d2mu, V, w, q, rinv, z)


def _bias_beta(spec, geo, phi):
    F = geo.dmu * geo.d2mu / geo.variance
    v = spec.X.T @ (geo.z_diag * F)
    return -(geo.rinv @ (geo.rinv.T @ v)) / (2.0 * phi)


def bias_at(spec, beta, phi=None):
    """``(B(beta_hat), B(eta_hat))`` evaluated at an arbitrary ``beta``.

    Used to compare the Monte Carlo bias of the MLE with the theoretical
    bias at the true parameters.
    """
    phi = check_phi(spec.phi if phi is None else phi)
    geo = _geometry(spec, np.asarray(beta, dtype=float))
    bb = _bias_beta(spec, geo, phi)
    return bb, spec.X @ bb


@dataclass(frozen=True, eq=False)
class FitResult:
    """Converged IRLS fit and its by-products (immutable)."""

    spec: ModelSpec
    y: np.ndarray
    beta_hat: np.ndarray
    eta_hat: np.ndarray
    mu_hat: np.ndarray
    weights: np.ndarray
    z_diag: np.ndarray
    bias_beta: np.ndarray
    bias_eta: np.ndarray
    phi_hat: float
    phi: float
    deviance: float
    score_norm: float
    iterations: int
    converged: bool
    deviance_history: tuple
    _geo: _Geometry = field(repr=False)

    @property
    def family(self):
        return self.spec.family

    @property
    def link(self):
        return self.spec.link

    @property
    def n(self):
        return self.spec.n

    @property
    def p(self):
        return self.spec.p

    @property
    def dmu(self):
        return self._geo.dmu

    @property
    def d2mu(self):
        return self._geo.d2mu

    @property
    def variance(self):
        return self._geo.variance

    @property
    def xtwx_inv(self):
        r = self._geo.rinv
        return r @ r.T

    @property
    def information(self):
        """Fisher information for ``beta``: ``K = phi X^T W X``."""
        X = self.spec.X
        return self.phi * (X.T * self.weights) @ X

    @property
    def Z(self):
        """``X (X^T W X)^{-1} X^T``."""
        xr = self.spec.X @ self._geo.rinv
        return xr @ xr.T

    @property
    def M(self):
        """``(X^T W X)^{-1} X^T``."""
        return self.xtwx_inv @ self.spec.X.T

    @property
    def H(self):
        """Weighted projection ``W^{1/2} X (X^T W X)^{-1} X^T W^{1/2}``."""
        q = self._geo.q
        return q @ q.T

    def with_phi(self, phi):
        """Copy of the fit whose bias terms use precision ``phi``."""
        phi = check_phi(phi)
        bb = _bias_beta(self.spec, self._geo, phi)
        return _replace(self, phi=phi, bias_beta=bb, bias_eta=self.spec.X @ bb)


def _replace(fit, **changes):
    kwargs = {f: getattr(fit, f) for f in fit.__dataclass_fields__}
    kwargs.update(changes)
    return FitResult(**kwargs)


def _initial_mean(spec, y):
    mu = y.astype(float).copy()
    if spec.family.positive_mean or spec.link.positive_mean:
        scale = np.mean(np.abs(y)) or 1.0
        mu = np.maximum(mu, 1e-8 * scale)
    return mu


def _deviance(spec, y, mu):
    return float(np.sum(spec.family.unit_deviance(y, mu)))


def _valid_step(spec, eta):
    if not np.all(spec.link.valid_eta(eta)):
        return None
    mu = spec.link.inverse(eta)
    if not np.all(np.isfinite(mu)):
        return None
    if spec.family.positive_mean and not np.all(mu > 0):
        return None
    return mu


def _score(spec, y, mu):
    """``X^T W^{1/2} V^{-1/2} (y - mu)`` (score divided by ``phi``)."""
    fam = spec.family
    g = spec.link.dmu(mu) / fam.variance(mu)
    return spec.X.T @ (g * (y - mu)), np.max(np.abs(spec.X.T @ np.abs(g * y)))


def _line_search(spec, y, beta, dev, direction, max_halvings):
    """Best of the steps ``beta + t d`` for ``t = 1, 1/2, 1/4, ...``.

    Halving continues while the deviance keeps falling, so an overshooting
    scoring step is damped instead of zigzagging.  If no step improves on
    ``dev`` the current iterate is kept.
    """
    best = (beta, spec.X @ beta, None, dev)
    t = 1.0
    for _ in range(max_halvings + 1):
        cand = beta + t * direction
        eta = spec.X @ cand
        mu = _valid_step(spec, eta)
        d = _deviance(spec, y, mu) if mu is not None else np.inf
        if d < best[3]:
            best = (cand, eta, mu, d)
        elif best[2] is not None:
            break
        t *= 0.5
    if best[2] is None:
        return beta, best[1], _valid_step(spec, best[1]), dev
    return best


def irls_fit(
    spec,
    y,
    *,
    phi_method="moment",
    max_iter=100,
    tol_deviance=1e-10,
    tol_score=1e-8,
    max_halvings=10,
):
    """Fit ``spec`` to ``y`` by IRLS with step halving.

    Converges when the relative deviance change is below ``tol_deviance``
    (relative to ``|deviance| + 0.1``) and the sup-norm of the score is
    below ``tol_score`` (scaled by the size of ``X^T |W^{1/2} V^{-1/2} y|``).

    Raises
    ------
    DomainError
        If ``y`` lies outside the family's observation domain.
    ConvergenceError
        If no convergence after ``max_iter`` iterations; ``err.last`` holds
        the last coefficient vector.
    """
    fam, lk, X = spec.family, spec.link, spec.X
    y = fam.check_response(np.asarray(y, dtype=float).ravel())
    if y.shape[0] != spec.n:
        raise DomainError(f"response has length {y.shape[0]}, design has {spec.n} rows")

    mu = _initial_mean(spec, y)
    eta = lk.link(mu)
    beta = None
    dev = np.inf
    converged = False
    score_norm = np.inf
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        dmu = lk.dmu(mu)
        sw = np.abs(dmu) / np.sqrt(fam.variance(mu))
        work = eta + (y - mu) / dmu
        q, r = np.linalg.qr(sw[:, None] * X)
        beta_new = linalg.solve_triangular(r, q.T @ (sw * work))
        eta_new = X @ beta_new
        mu_new = _valid_step(spec, eta_new)
        dev_new = _deviance(spec, y, mu_new) if mu_new is not None else np.inf
        if beta is None and mu_new is None:
            # no accepted iterate yet: pull eta back toward the current
            # (valid) predictor until the mean is admissible, then retry
            halvings = 0
            while mu_new is None and halvings < max_halvings:
                eta_new = 0.5 * (eta + eta_new)
                mu_new = _valid_step(spec, eta_new)
                halvings += 1
            if mu_new is not None:
                eta, mu = eta_new, mu_new
                continue
        elif beta is not None:
            beta_new, eta_new, mu_new, dev_new = _line_search(
                spec, y, beta, dev, beta_new - beta, max_halvings
            )
        if mu_new is None:
            raise ConvergenceError(
                f"IRLS step left the valid domain at iteration {it}", last=beta
            )
        change = abs(dev - dev_new) / (abs(dev_new) + 0.1) if np.isfinite(dev) else np.inf
        beta, eta, mu, dev = beta_new, eta_new, mu_new, dev_new
        history.append(dev)
        score, scale = _score(spec, y, mu)
        score_norm = float(np.max(np.abs(score)))
        if change < tol_deviance and score_norm < tol_score * max(1.0, scale):
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations", last=beta)

    geo = _geometry(spec, beta)
    try:
        phi_hat = _estimate_phi(spec, y, geo.mu, method=phi_method)
    except NumericalError:
        if spec.phi is None:
            raise
        phi_hat = np.inf
    phi = spec.phi if spec.phi is not None else phi_hat
    bb = _bias_beta(spec, geo, phi)
    return FitResult(
        spec=spec,
        y=y,
        beta_hat=beta,
        eta_hat=geo.eta,
        mu_hat=geo.mu,
        weights=geo.weights,
        z_diag=geo.z_diag,
        bias_beta=bb,
        bias_eta=X @ bb,
        phi_hat=phi_hat,
        phi=phi,
        deviance=dev,
        score_norm=score_norm,
        iterations=it,
        converged=True,
        deviance_history=tuple(history),
        _geo=geo,
    )


def hat_diagonal(fit):
    """Leverages ``z_ii`` of ``Z = X (X^T W X)^{-1} X^T``."""
    return fit.z_diag


def bias_beta(fit, phi=None):
    """``O(n^{-1})`` bias of ``beta_hat`` (uses ``fit.phi`` unless given)."""
    if phi is None:
        return fit.bias_beta
    return _bias_beta(fit.spec, fit._geo, check_phi(phi))


def bias_eta(fit, phi=None):
    """``O(n^{-1})`` bias of the linear predictor, ``X B(beta_hat)``."""
    return fit.spec.X @ bias_beta(fit, phi)


def _ml_gamma_phi(s):
    """Solve ``log(phi) - digamma(phi) = s`` by safeguarded Newton."""
    if not s > 0:
        raise NumericalError("gamma ML dispersion equation has no solution (zero deviance)")
    lo, hi = 0.0, np.inf
    phi = (6.0 + np.sqrt(36.0 + 48.0 * s)) / (24.0 * s)
    for _ in range(200):
        g = np.log(phi) - special.digamma(phi) - s
        if g > 0:
            lo = phi
        else:
            hi = phi
        dg = 1.0 / phi - special.polygamma(1, phi)
        step = phi - g / dg
        if not (lo < step < hi):
            step = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * phi
        if abs(step - phi) <= 1e-14 * phi:
            return float(step)
        phi = step
    return float(phi)


def _estimate_phi(spec, y, mu, method="moment"):
    fam = spec.family
    n, p = spec.n, spec.p
    if method == "moment":
        pearson = float(np.sum((y - mu) ** 2 / fam.variance(mu)))
        if not pearson > 0:
            raise NumericalError("Pearson statistic is zero (exact fit); cannot estimate phi")
        return (n - p) / pearson
    if method == "ml":
        if fam.token == "gamma":
            return _ml_gamma_phi(float(np.mean((y - mu) / mu - np.log(y / mu))))
        dev = _deviance(spec, y, mu)
        if not dev > 0:
            raise NumericalError("deviance is zero (exact fit); cannot estimate phi")
        return n / dev
    raise ValueError(f"unknown phi estimator {method!r}; expected 'moment' or 'ml'")


def estimate_phi(fit, y=None, method="moment"):
    """Estimate the precision ``phi`` at the fitted means.

    ``"moment"`` is the Pearson estimator ``(n - p) / sum (y - mu)^2 / V``;
    ``"ml"`` solves the likelihood equation (closed form for normal and
    inverse Gaussian, a digamma equation for gamma).
    """
    y = fit.y if y is None else np.asarray(y, dtype=float)
    return _estimate_phi(fit.spec, y, fit.mu_hat, method=method)
