"""Pearson residuals, their ``O(n^{-1})`` density and the correcting function.

Write ``R_i = eps_i + delta_i`` with ``eps_i`` the true Pearson residual.
Given ``eps_i = x`` the mean and variance of ``delta_i`` are quadratics in
``x``::

    theta_x = {s_i z_ii x + B(eta_i)} e_i(x) + z_ii / (2 phi) h_i(x)
    phi2_x  = z_ii / phi * e_i(x)^2

where ``s_i = V_i^{-1/2} mu_i'`` is the signed root of the weight and
``e_i``, ``h_i`` are linear in ``x``.  The density of ``R_i`` is then

    f_R = f_eps - (f_eps theta_x)' + 1/2 (f_eps phi2_x)''

and ``R_i' = R_i + rho_i(R_i)`` with
``rho_i = -theta_x + (f_eps phi2_x)' / (2 f_eps)`` has density ``f_eps``
to the same order.

Derivatives of ``f_eps`` are taken analytically through the log-density
slope ``L(x) = phi sqrt(V) q(mu) + d/dx c(sqrt(V) x + mu, phi)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, NumericalError, ResidualSupportWarning
from .family import Gamma, InverseGaussian, Normal, check_phi, get_family
from .link import Canonical, Identity, get_link, is_canonical


# ---------------------------------------------------------------------------
# e_i(x) and h_i(x)
# ---------------------------------------------------------------------------


def _pieces(family, link, mu):
    fam = get_family(family)
    lk = get_link(link, fam)
    mu = fam.check_mean(mu)
    V = fam.variance(mu)
    return fam, lk, mu, V, fam.dvariance(mu), fam.d2variance(mu), lk.dmu(mu), lk.d2mu(mu)


def e_coefficients(family, link, mu):
    """``(e0, e1)`` with ``e(x) = e0 + e1 x``."""
    _, _, _, V, V1, _, d1, _ = _pieces(family, link, mu)
    return -d1 / np.sqrt(V), -0.5 * V1 * d1 / V


def h_coefficients(family, link, mu):
    """``(h0, h1)`` with ``h(x) = h0 + h1 x``."""
    _, _, _, V, V1, V2, d1, d2 = _pieces(family, link, mu)
    h0 = -d2 / np.sqrt(V) + V1 * d1**2 / V**1.5
    h1 = 0.25 * ((3.0 * V1**2 / V**2 - 2.0 * V2 / V) * d1**2 - 2.0 * V1 * d2 / V)
    return h0, h1


def e_function(family, link, mu, x):
    e0, e1 = e_coefficients(family, link, mu)
    return e0 + e1 * np.asarray(x)


def h_function(family, link, mu, x):
    h0, h1 = h_coefficients(family, link, mu)
    return h0 + h1 * np.asarray(x)


# ---------------------------------------------------------------------------
# conditional moments
# ---------------------------------------------------------------------------


def _polyval(coef, x):
    """Evaluate polynomials with coefficient arrays ``coef[..., k]`` (ascending)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(np.broadcast(coef[..., 0], x).shape)
    for k in range(coef.shape[-1] - 1, -1, -1):
        out = out * x + coef[..., k]
    return out


def _polyder(coef):
    k = np.arange(1, coef.shape[-1])
    return coef[..., 1:] * k


@dataclass(frozen=True)
class CorrectionPolynomials:
    """Per-observation polynomial coefficients (ascending powers of ``x``).

    Arrays have a leading observation axis when built for a whole fit.
    """

    e_coef: np.ndarray
    h_coef: np.ndarray
    theta_coef: np.ndarray
    phi2_coef: np.ndarray

    def __getitem__(self, i):
        return CorrectionPolynomials(
            self.e_coef[i], self.h_coef[i], self.theta_coef[i], self.phi2_coef[i]
        )

    def e(self, x):
        return _polyval(self.e_coef, x)

    def h(self, x):
        return _polyval(self.h_coef, x)

    def theta(self, x):
        """Conditional mean of ``R - eps`` given ``eps = x``."""
        return _polyval(self.theta_coef, x)

    def phi2(self, x):
        """Conditional variance of ``R - eps`` given ``eps = x``."""
        return _polyval(self.phi2_coef, x)

    def dtheta(self, x):
        return _polyval(_polyder(self.theta_coef), x)

    def dphi2(self, x):
        return _polyval(_polyder(self.phi2_coef), x)

    def d2phi2(self, x):
        return _polyval(_polyder(_polyder(self.phi2_coef)), x)


def moment_polynomials(family, link, mu, phi, z, b_eta):
    """Conditional-moment polynomials from raw per-observation quantities."""
    fam = get_family(family)
    lk = get_link(link, fam)
    mu = fam.check_mean(mu)
    phi = check_phi(phi)
    z = np.asarray(z, dtype=float)
    b = np.asarray(b_eta, dtype=float)
    e0, e1 = e_coefficients(fam, lk, mu)
    h0, h1 = h_coefficients(fam, lk, mu)
    s = lk.dmu(mu) / np.sqrt(fam.variance(mu))
    k = z / (2.0 * phi)
    e0, e1, h0, h1, s, z, b, k = np.broadcast_arrays(e0, e1, h0, h1, s, z, b, k)
    theta = np.stack([b * e0 + k * h0, s * z * e0 + b * e1 + k * h1, s * z * e1], axis=-1)
    phi2 = np.stack([2 * k * e0**2, 4 * k * e0 * e1, 2 * k * e1**2], axis=-1)
    return CorrectionPolynomials(
        np.stack([e0, e1], axis=-1), np.stack([h0, h1], axis=-1), theta, phi2
    )


def _phi_fit(fit, phi):
    if phi is None:
        return fit
    return fit.with_phi(phi)


def conditional_moments(fit, i=None, phi=None):
    """Correction polynomials for every observation (or just ``i``)."""
    fit = _phi_fit(fit, phi)
    polys = moment_polynomials(
        fit.family, fit.link, fit.mu_hat, fit.phi, fit.z_diag, fit.bias_eta
    )
    return polys if i is None else polys[i]


# ---------------------------------------------------------------------------
# correction function
# ---------------------------------------------------------------------------


def _check_support(fam, mu, x):
    if not np.all(fam.in_support(x, mu)):
        raise DomainError(f"{fam.token}: residual outside the open support")


def rho_general(family, link, mu, phi, z, b_eta, x):
    """Correction function written out term by term (any continuous GLM)."""
    fam, lk, mu, V, V1, _, d1, _ = _pieces(family, link, mu)
    phi = check_phi(phi)
    x = np.asarray(x, dtype=float)
    _check_support(fam, mu, x)
    e = e_function(fam, lk, mu, x)
    h = h_function(fam, lk, mu, x)
    s = d1 / np.sqrt(V)
    k = z / (2.0 * phi)
    slope = phi * np.sqrt(V) * fam.theta(mu) + fam.dcdx(x, mu, phi)
    return (
        e * (-(V1 * d1 * z) / (2.0 * phi * V) - b_eta - s * z * x)
        - k * h
        + k * e**2 * slope
    )


def rho_from_moments(polys, family, mu, phi, x):
    """``-theta_x + (f phi2_x)' / (2 f)`` evaluated from the polynomials."""
    fam = get_family(family)
    mu = fam.check_mean(mu)
    x = np.asarray(x, dtype=float)
    _check_support(fam, mu, x)
    L = fam.dlogpdf_resid(x, mu, phi)
    return -polys.theta(x) + 0.5 * (polys.dphi2(x) + polys.phi2(x) * L)


def rho(fit, x, i=None, phi=None):
    """Correction ``rho_i(x)``.

    With ``i=None``, ``x`` is broadcast against all observations (typically
    ``x`` is the vector of Pearson residuals).
    """
    fit = _phi_fit(fit, phi)
    sel = slice(None) if i is None else i
    return rho_general(
        fit.family, fit.link, fit.mu_hat[sel], fit.phi, fit.z_diag[sel],
        fit.bias_eta[sel], x,
    )


MODEL_CLASSES = ("linear", "canonical", "normal", "gamma", "inverse_gaussian")


def _check_class(model_class, fam, lk):
    ok = {
        "linear": isinstance(lk, Identity) or (isinstance(lk, Canonical) and isinstance(fam, Normal)),
        "canonical": is_canonical(fam, lk),
        "normal": isinstance(fam, Normal),
        "gamma": isinstance(fam, Gamma),
        "inverse_gaussian": isinstance(fam, InverseGaussian),
    }
    if model_class not in ok:
        raise DomainError(f"unknown model class {model_class!r}; expected one of {MODEL_CLASSES}")
    if not ok[model_class]:
        raise DomainError(f"model ({fam.token}, {lk.token}) is not in class {model_class!r}")


def closed_form_rho(model_class, family, link, mu, phi, z, b_eta, x):
    """Correction function via the simplified formula for a model class.

    An independent route to :func:`rho_general`, kept for verification.
    ``model_class`` is one of ``"linear"``, ``"canonical"``, ``"normal"``,
    ``"gamma"``, ``"inverse_gaussian"``.
    """
    fam, lk, mu, V, V1, V2, d1, d2 = _pieces(family, link, mu)
    _check_class(model_class, fam, lk)
    phi = check_phi(phi)
    x = np.asarray(x, dtype=float)
    _check_support(fam, mu, x)
    z = np.asarray(z, dtype=float)
    b = np.asarray(b_eta, dtype=float)
    slope = phi * np.sqrt(V) * fam.theta(mu) + fam.dcdx(x, mu, phi)

    if model_class == "linear":
        return (
            z * x / V * (1 - V1**2 / (8 * phi * V) + V2 / (4 * phi) + V1 * x / (2 * np.sqrt(V)))
            + z / (2 * phi) * (1 / V + V1 * x / V**1.5 + V1**2 * x**2 / (4 * V**2)) * slope
        )
    if model_class == "canonical":
        rV = np.sqrt(V)
        return (
            (rV + V1 * x / 2) * b
            + z * (rV * V1 / (2 * phi) + V * x + V1**2 * x / (8 * phi)
                   + V * V2 * x / (4 * phi) + rV * V1 * x**2 / 2)
            + z / (2 * phi) * (V + rV * V1 * x + V1**2 * x**2 / 4) * slope
        )
    if model_class == "normal":
        return b * d1 + d2 * z / (2 * phi) + d1**2 * z * x / 2
    if model_class == "gamma":
        return (1 + x) * (
            d1 * b / mu + d2 * z / (2 * phi * mu) - d1**2 * z / (2 * phi * mu**2)
            + d1**2 * z * x / (2 * mu**2)
        )
    # inverse Gaussian
    a = mu**1.5
    y = a * x + mu
    return (
        (d1 / a + 1.5 * d1 * x / mu) * b
        + d2 * z / (2 * phi * a)
        + (3 * d1**2 * z / (8 * phi * mu**2) + 3 * d2 * z / (4 * phi * mu)) * x
        + d1**2 * z * x / mu**3
        + 1.5 * d1**2 * z * x**2 / mu**2.5
        + z / (4 * phi * mu**3) * (d1**2 + 3 * np.sqrt(mu) * d1**2 * x + 2.25 * mu * d1**2 * x**2)
        * (-phi / np.sqrt(mu) - 3 * a / y + phi * a / y**2)
    )


def pearson_residuals(fit, y=None):
    """``R_i = (y_i - mu_hat_i) / V(mu_hat_i)^{1/2}`` (no precision factor)."""
    y = fit.y if y is None else np.asarray(y, dtype=float)
    return (y - fit.mu_hat) / np.sqrt(fit.variance)


def corrected_residuals(fit, R=None, phi=None, return_mask=False):
    """``R_i' = R_i + rho_i(R_i)``.

    Residuals outside the open support of their true-residual law cannot
    be corrected; they are passed through unchanged and a
    :class:`ResidualSupportWarning` is issued.  With ``return_mask=True``
    a boolean array flagging those observations is returned as well.
    """
    fit = _phi_fit(fit, phi)
    R = pearson_residuals(fit) if R is None else np.asarray(R, dtype=float)
    bad = ~fit.family.in_support(R, fit.mu_hat)
    out = R.copy()
    ok = ~bad
    if np.any(ok):
        out[ok] = R[ok] + rho_general(
            fit.family, fit.link, fit.mu_hat[ok], fit.phi, fit.z_diag[ok],
            fit.bias_eta[ok], R[ok],
        )
    if np.any(bad):
        warnings.warn(
            f"{int(bad.sum())} residual(s) outside the support left uncorrected: "
            f"observations {np.flatnonzero(bad).tolist()}",
            ResidualSupportWarning,
            stacklevel=2,
        )
    return (out, bad) if return_mask else out


# ---------------------------------------------------------------------------
# adjusted residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdjustedMoments:
    """``O(n^{-1})`` mean ``m_i/n`` and variance correction ``v_i/n`` of ``R_i``.

    ``E(R_i) = m_i/n`` and ``Var(R_i) = sigma^2 + v_i/n``.
    """

    m_over_n: np.ndarray
    v_over_n: np.ndarray
    J: np.ndarray
    Q: np.ndarray
    T: np.ndarray
    z: np.ndarray
    sigma2: float
    q: np.ndarray | None = None  # thin orthonormal factor, H = q q^T

    @property
    def H(self):
        """Weighted projection (formed on demand; n x n)."""
        return self.q @ self.q.T


def adjusted_moments(fit, phi=None):
    fit = _phi_fit(fit, phi)
    fam = fit.family
    mu, V, d1, d2, w = fit.mu_hat, fit.variance, fit.dmu, fit.d2mu, fit.weights
    V1, V2 = fam.dvariance(mu), fam.d2variance(mu)
    sigma2 = 1.0 / fit.phi
    q = fit._geo.q
    z = fit.z_diag
    J = d2 / np.sqrt(V)
    Q = V1 / np.sqrt(V)
    T = 2 * fit.phi * w + w * V2 + V1 * d2 / V
    Jz = J * z
    HJz = q @ (q.T @ Jz)
    m = -0.5 * sigma2 * (Jz - HJz)
    v = 0.5 * sigma2**2 * (Q * HJz - T * z)
    return AdjustedMoments(m, v, J, Q, T, z, sigma2, q)


def adjusted_residuals(fit, R=None, phi=None, moments=None):
    """``R*_i = (R_i - m_i/n) / (sigma^2 + v_i/n)^{1/2}``."""
    fit = _phi_fit(fit, phi)
    R = pearson_residuals(fit) if R is None else np.asarray(R, dtype=float)
    am = adjusted_moments(fit) if moments is None else moments
    var = am.sigma2 + am.v_over_n
    if not np.all(var > 0):
        bad = np.flatnonzero(~(var > 0)).tolist()
        raise NumericalError(f"nonpositive adjusted variance at observations {bad}")
    return (R - am.m_over_n) / np.sqrt(var)


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def _density_args(fit, i, x, phi):
    fit = _phi_fit(fit, phi)
    fam = fit.family
    mu = fit.mu_hat[i]
    x = np.asarray(x, dtype=float)
    lower = fam.residual_lower(mu)
    if np.any(x == lower):
        raise DomainError(f"{fam.token}: density requested at the support boundary")
    return fit, fam, mu, x, x > lower


def _pearson_density_factor(polys, fam, mu, phi, x):
    """``f_R / f_eps`` on the interior of the support."""
    L = fam.dlogpdf_resid(x, mu, phi)
    dL = fam.d2cdx2(x, mu, phi)
    th, dth = polys.theta(x), polys.dtheta(x)
    P, dP, d2P = polys.phi2(x), polys.dphi2(x), polys.d2phi2(x)
    return 1.0 - dth - th * L + 0.5 * (d2P + 2 * dP * L + P * L * L + P * dL)


def density_pearson(fit, i, x, phi=None, clamp=False):
    """``O(n^{-1})`` density of the Pearson residual ``R_i`` at ``x``.

    The expansion can dip below zero far in the tails; ``clamp=True``
    truncates at zero (for plotting only).
    """
    fit, fam, mu, x, inside = _density_args(fit, i, x, phi)
    out = np.zeros(x.shape)
    xi = x[inside]
    if xi.size:
        polys = conditional_moments(fit, i)
        f = fam.residual_pdf(xi, mu, fit.phi)
        out[inside] = f * _pearson_density_factor(polys, fam, mu, fit.phi, xi)
    if clamp:
        out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def density_adjusted(fit, i, x, phi=None, clamp=False):
    """``O(n^{-1})`` density of the adjusted residual ``R*_i`` at ``x``."""
    fit = _phi_fit(fit, phi)
    sigma = 1.0 / np.sqrt(fit.phi)
    fit, fam, mu, s, inside = _density_args(fit, i, sigma * np.asarray(x, dtype=float), None)
    am = adjusted_moments(fit)
    mn, vn = am.m_over_n[i], am.v_over_n[i]
    out = np.zeros(s.shape)
    si = s[inside]
    if si.size:
        polys = conditional_moments(fit, i)
        f = fam.residual_pdf(si, mu, fit.phi)
        L = fam.dlogpdf_resid(si, mu, fit.phi)
        k = 0.5 * fit.phi * vn
        fS = f * (_pearson_density_factor(polys, fam, mu, fit.phi, si) + (mn + k * si) * L + k)
        out[inside] = sigma * fS
    if clamp:
        out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def adjusted_normal_coefficients(fit, i, phi=None):
    """``(a0, a1, a2)`` of the normal-model density
    ``f_{R*}(x) = phi(x) (1 + a0 - a1 x - a2 x^2)``."""
    fit = _phi_fit(fit, phi)
    if not isinstance(fit.family, Normal):
        raise DomainError("adjusted-residual closed form is for the normal family only")
    am = adjusted_moments(fit)
    sigma = 1.0 / np.sqrt(fit.phi)
    d1, d2, z, b = fit.dmu[i], fit.d2mu[i], fit.z_diag[i], fit.bias_eta[i]
    half_v = am.v_over_n[i] / (2 * am.sigma2)
    a0 = d1**2 * z / 2 + half_v
    a1 = am.m_over_n[i] / sigma + d1 * b / sigma + sigma * d2 * z / 2
    a2 = half_v + d1**2 * z / 2
    return a0, a1, a2


def density_adjusted_normal(fit, i, x, phi=None):
    a0, a1, a2 = adjusted_normal_coefficients(fit, i, phi)
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi) * (1 + a0 - a1 * x - a2 * x * x)


# ---------------------------------------------------------------------------
# bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualSet:
    pearson: np.ndarray
    corrected: np.ndarray
    adjusted: np.ndarray
    rho_at_r: np.ndarray
    out_of_support: np.ndarray
    true_resid: np.ndarray | None = None


def residual_set(fit, mu_true=None, phi=None):
    """All residual kinds for a fit; ``true_resid`` only when ``mu_true`` is given."""
    fit = _phi_fit(fit, phi)
    R = pearson_residuals(fit)
    corrected, bad = corrected_residuals(fit, R, return_mask=True)
    adjusted = adjusted_residuals(fit, R)
    eps = None
    if mu_true is not None:
        mu_true = fit.family.check_mean(mu_true)
        eps = (fit.y - mu_true) / np.sqrt(fit.family.variance(mu_true))
    return ResidualSet(R, corrected, adjusted, corrected - R, bad, eps)
