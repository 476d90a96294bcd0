"""Continuous linear exponential families.

Each family is characterised by its variance function ``V(mu)`` and
supplies the pieces of the density

    pi(y; theta, phi) = exp[phi {y theta - b(theta)} + c(y, phi)]

together with the exact law of the true Pearson residual
``eps = (Y - mu) / sqrt(V(mu))``.  ``phi`` is the precision (the
reciprocal of the dispersion ``sigma^2``).

All methods are vectorised over numpy arrays.
"""

from __future__ import annotations

import numpy as np
from scipy import special, stats

from .exceptions import DomainError

LOG_2PI = np.log(2.0 * np.pi)


def check_phi(phi):
    phi = float(phi)
    if not phi > 0 or not np.isfinite(phi):
        raise DomainError(f"precision parameter must be positive and finite, got {phi!r}")
    return phi


class Family:
    """Base class; subclasses fill in the variance function and density pieces."""

    token = None
    positive_mean = True

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(type(self))

    # -- domains ---------------------------------------------------------

    def check_mean(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.positive_mean and not np.all(mu > 0):
            raise DomainError(f"{self.token}: mean must be > 0")
        if not np.all(np.isfinite(mu)):
            raise DomainError(f"{self.token}: mean must be finite")
        return mu

    def check_response(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError(f"{self.token}: response contains non-finite values")
        if self.positive_mean and not np.all(y > 0):
            bad = int(np.flatnonzero(~(y > 0))[0])
            raise DomainError(f"{self.token}: response must be > 0 (observation {bad})")
        return y

    def residual_lower(self, mu):
        """Lower end of the (open) support of the true residual."""
        raise NotImplementedError

    def in_support(self, x, mu):
        return np.asarray(x) > self.residual_lower(mu)

    # -- variance function -------------------------------------------------

    def variance(self, mu):
        raise NotImplementedError

    def dvariance(self, mu):
        raise NotImplementedError

    def d2variance(self, mu):
        raise NotImplementedError

    # -- canonical parameter and density pieces ---------------------------

    def theta(self, mu):
        """Canonical parameter ``q(mu) = int V^{-1} dmu``."""
        raise NotImplementedError

    def mean_of_theta(self, theta):
        raise NotImplementedError

    def cumulant(self, theta):
        """``b(theta)``."""
        raise NotImplementedError

    def c(self, y, phi):
        raise NotImplementedError

    def logpdf(self, y, mu, phi):
        """Log density of ``Y`` written in exponential-family form."""
        mu = self.check_mean(mu)
        th = self.theta(mu)
        return phi * (np.asarray(y) * th - self.cumulant(th)) + self.c(y, phi)

    def dcdx(self, x, mu, phi):
        """``d/dx c(sqrt(V) x + mu, phi)``; ``x`` must be inside the support."""
        raise NotImplementedError

    def d2cdx2(self, x, mu, phi):
        """Second derivative in ``x`` of ``c(sqrt(V) x + mu, phi)``."""
        raise NotImplementedError

    def dlogpdf_resid(self, x, mu, phi):
        """Derivative of the log true-residual density,
        ``phi sqrt(V) q(mu) + dcdx``."""
        mu = self.check_mean(mu)
        return phi * np.sqrt(self.variance(mu)) * self.theta(mu) + self.dcdx(x, mu, phi)

    # -- true residual law -------------------------------------------------

    def _resid_logpdf(self, x, mu, phi):
        raise NotImplementedError

    def residual_logpdf(self, x, mu, phi):
        phi = check_phi(phi)
        mu = self.check_mean(mu)
        x, mu = np.broadcast_arrays(np.asarray(x, dtype=float), mu)
        inside = x > self.residual_lower(mu)
        out = np.full(x.shape, -np.inf)
        if np.any(inside):
            out[inside] = self._resid_logpdf(x[inside], mu[inside], phi)
        return out if out.ndim else float(out)

    def residual_pdf(self, x, mu, phi):
        """Exact density of the true Pearson residual; 0 off the open support."""
        return np.exp(self.residual_logpdf(x, mu, phi))

    def residual_cdf(self, x, mu, phi):
        raise NotImplementedError

    def residual_ppf(self, p, mu, phi):
        raise NotImplementedError

    # -- misc --------------------------------------------------------------

    def unit_deviance(self, y, mu):
        raise NotImplementedError

    def sample(self, rng, mu, phi):
        raise NotImplementedError


class Normal(Family):
    token = "normal"
    positive_mean = False

    def residual_lower(self, mu):
        return np.full(np.shape(mu), -np.inf)

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def dvariance(self, mu):
        return np.zeros_like(np.asarray(mu, dtype=float))

    def d2variance(self, mu):
        return np.zeros_like(np.asarray(mu, dtype=float))

    def theta(self, mu):
        return np.asarray(mu, dtype=float)

    def mean_of_theta(self, theta):
        return np.asarray(theta, dtype=float)

    def cumulant(self, theta):
        return 0.5 * np.asarray(theta) ** 2

    def c(self, y, phi):
        return -0.5 * (np.asarray(y) ** 2 * phi + LOG_2PI - np.log(phi))

    def dcdx(self, x, mu, phi):
        return -(np.asarray(x) + mu) * phi

    def d2cdx2(self, x, mu, phi):
        return np.full(np.broadcast(x, mu).shape, -float(phi))

    def _resid_logpdf(self, x, mu, phi):
        return 0.5 * (np.log(phi) - LOG_2PI) - 0.5 * phi * x * x

    def residual_cdf(self, x, mu, phi):
        return special.ndtr(np.asarray(x) * np.sqrt(phi))

    def residual_ppf(self, p, mu, phi):
        return special.ndtri(p) / np.sqrt(phi)

    def unit_deviance(self, y, mu):
        return (y - mu) ** 2

    def sample(self, rng, mu, phi):
        return mu + rng.standard_normal(np.shape(mu)) / np.sqrt(phi)


class Gamma(Family):
    token = "gamma"

    def residual_lower(self, mu):
        return np.full(np.shape(mu), -1.0)

    def variance(self, mu):
        return np.asarray(mu, dtype=float) ** 2

    def dvariance(self, mu):
        return 2.0 * np.asarray(mu, dtype=float)

    def d2variance(self, mu):
        return np.full(np.shape(mu), 2.0)

    def theta(self, mu):
        return -1.0 / np.asarray(mu, dtype=float)

    def mean_of_theta(self, theta):
        return -1.0 / np.asarray(theta, dtype=float)

    def cumulant(self, theta):
        return -np.log(-np.asarray(theta, dtype=float))

    def c(self, y, phi):
        return (phi - 1.0) * np.log(y) + phi * np.log(phi) - special.gammaln(phi)

    def dcdx(self, x, mu, phi):
        x = np.asarray(x, dtype=float)
        if not np.all(x > -1.0):
            raise DomainError("gamma: residual must exceed -1")
        return (phi - 1.0) / (1.0 + x)

    def d2cdx2(self, x, mu, phi):
        x = np.asarray(x, dtype=float)
        if not np.all(x > -1.0):
            raise DomainError("gamma: residual must exceed -1")
        return -(phi - 1.0) / (1.0 + x) ** 2

    def _resid_logpdf(self, x, mu, phi):
        s = phi * (1.0 + x)
        return (phi - 1.0) * np.log(s) + np.log(phi) - s - special.gammaln(phi)

    def residual_cdf(self, x, mu, phi):
        x = np.asarray(x, dtype=float)
        return special.gammainc(phi, phi * np.maximum(1.0 + x, 0.0))

    def residual_ppf(self, p, mu, phi):
        return special.gammaincinv(phi, p) / phi - 1.0

    def unit_deviance(self, y, mu):
        return 2.0 * (-np.log(y / mu) + (y - mu) / mu)

    def sample(self, rng, mu, phi):
        # shape phi, scale mu/phi: mean mu, variance mu^2/phi
        return rng.gamma(phi, np.asarray(mu) / phi)


class InverseGaussian(Family):
    token = "inverse_gaussian"

    def residual_lower(self, mu):
        return -1.0 / np.sqrt(np.asarray(mu, dtype=float))

    def variance(self, mu):
        return np.asarray(mu, dtype=float) ** 3

    def dvariance(self, mu):
        return 3.0 * np.asarray(mu, dtype=float) ** 2

    def d2variance(self, mu):
        return 6.0 * np.asarray(mu, dtype=float)

    def theta(self, mu):
        return -0.5 / np.asarray(mu, dtype=float) ** 2

    def mean_of_theta(self, theta):
        return 1.0 / np.sqrt(-2.0 * np.asarray(theta, dtype=float))

    def cumulant(self, theta):
        return -np.sqrt(-2.0 * np.asarray(theta, dtype=float))

    def c(self, y, phi):
        y = np.asarray(y, dtype=float)
        return 0.5 * np.log(phi / (2.0 * np.pi * y**3)) - phi / (2.0 * y)

    def _shifted(self, x, mu):
        x = np.asarray(x, dtype=float)
        mu = np.asarray(mu, dtype=float)
        a = mu**1.5
        y = a * x + mu
        if not np.all(y > 0):
            raise DomainError("inverse_gaussian: residual must exceed -1/sqrt(mu)")
        return a, y

    def dcdx(self, x, mu, phi):
        a, y = self._shifted(x, mu)
        return -1.5 * a / y + 0.5 * phi * a / y**2

    def d2cdx2(self, x, mu, phi):
        a, y = self._shifted(x, mu)
        return 1.5 * a * a / y**2 - phi * a * a / y**3

    def _resid_logpdf(self, x, mu, phi):
        u = np.sqrt(mu) * x + 1.0
        return 0.5 * (np.log(phi) - LOG_2PI - 3.0 * np.log(u)) - phi * x * x / (2.0 * u)

    def _scipy_law(self, mu, phi):
        # shape lambda = phi gives Var(Y) = mu^3 / phi
        return stats.invgauss(mu=np.asarray(mu) / phi, scale=phi)

    def residual_cdf(self, x, mu, phi):
        x = np.asarray(x, dtype=float)
        mu = np.asarray(mu, dtype=float)
        y = np.maximum(mu**1.5 * x + mu, 0.0)
        return self._scipy_law(mu, phi).cdf(y)

    def residual_ppf(self, p, mu, phi):
        mu = np.asarray(mu, dtype=float)
        y = self._scipy_law(mu, phi).ppf(p)
        return (y - mu) / mu**1.5

    def unit_deviance(self, y, mu):
        return (y - mu) ** 2 / (mu**2 * y)

    def sample(self, rng, mu, phi):
        return rng.wald(np.asarray(mu, dtype=float), phi)


FAMILIES = {cls.token: cls for cls in (Normal, Gamma, InverseGaussian)}


def get_family(family):
    """Resolve a case-insensitive token (or pass through a ``Family``)."""
    if isinstance(family, Family):
        return family
    key = str(family).strip().lower()
    try:
        return FAMILIES[key]()
    except KeyError:
        raise DomainError(
            f"unknown family {family!r}; expected one of {sorted(FAMILIES)}"
        ) from None


def variance_at(family, mu):
    """Return ``(V, V', V'')`` at ``mu``."""
    fam = get_family(family)
    mu = fam.check_mean(mu)
    return fam.variance(mu), fam.dvariance(mu), fam.d2variance(mu)


def theta_of_mu(family, mu):
    fam = get_family(family)
    return fam.theta(fam.check_mean(mu))


def true_residual_density(family, mu, phi, x):
    return get_family(family).residual_pdf(x, mu, phi)


def c_deriv_at(family, mu, phi, x):
    fam = get_family(family)
    return fam.dcdx(x, fam.check_mean(mu), check_phi(phi))
