"""Link functions ``g(mu) = eta``.

Derivatives are of the *inverse* link with respect to ``eta`` and are
expressed as functions of ``mu``: ``dmu(mu) = dmu/deta`` and
``d2mu(mu) = d^2 mu / deta^2``.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError
from .family import Normal, get_family


class Link:
    token = None
    positive_mean = False

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other) and vars(self) == vars(other)

    def __hash__(self):
        return hash(type(self))

    def link(self, mu):
        raise NotImplementedError

    def inverse(self, eta):
        raise NotImplementedError

    def valid_eta(self, eta):
        return np.isfinite(eta)

    def dmu(self, mu):
        raise NotImplementedError

    def d2mu(self, mu):
        raise NotImplementedError


class Identity(Link):
    token = "identity"

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def inverse(self, eta):
        return np.asarray(eta, dtype=float)

    def dmu(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def d2mu(self, mu):
        return np.zeros_like(np.asarray(mu, dtype=float))


class Log(Link):
    token = "log"
    positive_mean = True

    def link(self, mu):
        return np.log(mu)

    def inverse(self, eta):
        return np.exp(eta)

    def dmu(self, mu):
        return np.asarray(mu, dtype=float)

    def d2mu(self, mu):
        return np.asarray(mu, dtype=float)


class Reciprocal(Link):
    """``eta = 1/mu``."""

    token = "reciprocal"
    positive_mean = True

    def link(self, mu):
        return 1.0 / np.asarray(mu, dtype=float)

    def inverse(self, eta):
        return 1.0 / np.asarray(eta, dtype=float)

    def valid_eta(self, eta):
        return np.isfinite(eta) & (np.asarray(eta) > 0)

    def dmu(self, mu):
        return -np.asarray(mu, dtype=float) ** 2

    def d2mu(self, mu):
        return 2.0 * np.asarray(mu, dtype=float) ** 3


class InverseSquare(Link):
    """``eta = mu^{-2}``."""

    token = "inverse_square"
    positive_mean = True

    def link(self, mu):
        return np.asarray(mu, dtype=float) ** -2

    def inverse(self, eta):
        return 1.0 / np.sqrt(eta)

    def valid_eta(self, eta):
        return np.isfinite(eta) & (np.asarray(eta) > 0)

    def dmu(self, mu):
        return -0.5 * np.asarray(mu, dtype=float) ** 3

    def d2mu(self, mu):
        return 0.75 * np.asarray(mu, dtype=float) ** 5


class Canonical(Link):
    """``eta = theta = q(mu)`` for a given family.

    For the gamma family this is ``eta = -1/mu`` (not the ``reciprocal``
    link) and for the inverse Gaussian ``eta = -1/(2 mu^2)``.
    """

    token = "canonical"

    def __init__(self, family):
        self.family = get_family(family)
        self.positive_mean = self.family.positive_mean

    def __repr__(self):
        return f"Canonical({self.family!r})"

    def link(self, mu):
        return self.family.theta(mu)

    def inverse(self, eta):
        return self.family.mean_of_theta(eta)

    def valid_eta(self, eta):
        if self.family.positive_mean:
            return np.isfinite(eta) & (np.asarray(eta) < 0)
        return np.isfinite(eta)

    def dmu(self, mu):
        return self.family.variance(mu)

    def d2mu(self, mu):
        return self.family.variance(mu) * self.family.dvariance(mu)


LINKS = {cls.token: cls for cls in (Identity, Log, Reciprocal, InverseSquare)}


def get_link(link, family=None):
    """Resolve a case-insensitive link token.

    ``"canonical"`` needs the family it belongs to.
    """
    if isinstance(link, Link):
        return link
    key = str(link).strip().lower()
    if key == "canonical":
        if family is None:
            raise DomainError("the canonical link needs a family")
        return Canonical(family)
    try:
        return LINKS[key]()
    except KeyError:
        raise DomainError(
            f"unknown link {link!r}; expected one of {sorted(LINKS) + ['canonical']}"
        ) from None


def mu_of_eta(link, eta, family=None):
    return get_link(link, family).inverse(eta)


def link_derivatives(link, mu, family=None):
    """Return ``(mu', mu'')`` evaluated at ``mu``."""
    lk = get_link(link, family)
    return lk.dmu(mu), lk.d2mu(mu)


def weight(family, link, mu):
    """GLM weight ``w = mu'^2 / V(mu)``."""
    fam = get_family(family)
    lk = get_link(link, fam)
    mu = fam.check_mean(mu)
    return lk.dmu(mu) ** 2 / fam.variance(mu)


def signed_root_weight(family, link, mu):
    """``V^{-1/2} mu'``: the square root of the weight carrying the sign of ``mu'``.

    This is the factor that appears in the score contribution
    ``phi V^{-1/2} (V^{-1/2} mu') (y - mu) x``, so decreasing links give a
    negative root.
    """
    fam = get_family(family)
    lk = get_link(link, fam)
    mu = fam.check_mean(mu)
    return lk.dmu(mu) / np.sqrt(fam.variance(mu))


def is_canonical(family, link):
    fam = get_family(family)
    lk = get_link(link, fam)
    if isinstance(lk, Canonical):
        return lk.family == fam
    return isinstance(fam, Normal) and isinstance(lk, Identity)


__all__ = [
    "Link", "Identity", "Log", "Reciprocal", "InverseSquare", "Canonical",
    "get_link", "mu_of_eta", "link_derivatives", "weight", "signed_root_weight",
    "is_canonical",
]
