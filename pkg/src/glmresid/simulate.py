"""Seeded Monte Carlo study of Pearson, corrected, adjusted and true residuals.

The design matrix is drawn once from the master seed and held fixed;
every replication draws a fresh response from the true model, refits it
and records the four residual kinds.  Replication ``r`` uses the random
stream ``SeedSequence(master_seed, spawn_key=(1, r))`` so results do not
depend on how replications are split across chunks or workers.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property

import numpy as np

from . import gof
from .exceptions import DomainError, GLMResidError, NumericalError, ResidualSupportWarning
from .family import check_phi, get_family
from .glm import ModelSpec, bias_at, irls_fit
from .link import get_link
from .residuals import adjusted_residuals, corrected_residuals, pearson_residuals

KINDS = ("pearson", "corrected", "adjusted", "true")
MAX_FAILURE_RATE = 0.01


@dataclass(frozen=True)
class SimConfig:
    family: str = "gamma"
    link: str = "log"
    beta: tuple = (0.5, 1.0, -1.0)
    phi: float = 4.0
    n: int = 20
    replications: int = 10_000
    seed: int = 2009
    covariates: str = "uniform01"
    use_true_phi: bool = False
    phi_method: str = "moment"
    chunk_size: int = 250
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        get_family(self.family)
        get_link(self.link, self.family)
        check_phi(self.phi)
        if self.replications < 1:
            raise DomainError("replications must be >= 1")
        if not self.n > len(self.beta):
            raise DomainError("need n > number of coefficients")
        if self.chunk_size < 1:
            raise DomainError("chunk_size must be >= 1")

    @classmethod
    def from_mapping(cls, items):
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in items.items():
            key = key.strip().lower().replace("-", "_")
            if key not in kinds:
                raise DomainError(f"unknown config key {key!r}")
            if not isinstance(raw, str):
                kw[key] = raw
                continue
            raw = raw.strip()
            t = kinds[key]
            if key == "beta":
                kw[key] = tuple(float(v) for v in raw.replace(",", " ").split())
            elif t == "bool":
                kw[key] = raw.lower() in ("1", "true", "yes", "on")
            elif t == "int":
                kw[key] = int(raw)
            elif t == "float":
                kw[key] = float(raw)
            else:
                kw[key] = raw
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        """Read a flat ``key = value`` file (``#`` starts a comment)."""
        items = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DomainError(f"{path}:{lineno}: expected key = value")
                k, v = line.split("=", 1)
                items[k] = v
        return cls.from_mapping(items)

    def to_text(self):
        lines = []
        for k, v in asdict(self).items():
            if k == "beta":
                v = " ".join(repr(b) for b in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _rng(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def design_matrix(config):
    """Intercept plus ``p - 1`` covariates, fixed for the whole study."""
    p = len(config.beta)
    if config.covariates == "uniform01":
        U = _rng(config.seed, 0).uniform(size=(config.n, p - 1))
    else:
        U = np.loadtxt(config.covariates, delimiter=",", skiprows=1, ndmin=2)
        if U.shape != (config.n, p - 1):
            raise DomainError(
                f"covariate file must have {config.n} rows and {p - 1} columns, got {U.shape}"
            )
    return np.column_stack([np.ones(config.n), U])


def _run_chunk(config, spec, mu_true, start, stop):
    fam = spec.family
    n = spec.n
    m = stop - start
    out = {k: np.full((m, n), np.nan) for k in KINDS}
    out["mu_hat"] = np.full((m, n), np.nan)
    out["beta_hat"] = np.full((m, spec.p), np.nan)
    out["phi_hat"] = np.full(m, np.nan)
    ok = np.zeros(m, dtype=bool)
    failures = []
    outside = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResidualSupportWarning)
        for j, r in enumerate(range(start, stop)):
            y = fam.sample(_rng(config.seed, 1, r), mu_true, config.phi)
            try:
                fit = irls_fit(spec, y, phi_method=config.phi_method)
                R = pearson_residuals(fit)
                Rc, bad = corrected_residuals(fit, R, return_mask=True)
                Rs = adjusted_residuals(fit, R)
            except GLMResidError as exc:
                failures.append((r, f"{type(exc).__name__}: {exc}"))
                continue
            outside += int(bad.sum())
            ok[j] = True
            out["pearson"][j] = R
            out["corrected"][j] = Rc
            out["adjusted"][j] = Rs
            out["true"][j] = (y - mu_true) / np.sqrt(fam.variance(mu_true))
            out["mu_hat"][j] = fit.mu_hat
            out["beta_hat"][j] = fit.beta_hat
            out["phi_hat"][j] = fit.phi_hat
    out["ok"] = ok
    out["failures"] = failures
    out["outside"] = outside
    return start, out


def run_simulation(config, progress=None):
    """Run the study described by ``config`` and return a :class:`SimulationReport`.

    Replications whose fit fails are recorded and skipped; more than 1%
    failures aborts the run with :class:`NumericalError`.
    """
    X = design_matrix(config)
    beta = np.asarray(config.beta)
    fam = get_family(config.family)
    lk = get_link(config.link, fam)
    phi_known = config.phi if config.use_true_phi else None
    spec = ModelSpec(fam, lk, X, phi=phi_known)
    mu_true = lk.inverse(X @ beta)
    fam.check_mean(mu_true)

    bounds = [
        (s, min(s + config.chunk_size, config.replications))
        for s in range(0, config.replications, config.chunk_size)
    ]
    if config.n_jobs != 1 and len(bounds) > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_run_chunk)(config, spec, mu_true, a, b) for a, b in bounds
        )
    else:
        results = []
        for a, b in bounds:
            results.append(_run_chunk(config, spec, mu_true, a, b))
            if progress is not None:
                progress(b, config.replications)
    results.sort(key=lambda t: t[0])

    ok = np.concatenate([c["ok"] for _, c in results])
    failures = [f for _, c in results for f in c["failures"]]
    if len(failures) > MAX_FAILURE_RATE * config.replications:
        raise NumericalError(
            f"{len(failures)} of {config.replications} replications failed; first: {failures[0][1]}"
        )

    def stack(key):
        return np.concatenate([c[key] for _, c in results])[ok]

    moments = {}
    for k in KINDS:
        acc = gof.MomentAccumulator()
        for _, c in results:
            if c["ok"].any():
                acc = acc.merge(gof.MomentAccumulator.from_batch(c[k][c["ok"]]))
        moments[k] = acc

    return SimulationReport(
        config=config,
        X=X,
        mu_true=mu_true,
        samples={k: stack(k) for k in KINDS},
        mu_hat=stack("mu_hat"),
        beta_hat=stack("beta_hat"),
        phi_hat=stack("phi_hat"),
        replication_index=np.flatnonzero(ok),
        failures=failures,
        out_of_support=sum(c["outside"] for _, c in results),
        moments=moments,
    )


def reference_quantile(family, phi, p, mu=None):
    """Quantile of the true-residual law.

    Gamma and normal laws do not depend on ``mu``; the inverse Gaussian
    law does, and ``mu`` must be supplied (usually an estimate).
    """
    fam = get_family(family)
    phi = check_phi(phi)
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0) & (p < 1)):
        raise DomainError("probabilities must lie strictly between 0 and 1")
    if fam.token == "inverse_gaussian":
        if mu is None:
            raise DomainError("inverse Gaussian residual quantiles need a mean")
        return fam.residual_ppf(p, fam.check_mean(mu), phi)
    return fam.residual_ppf(p, 1.0, phi)


def qq_pairs(residuals, quantile):
    """``(F^{-1}((i - 1/2)/N), x_(i))`` pairs for a quantile function ``F^{-1}``."""
    x = np.sort(np.asarray(residuals, dtype=float).ravel())
    if x.size == 0:
        raise DomainError("no residuals")
    N = x.size
    probs = (np.arange(1, N + 1) - 0.5) / N
    return np.column_stack([quantile(probs), x])


def _normal_quantile(phi):
    return lambda p: reference_quantile("normal", phi, p)


@dataclass
class SimulationReport:
    config: SimConfig
    X: np.ndarray
    mu_true: np.ndarray
    samples: dict
    mu_hat: np.ndarray
    beta_hat: np.ndarray
    phi_hat: np.ndarray
    replication_index: np.ndarray
    failures: list
    out_of_support: int
    moments: dict = field(repr=False)

    @property
    def n_ok(self):
        return self.beta_hat.shape[0]

    @property
    def phi_hat_mean(self):
        return float(np.mean(self.phi_hat))

    @property
    def phi_reference(self):
        """Precision of the estimated reference law: the reciprocal of the
        average estimated dispersion ``1/phi_hat``."""
        return float(1.0 / np.mean(1.0 / self.phi_hat))

    @property
    def family(self):
        return get_family(self.config.family)

    # -- bias of beta_hat ------------------------------------------------

    @cached_property
    def bias_theory(self):
        """``O(n^{-1})`` bias of ``beta_hat`` at the true parameters."""
        spec = ModelSpec(self.config.family, self.config.link, self.X, phi=self.config.phi)
        return bias_at(spec, self.config.beta)[0]

    @property
    def bias_monte_carlo(self):
        """``(mean(beta_hat) - beta, standard error)``."""
        err = self.beta_hat - np.asarray(self.config.beta)
        return err.mean(axis=0), err.std(axis=0, ddof=1) / np.sqrt(self.n_ok)

    # -- reference laws -------------------------------------------------

    def _true_cdf(self, obs=None):
        fam, phi = self.family, self.phi_reference
        mu = 1.0
        if fam.token == "inverse_gaussian":
            mu = float(np.mean(self.mu_hat if obs is None else self.mu_hat[:, obs]))
        return lambda x: fam.residual_cdf(x, mu, phi)

    def _true_quantile(self):
        fam = self.family
        mu = float(np.mean(self.mu_hat)) if fam.token == "inverse_gaussian" else None
        return lambda p: reference_quantile(fam, self.phi_reference, p, mu)

    # -- tables ------------------------------------------------------------

    def moment_table(self):
        """Rows ``(obs, kind, mean, variance, skewness, kurtosis)`` per observation."""
        rows = []
        for i in range(self.config.n):
            for k in KINDS:
                acc = self.moments[k]
                rows.append((i + 1, k, float(acc.mean[i]), float(acc.variance[i]),
                             float(acc.skewness[i]), float(acc.kurtosis[i])))
        return rows

    def pooled_moments(self, kind):
        return gof.sample_moments(self.samples[kind])

    @cached_property
    def gof_one_sample(self):
        """K-S and A-D distances of Pearson and corrected residuals from the
        estimated true-residual law; first row is the pooled sample."""
        rows = []
        for obs in [None] + list(range(self.config.n)):
            cdf = self._true_cdf(obs)
            row = {"obs": "all" if obs is None else obs + 1}
            for k in ("pearson", "corrected"):
                s = self.samples[k] if obs is None else self.samples[k][:, obs]
                row[f"ks_{k}"] = gof.ks_one_sample(s, cdf)
                row[f"ad_{k}"] = gof.ad_one_sample(s, cdf)
            rows.append(row)
        return rows

    @cached_property
    def gof_two_sample(self):
        """K-S and A-D distances between the Pearson/corrected residuals and
        the simulated true residuals; first row is the pooled sample."""
        rows = []
        for obs in [None] + list(range(self.config.n)):
            eps = self.samples["true"] if obs is None else self.samples["true"][:, obs]
            row = {"obs": "all" if obs is None else obs + 1}
            for k in ("pearson", "corrected"):
                s = self.samples[k] if obs is None else self.samples[k][:, obs]
                row[f"ks_{k}"] = gof.ks_two_sample(s, eps)
                row[f"ad_{k}"] = gof.ad_two_sample(s, eps)
            rows.append(row)
        return rows

    def qq(self, kind):
        """Pooled QQ pairs.

        Pearson residuals against ``N(0, 1/phi_ref)``, corrected residuals
        against the estimated true-residual law and adjusted residuals
        against ``N(0, 1)``.
        """
        if kind == "pearson":
            q = _normal_quantile(self.phi_reference)
        elif kind == "corrected":
            q = self._true_quantile()
        elif kind == "adjusted":
            q = _normal_quantile(1.0)
        else:
            raise DomainError(f"no QQ reference for {kind!r}")
        return qq_pairs(self.samples[kind], q)

    def meta(self):
        mc_bias, mc_se = self.bias_monte_carlo
        return {
            "config": asdict(self.config),
            "seed": self.config.seed,
            "replications_ok": int(self.n_ok),
            "failure_count": len(self.failures),
            "failures": [[int(r), msg] for r, msg in self.failures[:20]],
            "out_of_support_count": int(self.out_of_support),
            "phi_hat_mean": self.phi_hat_mean,
            "phi_reference": self.phi_reference,
            "bias_beta_theory": self.bias_theory.tolist(),
            "bias_beta_monte_carlo": mc_bias.tolist(),
            "bias_beta_monte_carlo_se": mc_se.tolist(),
            "notes": [
                "one-sample and QQ references use phi_reference = 1 / mean(1 / phi_hat), the reciprocal of the average estimated dispersion",
                "qq_corrected holds raw corrected residuals (not studentized) against the estimated true-residual law",
                "qq_pearson uses N(0, 1/phi_reference); qq_adjusted uses N(0, 1)",
            ] + (
                ["inverse Gaussian reference laws plug in averaged fitted means (approximation)"]
                if self.family.token == "inverse_gaussian" else []
            ),
        }


def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else str(v)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


OUTPUT_FILES = (
    "moments.csv", "gof_one_sample.csv", "gof_two_sample.csv",
    "qq_pearson.csv", "qq_corrected.csv", "qq_adjusted.csv", "run_meta.json",
)


def write_report(report, outdir):
    """Write every output table of ``report`` into ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    stats = ("mean", "variance", "skewness", "kurtosis")
    header = ["obs"] + [f"{s}_{k}" for s in stats for k in KINDS]
    rows = []
    for i in range(report.config.n):
        row = [i + 1]
        for s in stats:
            for k in KINDS:
                row.append(float(getattr(report.moments[k], s)[i]))
        rows.append(row)
    _write_csv(os.path.join(outdir, "moments.csv"), header, rows)

    cols = ["obs", "ks_pearson", "ad_pearson", "ks_corrected", "ad_corrected"]
    for name, table in (("gof_one_sample.csv", report.gof_one_sample),
                        ("gof_two_sample.csv", report.gof_two_sample)):
        _write_csv(os.path.join(outdir, name), cols, [[r[c] for c in cols] for r in table])

    for kind in ("pearson", "corrected", "adjusted"):
        pairs = report.qq(kind)
        _write_csv(os.path.join(outdir, f"qq_{kind}.csv"), ["theoretical", "empirical"],
                   ([float(a), float(b)] for a, b in pairs))

    with open(os.path.join(outdir, "run_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(report.meta(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [os.path.join(outdir, f) for f in OUTPUT_FILES]
