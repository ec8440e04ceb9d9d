"""Logistic regression by IRLS and random-intercept logistic GLMMs by Laplace approximation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats as sps
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize_scalar

from ..errors import DegenerateData, NonConvergence, SeparationError, SingularDesign

Z95 = 1.959963984540054
SEPARATION_BOUND = 30.0

DEFAULT_TERMS = ("(Intercept)", "zip quintile", "fee waiver: Yes", "first gen: Yes",
                 "school type: Public", "perf quintile", "Tier 2", "Tier 3")
DEFAULT_GROUPS = ("institution", "prompt_variant", "attr_seed")
GROUP_LABELS = {"institution": "Institution", "prompt_variant": "Prompt", "attr_seed": "Attribute seed"}


def stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if p < 0.1:
        return "."
    return ""


@dataclass
class ModelFit:
    terms: list[str]
    beta: np.ndarray
    se: np.ndarray
    loglik: float
    converged: bool
    n_iter: int
    n_obs: int
    method: str = "irls"
    variances: dict[str, float] = field(default_factory=dict)
    n_levels: dict[str, int] = field(default_factory=dict)
    note: str = ""

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.beta / self.se

    @property
    def p_values(self) -> np.ndarray:
        return 2.0 * sps.norm.sf(np.abs(self.z))

    @property
    def odds_ratios(self) -> np.ndarray:
        return np.exp(self.beta)

    @property
    def ci(self) -> tuple[np.ndarray, np.ndarray]:
        return np.exp(self.beta - Z95 * self.se), np.exp(self.beta + Z95 * self.se)

    @property
    def deviance(self) -> float:
        return -2.0 * self.loglik

    def coef(self, term: str) -> float:
        return float(self.beta[self.terms.index(term)])

    def to_dict(self) -> dict:
        lo, hi = self.ci
        return {
            "method": self.method,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "n_obs": self.n_obs,
            "loglik": self.loglik,
            "deviance": self.deviance,
            "note": self.note,
            "terms": [
                {"term": t, "beta": float(b), "se": float(s), "odds_ratio": float(o),
                 "ci_low": float(l), "ci_high": float(h), "p_value": float(p), "stars": stars(p)}
                for t, b, s, o, l, h, p in zip(self.terms, self.beta, self.se, self.odds_ratios,
                                                lo, hi, self.p_values)
            ],
            "random_effects": [
                {"group": g, "variance": v, "sd": math.sqrt(v), "levels": self.n_levels.get(g)}
                for g, v in self.variances.items()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def loglik_logistic(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _expit(eta: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -eta))


def _check_inputs(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be n x p and y of length n")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be binary 0/1")
    n, p = X.shape
    if n <= p:
        raise SingularDesign(f"need n > p (n={n}, p={p})")
    if np.linalg.matrix_rank(X) < p:
        raise SingularDesign("design matrix is not of full column rank")
    return X, y


def fit_logistic_irls(X, y, terms: Sequence[str] | None = None, tol: float = 1e-10,
                      max_iter: int = 100) -> ModelFit:
    """Maximum-likelihood logistic regression by Newton/IRLS with step halving."""
    X, y = _check_inputs(X, y)
    n, p = X.shape
    terms = list(terms) if terms is not None else [f"x{j}" for j in range(p)]
    if len(terms) != p:
        raise ValueError("terms must match the columns of X")
    beta = np.zeros(p)
    ll = loglik_logistic(X @ beta, y)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = _expit(X @ beta)
        w = mu * (1.0 - mu)
        info = X.T @ (X * w[:, None])
        try:
            step = cho_solve(cho_factor(info), X.T @ (y - mu))
        except LinAlgError:
            raise SeparationError("information matrix collapsed; outcomes appear separable") from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = loglik_logistic(X @ cand, y)
            if ll_new >= ll - 1e-12 or t < 1e-8:
                break
            t *= 0.5
        delta = np.max(np.abs(cand - beta))
        beta, ll = cand, ll_new
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError(f"coefficients diverging (max |beta| = {np.max(np.abs(beta)):.1f})")
        if delta < tol:
            converged = True
            break
    if not converged:
        raise NonConvergence(f"IRLS did not converge in {max_iter} iterations")
    mu = _expit(X @ beta)
    info = X.T @ (X * (mu * (1.0 - mu))[:, None])
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    return ModelFit(terms, beta, se, ll, converged, it, n)


def score_max_norm(X, y, beta) -> float:
    X = np.asarray(X, dtype=float)
    return float(np.max(np.abs(X.T @ (np.asarray(y, float) - _expit(X @ np.asarray(beta))))))


# -- GLMM -------------------------------------------------------------------------------

@dataclass
class _Mode:
    theta: np.ndarray
    laplace: float
    loglik: float
    hess: np.ndarray


class _LaplaceProblem:
    """Penalized IRLS over (beta, v) with u = sigma * v and v ~ N(0, I).

    The joint Hessian is assembled blockwise from bincounts, so the cost per
    iteration grows with n * p**2 rather than n * (p + q)**2.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, codes: Sequence[np.ndarray], n_levels: Sequence[int],
                 tol: float, max_iter: int):
        self.X, self.y = X, y
        self.p = X.shape[1]
        self.codes = [np.asarray(c, dtype=np.intp) for c in codes]
        self.n_levels = list(n_levels)
        self.offsets = np.r_[0, np.cumsum(self.n_levels)].astype(int) + self.p
        self.q = int(sum(n_levels))
        self.tol, self.max_iter = tol, max_iter
        self.theta = np.zeros(self.p + self.q)
        self.penalty = np.r_[np.zeros(self.p), np.ones(self.q)]

    def _eta(self, theta: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        eta = self.X @ theta[:self.p]
        for k, c in enumerate(self.codes):
            if sigma[k] != 0.0:
                eta = eta + sigma[k] * theta[self.offsets[k]:self.offsets[k + 1]][c]
        return eta

    def _gradient(self, r: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        parts = [self.X.T @ r]
        for k, c in enumerate(self.codes):
            parts.append(sigma[k] * np.bincount(c, weights=r, minlength=self.n_levels[k]))
        return np.concatenate(parts)

    def _hessian(self, w: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        p, off = self.p, self.offsets
        H = np.zeros((p + self.q, p + self.q))
        Xw = self.X * w[:, None]
        H[:p, :p] = self.X.T @ Xw
        for k, ck in enumerate(self.codes):
            mk, sk = self.n_levels[k], sigma[k]
            blk = slice(off[k], off[k + 1])
            cross = np.stack([np.bincount(ck, weights=Xw[:, j], minlength=mk) for j in range(p)]) * sk
            H[:p, blk] = cross
            H[blk, :p] = cross.T
            H[blk, blk] = np.diag(np.bincount(ck, weights=w, minlength=mk) * sk * sk)
            for l in range(k + 1, len(self.codes)):
                ml = self.n_levels[l]
                zz = np.bincount(ck * ml + self.codes[l], weights=w, minlength=mk * ml).reshape(mk, ml)
                zz = zz * (sk * sigma[l])
                H[blk, off[l]:off[l + 1]] = zz
                H[off[l]:off[l + 1], blk] = zz.T
        H[np.diag_indices_from(H)] += self.penalty
        return H

    def mode(self, sigma: np.ndarray) -> _Mode:
        sigma = np.asarray(sigma, float)
        y = self.y
        theta = self.theta.copy()

        def objective(th):
            v = th[self.p:]
            return loglik_logistic(self._eta(th, sigma), y) - 0.5 * v @ v

        obj = objective(theta)
        for _ in range(self.max_iter):
            mu = _expit(self._eta(theta, sigma))
            H = self._hessian(mu * (1.0 - mu), sigma)
            grad = self._gradient(y - mu, sigma) - self.penalty * theta
            try:
                step = cho_solve(cho_factor(H), grad)
            except LinAlgError:
                raise SingularDesign("penalized information matrix is singular") from None
            t = 1.0
            while True:
                cand = theta + t * step
                obj_new = objective(cand)
                if obj_new >= obj - 1e-12 or t < 1e-8:
                    break
                t *= 0.5
            delta = np.max(np.abs(cand - theta))
            theta, obj = cand, obj_new
            if np.max(np.abs(theta[:self.p])) > SEPARATION_BOUND:
                raise SeparationError("fixed effects diverging inside the mixed model")
            if delta < self.tol:
                break
        else:
            raise NonConvergence("penalized IRLS did not converge")
        eta = self._eta(theta, sigma)
        mu = _expit(eta)
        H = self._hessian(mu * (1.0 - mu), sigma)
        _, logdet = np.linalg.slogdet(H[self.p:, self.p:])
        self.theta = theta
        return _Mode(theta, obj - 0.5 * logdet, loglik_logistic(eta, y), H)


def _drop_aliased(X: np.ndarray, names: list[str], tol: float = 1e-9) -> tuple[np.ndarray, list[str]]:
    keep: list[int] = []
    for j in range(X.shape[1]):
        trial = keep + [j]
        if np.linalg.matrix_rank(X[:, trial], tol=tol * max(1.0, np.abs(X[:, trial]).max())) == len(trial):
            keep = trial
    return X[:, keep], [names[j] for j in keep]


def fit_fixed_with_dummies(X, y, terms: Sequence[str], codes: Mapping[str, np.ndarray],
                           note: str = "") -> ModelFit:
    """Fixed-effects stand-in for the mixed model: one dummy per non-reference group level."""
    cols = [np.asarray(X, float)]
    names = list(terms)
    for g, c in codes.items():
        c = np.asarray(c)
        for level in range(1, int(c.max()) + 1):
            cols.append((c == level).astype(float)[:, None])
            names.append(f"{g}[{level}]")
    Xd, kept = _drop_aliased(np.hstack(cols), names)
    fit = fit_logistic_irls(Xd, y, kept)
    fit.method = "fixed-effects-fallback"
    fit.note = note
    return fit


def fit_glmm_laplace(X, y, terms: Sequence[str], groups: Mapping[str, Sequence], tol: float = 1e-8,
                     max_iter: int = 100, fixed_variances: Mapping[str, float] | None = None,
                     sigma_max: float = 5.0, max_sweeps: int = 20, outer_tol: float = 1e-3,
                     fallback: bool = True) -> ModelFit:
    """Logistic GLMM with crossed random intercepts, one per grouping factor.

    Variances not given in ``fixed_variances`` are estimated by coordinate-wise
    bounded search on the Laplace log-likelihood. If the mixed fit fails and
    ``fallback`` is set, a fixed-effects fit with group dummies is returned
    instead, with ``method`` marking the substitution.
    """
    X, y = _check_inputs(X, y)
    terms = list(terms)
    if len(terms) != X.shape[1]:
        raise ValueError("terms must match the columns of X")
    names = list(groups)
    codes, levels = [], []
    for g in names:
        uniq, inv = np.unique(np.asarray(groups[g]), return_inverse=True)
        if len(inv) != len(y):
            raise ValueError(f"group {g!r} has the wrong length")
        if len(uniq) < 2:
            raise DegenerateData(f"grouping factor {g!r} has fewer than 2 levels")
        codes.append(inv)
        levels.append(len(uniq))
    fixed = dict(fixed_variances or {})
    unknown = set(fixed) - set(names)
    if unknown:
        raise ValueError(f"fixed_variances names unknown groups: {sorted(unknown)}")
    try:
        fit = _fit_glmm(X, y, terms, names, codes, levels, fixed, tol, max_iter, sigma_max,
                        max_sweeps, outer_tol)
    except (NonConvergence, SingularDesign, SeparationError) as exc:
        if not fallback:
            raise
        return fit_fixed_with_dummies(X, y, terms, dict(zip(names, codes)),
                                      note=f"mixed model failed ({type(exc).__name__}: {exc})")
    return fit


def _fit_glmm(X, y, terms, names, codes, levels, fixed, tol, max_iter, sigma_max, max_sweeps, outer_tol):
    prob = _LaplaceProblem(X, y, codes, levels, tol, max_iter)
    sigma = np.array([math.sqrt(fixed[g]) if g in fixed else 0.5 for g in names])
    free = [k for k, g in enumerate(names) if g not in fixed]

    def neg_laplace(k, s):
        trial = sigma.copy()
        trial[k] = s
        return -prob.mode(trial).laplace

    converged = True
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        before = sigma.copy()
        for k in free:
            res = minimize_scalar(lambda s: neg_laplace(k, s), bounds=(0.0, sigma_max), method="bounded",
                                  options={"xatol": outer_tol / 4})
            best_s, best_v = float(res.x), float(res.fun)
            at_zero = neg_laplace(k, 0.0)
            if at_zero <= best_v:
                best_s = 0.0
            sigma[k] = best_s
        if not free or np.max(np.abs(sigma - before)) < outer_tol:
            break
    else:
        converged = False
    mode = prob.mode(sigma)
    p = X.shape[1]
    cov = np.linalg.inv(mode.hess)
    se = np.sqrt(np.diag(cov)[:p])
    return ModelFit(
        terms=list(terms), beta=mode.theta[:p].copy(), se=se, loglik=mode.laplace, converged=converged,
        n_iter=sweeps, n_obs=len(y), method="glmm-laplace",
        variances={g: float(s ** 2) for g, s in zip(names, sigma)},
        n_levels=dict(zip(names, levels)),
        note="" if converged else "variance search hit the sweep limit; best iterate reported",
    )


# -- design + reports ---------------------------------------------------------------------

def design_matrix(df: pd.DataFrame, terms: Sequence[str] = DEFAULT_TERMS) -> np.ndarray:
    """Columns for the default term set from a joined-records frame."""
    builders = {
        "(Intercept)": lambda d: np.ones(len(d)),
        "zip quintile": lambda d: d["zip_quintile"].to_numpy(float),
        "fee waiver: Yes": lambda d: d["fee_waiver"].astype(bool).to_numpy(float),
        "first gen: Yes": lambda d: d["first_gen"].astype(bool).to_numpy(float),
        "school type: Public": lambda d: (d["school_type"] == "Public").to_numpy(float),
        "perf quintile": lambda d: d["perf_quintile"].to_numpy(float),
        "ses quintile": lambda d: d["ses_quintile"].to_numpy(float),
        "Tier 2": lambda d: (d["tier"] == "Tier2").to_numpy(float),
        "Tier 3": lambda d: (d["tier"] == "Tier3").to_numpy(float),
    }
    unknown = [t for t in terms if t not in builders]
    if unknown:
        raise ValueError(f"unknown terms: {unknown}")
    return np.column_stack([builders[t](df) for t in terms])


def usable_terms(df: pd.DataFrame, terms: Sequence[str] = DEFAULT_TERMS) -> list[str]:
    """Drop terms that are constant in ``df`` (e.g. tiers absent from a subset)."""
    X = design_matrix(df, terms)
    return [t for j, t in enumerate(terms) if t == "(Intercept)" or np.ptp(X[:, j]) > 0]


def fit_admit_model(df: pd.DataFrame, terms: Sequence[str] = DEFAULT_TERMS,
                    groups: Sequence[str] = DEFAULT_GROUPS, **kwargs) -> ModelFit:
    """Fit the admission GLMM on resolved (admit/reject) rows of a joined frame."""
    d = df[df["decision"].isin(["admit", "reject"])]
    terms = usable_terms(d, terms)
    X = design_matrix(d, terms)
    y = (d["decision"] == "admit").to_numpy(float)
    grp = {g: d[g].to_numpy() for g in groups if d[g].nunique() >= 2}
    if not grp:
        return fit_logistic_irls(X, y, terms)
    return fit_glmm_laplace(X, y, terms, grp, **kwargs)


def or_report(fit: ModelFit) -> pd.DataFrame:
    lo, hi = fit.ci
    rows = []
    for t, o, l, h, p in zip(fit.terms, fit.odds_ratios, lo, hi, fit.p_values):
        rows.append({"term": t, "OR": f"{o:.2f}", "stars": stars(p), "CI": f"{l:.1f}-{h:.1f}"})
    return pd.DataFrame(rows, columns=["term", "OR", "stars", "CI"])


def variance_report(fit: ModelFit) -> pd.DataFrame:
    rows = [{"group": GROUP_LABELS.get(g, g), "variance": f"{v:.2f}", "sd": f"{math.sqrt(v):.2f}"}
            for g, v in fit.variances.items()]
    return pd.DataFrame(rows, columns=["group", "variance", "sd"])
