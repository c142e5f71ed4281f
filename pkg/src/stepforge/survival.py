"""Weighted Cox proportional-hazards fitting and concordance evaluation.

The partial likelihood uses Breslow tie handling with observation weights;
variances come from the robust sandwich built on weighted score residuals.
Cross-validated concordance uses event-stratified folds and fold-level
averaging, fully determined by the configured seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .dsp import compensated_sum
from .model import AnalysisConfig


class ConvergenceError(RuntimeError):
    """Newton-Raphson failed to converge; the last iterate is attached."""

    def __init__(self, message: str, last_fit: "CoxFit"):
        super().__init__(message)
        self.last_fit = last_fit


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored follow-up with covariates and observation weights."""

    followup_months: np.ndarray
    event: np.ndarray
    covariates: np.ndarray
    weights: np.ndarray
    covariate_names: tuple[str, ...]
    subject_ids: tuple[str, ...] | None = None
    scaling: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        t = np.asarray(self.followup_months, dtype=np.float64)
        ev = np.asarray(self.event, dtype=bool)
        x = np.asarray(self.covariates, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("covariates must be a 2-D matrix")
        n, p = x.shape
        if not (len(t) == len(ev) == len(w) == n):
            raise ValueError("followup, event, covariates, weights must align")
        if len(self.covariate_names) != p:
            raise ValueError("covariate_names must match the covariate columns")
        if len(set(self.covariate_names)) != p:
            raise ValueError("covariate names must be unique")
        if self.subject_ids is not None and len(self.subject_ids) != n:
            raise ValueError("subject_ids must align with rows")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise ValueError("follow-up must be finite and nonnegative")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be complete (no NaN/inf)")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        if not ev.any():
            raise ValueError("dataset must contain at least one event")
        object.__setattr__(self, "followup_months", t)
        object.__setattr__(self, "event", ev)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    def __len__(self) -> int:
        return len(self.followup_months)

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def column(self, name: str) -> np.ndarray:
        return self.covariates[:, self._index(name)]

    def _index(self, name: str) -> int:
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise KeyError(f"unknown covariate: {name!r}") from None

    def select(self, names: Sequence[str]) -> "SurvivalDataset":
        """New dataset restricted to the named covariate columns."""
        idx = [self._index(n) for n in names]
        return replace(
            self,
            covariates=self.covariates[:, idx],
            covariate_names=tuple(names),
            scaling={k: v for k, v in self.scaling.items() if k in names},
        )

    def take(self, rows: Sequence[int]) -> "SurvivalDataset":
        """New dataset restricted to the given row indices (order preserved)."""
        rows = np.asarray(rows, dtype=np.intp)
        ids = (
            tuple(self.subject_ids[i] for i in rows)
            if self.subject_ids is not None
            else None
        )
        return replace(
            self,
            followup_months=self.followup_months[rows],
            event=self.event[rows],
            covariates=self.covariates[rows],
            weights=self.weights[rows],
            subject_ids=ids,
        )


@dataclass(frozen=True)
class CoxFit:
    beta: np.ndarray
    covariance: np.ndarray
    loglik_seq: tuple[float, ...]
    converged: bool
    n_events: int
    covariate_names: tuple[str, ...]

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def coef(self, name: str) -> tuple[float, float]:
        """(beta, robust se) for one covariate."""
        try:
            i = self.covariate_names.index(name)
        except ValueError:
            raise KeyError(f"unknown covariate: {name!r}") from None
        return float(self.beta[i]), float(self.se[i])


def _risk_sums(
    times: np.ndarray, eta: np.ndarray, w: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Breslow risk-set sums S0/S1/S2 at each unique time.

    Computed as reverse cumulative sums over time-sorted rows, so S(t)
    aggregates every row with time >= t.
    """
    order = np.argsort(times, kind="stable")
    times_sorted = times[order]
    unique_times = np.unique(times)
    rexp = (w * np.exp(eta))[order][::-1]
    xs = x[order][::-1]
    cum0 = np.cumsum(rexp)
    cum1 = np.cumsum(rexp[:, None] * xs, axis=0)
    cum2 = np.cumsum(rexp[:, None, None] * xs[:, :, None] * xs[:, None, :], axis=0)
    first_pos = np.searchsorted(times_sorted, unique_times, side="left")
    at = len(times) - first_pos - 1
    return unique_times, cum0[at], cum1[at], cum2[at]


def _event_aggregates(
    data: SurvivalDataset, unique_times: np.ndarray, eta: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-unique-time event sums: weight mass, w*eta, w*x, subject bucket."""
    t = data.followup_months
    w = data.weights
    ev = data.event
    x = data.covariates
    u_of_subject = np.searchsorted(unique_times, t)
    d0 = np.zeros(len(unique_times))
    d_eta = np.zeros(len(unique_times))
    d1 = np.zeros((len(unique_times), x.shape[1]))
    ev_idx = np.flatnonzero(ev)
    np.add.at(d0, u_of_subject[ev_idx], w[ev_idx])
    np.add.at(d_eta, u_of_subject[ev_idx], w[ev_idx] * eta[ev_idx])
    np.add.at(d1, u_of_subject[ev_idx], w[ev_idx, None] * x[ev_idx])
    return d0, d_eta, d1, u_of_subject


def _loglik_score_hess(
    data: SurvivalDataset, beta: np.ndarray, want_derivs: bool = True
) -> tuple[float, np.ndarray | None, np.ndarray | None]:
    t = data.followup_months
    x = data.covariates
    w = data.weights
    eta = x @ beta
    eta = eta - eta.max()  # global shift cancels in the partial likelihood
    unique_times, s0, s1, s2 = _risk_sums(t, eta, w, x)
    d0, d_eta, d1, _ = _event_aggregates(data, unique_times, eta)
    has_events = d0 > 0
    # an overshooting trial step can underflow every at-risk exp(eta) to 0;
    # report -inf so the caller rejects the step instead of chasing log(0)
    if not np.all(s0[has_events] > 0.0):
        return -math.inf, None, None
    ll = compensated_sum(
        d_eta[has_events] - d0[has_events] * np.log(s0[has_events])
    )
    if not math.isfinite(ll):
        return -math.inf, None, None
    if not want_derivs:
        return ll, None, None
    with np.errstate(invalid="ignore", divide="ignore"):
        xbar = s1 / s0[:, None]
        v = s2 / s0[:, None, None] - xbar[:, :, None] * xbar[:, None, :]
    xbar[~has_events] = 0.0
    v[~has_events] = 0.0
    score = d1[has_events].sum(axis=0) - (d0[:, None] * xbar)[has_events].sum(axis=0)
    hess = -(d0[has_events, None, None] * v[has_events]).sum(axis=0)
    return ll, score, hess


def breslow_partial_loglik(data: SurvivalDataset, beta: Sequence[float]) -> float:
    """Weighted Breslow partial log-likelihood at a given coefficient vector."""
    ll, _, _ = _loglik_score_hess(data, np.asarray(beta, dtype=np.float64), False)
    return ll


def _score_residuals(data: SurvivalDataset, beta: np.ndarray) -> np.ndarray:
    """Per-subject weighted score residuals (rows sum to the total score)."""
    t = data.followup_months
    x = data.covariates
    w = data.weights
    ev = data.event
    eta = x @ beta
    eta = eta - eta.max()
    unique_times, s0, s1, _ = _risk_sums(t, eta, w, x)
    d0, _, _, u_of_subject = _event_aggregates(data, unique_times, eta)
    # hazard increments exist only at event times; never divide elsewhere
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(d0 > 0.0, d0 / s0, 0.0)
        xbar = np.where(s0[:, None] > 0.0, s1 / s0[:, None], 0.0)
    # cumulative hazard-increment sums over event times <= t_i
    g0 = np.cumsum(rate)
    g1 = np.cumsum(rate[:, None] * xbar, axis=0)
    rexp = w * np.exp(eta)
    resid = -rexp[:, None] * (x * g0[u_of_subject, None] - g1[u_of_subject])
    resid[ev] += w[ev, None] * (x[ev] - xbar[u_of_subject[ev]])
    return resid


def cox_fit(
    data: SurvivalDataset, max_iter: int = 50, tol: float = 1e-9
) -> CoxFit:
    """Maximize the weighted Breslow partial likelihood by Newton-Raphson.

    Steps that fail to improve the objective are halved (up to 30 times);
    convergence is a relative log-likelihood change below ``tol``.  Columns
    are scaled to unit dispersion internally and the fit mapped back, so raw
    step counts may be entered without conditioning trouble.  The covariance
    is the robust sandwich built from weighted score residuals.
    """
    x = data.covariates
    n, p = x.shape
    if p == 0:
        raise ValueError("no covariates to fit")
    centered = x - x.mean(axis=0)
    if np.linalg.matrix_rank(centered) < p:
        raise ValueError(
            "design matrix is rank deficient after centering; "
            "drop constant or collinear columns"
        )
    col_scale = centered.std(axis=0, ddof=1)
    col_scale[col_scale == 0.0] = 1.0
    scaled = replace(
        data, covariates=x / col_scale, scaling={}, covariate_names=data.covariate_names
    )

    beta = np.zeros(p)
    ll, score, hess = _loglik_score_hess(scaled, beta)
    loglik_seq = [ll]
    converged = False
    for _ in range(max_iter):
        try:
            delta = np.linalg.solve(-hess, score)
        except np.linalg.LinAlgError as exc:
            raise ValueError("singular information matrix") from exc
        step = 1.0
        new_beta = beta + delta
        new_ll, new_score, new_hess = _loglik_score_hess(scaled, new_beta)
        halvings = 0
        while new_ll < ll and halvings < 30:
            step *= 0.5
            halvings += 1
            new_beta = beta + step * delta
            new_ll, new_score, new_hess = _loglik_score_hess(scaled, new_beta)
        if new_ll < ll:
            break  # no improving step found
        beta, ll, score, hess = new_beta, new_ll, new_score, new_hess
        loglik_seq.append(ll)
        if abs(loglik_seq[-1] - loglik_seq[-2]) < tol * (abs(loglik_seq[-2]) + tol):
            converged = True
            break

    with np.errstate(all="ignore"):
        resid = _score_residuals(scaled, beta)
        try:
            bread = np.linalg.inv(-hess)
        except np.linalg.LinAlgError:
            bread = np.full((p, p), np.nan)
        meat = resid.T @ resid
        cov_scaled = bread @ meat @ bread
        cov_scaled = 0.5 * (cov_scaled + cov_scaled.T)
    if converged and not np.all(np.isfinite(cov_scaled)):
        raise ValueError("sandwich covariance is not finite at the optimum")
    # map back to raw covariate units
    inv_scale = 1.0 / col_scale
    beta_raw = beta * inv_scale
    cov_raw = cov_scaled * np.outer(inv_scale, inv_scale)
    fit = CoxFit(
        beta=beta_raw,
        covariance=cov_raw,
        loglik_seq=tuple(loglik_seq),
        converged=converged,
        n_events=data.n_events,
        covariate_names=data.covariate_names,
    )
    if not converged:
        raise ConvergenceError(
            f"Newton-Raphson did not converge in {max_iter} iterations", fit
        )
    return fit


def _safe_exp(v: float) -> float:
    try:
        return math.exp(v)
    except OverflowError:
        return math.inf


def hazard_ratio(
    fit: CoxFit, covariate: str, delta: float
) -> tuple[float, float, float]:
    """Hazard ratio and 95% CI for a ``delta``-unit covariate increase."""
    beta, se = fit.coef(covariate)
    z = 1.959963984540054
    ends = sorted((delta * (beta - z * se), delta * (beta + z * se)))
    return _safe_exp(delta * beta), _safe_exp(ends[0]), _safe_exp(ends[1])


def wald_p_value(fit: CoxFit, covariate: str) -> float:
    """Two-sided Wald p-value using the robust standard error."""
    beta, se = fit.coef(covariate)
    if se == 0.0:
        return 1.0 if beta == 0.0 else 0.0
    return math.erfc(abs(beta / se) / math.sqrt(2.0))


def standardize(data: SurvivalDataset, covariate: str) -> SurvivalDataset:
    """Center and scale one covariate, recording (mean, sd) for reporting."""
    i = data._index(covariate)
    col = data.covariates[:, i]
    mean = float(col.mean())
    sd = float(col.std(ddof=1))
    if sd == 0.0:
        raise ValueError(f"covariate {covariate!r} has zero variance")
    x = data.covariates.copy()
    x[:, i] = (col - mean) / sd
    scaling = dict(data.scaling)
    scaling[covariate] = (mean, sd)
    return replace(data, covariates=x, scaling=scaling)


def concordance(predictors: Sequence[float], data: SurvivalDataset) -> float:
    """Weighted Harrell's C over comparable pairs.

    Pair (i, j) is comparable when i has an event and t_i < t_j; its weight
    is w_i * w_j.  A strictly higher predictor on the earlier event counts
    as concordant, predictor ties count half.  Sums use exact compensated
    summation, so any pair ordering gives the same result bit for bit.
    """
    pred = np.asarray(predictors, dtype=np.float64)
    if pred.shape != data.followup_months.shape:
        raise ValueError("predictors must align with data rows")
    t = data.followup_months
    w = data.weights
    ev = data.event

    def pair_terms(counting: str):
        for i in np.flatnonzero(ev):
            for j in range(len(t)):
                if t[i] < t[j]:
                    pw = w[i] * w[j]
                    if counting == "comparable":
                        yield pw
                    elif pred[i] > pred[j]:
                        yield pw
                    elif pred[i] == pred[j]:
                        yield 0.5 * pw

    comparable = compensated_sum(pair_terms("comparable"))
    if comparable == 0.0:
        raise ValueError("no comparable pairs")
    return compensated_sum(pair_terms("concordant")) / comparable


@dataclass(frozen=True)
class FoldPlan:
    """Deterministic event-stratified k-fold assignment of rows to folds."""

    seed: int
    k: int
    repeat_index: int
    assignment: tuple[int, ...]  # fold id per row

    def fold_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) != fold)


def make_fold_plan(
    event: np.ndarray, k: int, seed: int, repeat_index: int
) -> FoldPlan:
    """Shuffle events and censored rows separately, then deal one cycle.

    Events are dealt round-robin first and censored rows continue the same
    cycle, so fold sizes and fold event counts each differ by at most one.
    """
    ev = np.asarray(event, dtype=bool)
    if k < 2:
        raise ValueError("need at least 2 folds")
    if len(ev) < k:
        raise ValueError("fewer rows than folds")
    rng = np.random.default_rng(seed + repeat_index)
    events = rng.permutation(np.flatnonzero(ev))
    censored = rng.permutation(np.flatnonzero(~ev))
    assignment = np.empty(len(ev), dtype=np.int64)
    for m, row in enumerate(np.concatenate([events, censored])):
        assignment[row] = m % k
    return FoldPlan(seed=seed, k=k, repeat_index=repeat_index,
                    assignment=tuple(int(a) for a in assignment))


def _plan_with_events_everywhere(
    data: SurvivalDataset, k: int, seed: int, repeat_index: int
) -> FoldPlan:
    for attempt_seed in (seed, seed + 1_000_003):
        plan = make_fold_plan(data.event, k, attempt_seed, repeat_index)
        ok = all(
            data.event[plan.fold_rows(f)].any() and data.event[plan.train_rows(f)].any()
            for f in range(k)
        )
        if ok:
            return plan
    raise ValueError(
        "could not build folds with events in every fold; too few events"
    )


def repeated_cv_concordance(
    data: SurvivalDataset,
    covariates: Sequence[str],
    cfg: AnalysisConfig,
    repeats: int | None = None,
) -> tuple[float, list[float]]:
    """Mean cross-validated concordance over seeded repeats.

    Each repeat r builds an event-stratified fold plan from (rng_seed + r),
    fits on the training rows, scores the held-out rows, and averages fold
    concordances; the return value averages the repeats.  Deterministic for
    a fixed config.
    """
    reps = cfg.cv_repeats if repeats is None else repeats
    if cfg.cv_folds < 2:
        raise ValueError("cfg.cv_folds must be at least 2")
    subset = data.select(covariates)
    per_repeat: list[float] = []
    for r in range(reps):
        plan = _plan_with_events_everywhere(subset, cfg.cv_folds, cfg.rng_seed + r, r)
        fold_cs: list[float] = []
        for f in range(cfg.cv_folds):
            train = subset.take(plan.train_rows(f))
            test = subset.take(plan.fold_rows(f))
            fit = cox_fit(train)
            pred = test.covariates @ fit.beta
            fold_cs.append(concordance(pred, test))
        per_repeat.append(compensated_sum(fold_cs) / len(fold_cs))
    return compensated_sum(per_repeat) / len(per_repeat), per_repeat


@dataclass(frozen=True)
class ModelReport:
    """One row of the nested model comparison."""

    name: str
    covariates: tuple[str, ...]
    concordance: float
    steps_variable: str | None
    steps_hr_per_500: float | None
    steps_hr_ci: tuple[float, float] | None
    steps_p: float | None


def model_suite(
    data: SurvivalDataset,
    cfg: AnalysisConfig,
    traditional: Sequence[str] | None = None,
    mims_variable: str = "mims",
    step_prefix: str = "steps_",
    repeats: int | None = None,
) -> list[ModelReport]:
    """Fit the nested model ladder and report concordance and step HRs.

    Models: (1) traditional covariates, (2) + MIMS, (3) + the step variable
    with the best univariate cross-validated concordance, (4) + steps and
    MIMS together.  Step hazard ratios are reported per
    ``cfg.hr_step_increment`` steps with robust Wald p-values.
    """
    step_vars = sorted(n for n in data.covariate_names if n.startswith(step_prefix))
    if not step_vars:
        raise ValueError(f"no covariates named {step_prefix}*")
    if mims_variable not in data.covariate_names:
        raise ValueError(f"missing covariate {mims_variable!r}")
    if traditional is None:
        traditional = [
            n
            for n in data.covariate_names
            if n != mims_variable and not n.startswith(step_prefix)
        ]
    traditional = list(traditional)

    best_var, best_c = None, -math.inf
    for var in step_vars:
        c, _ = repeated_cv_concordance(data, [var], cfg, repeats=repeats)
        if c > best_c:
            best_var, best_c = var, c
    assert best_var is not None

    ladder = [
        ("traditional", traditional, None),
        ("traditional+mims", traditional + [mims_variable], None),
        ("traditional+steps", traditional + [best_var], best_var),
        ("traditional+steps+mims", traditional + [best_var, mims_variable], best_var),
    ]
    reports: list[ModelReport] = []
    for name, covs, steps_var in ladder:
        c, _ = repeated_cv_concordance(data, covs, cfg, repeats=repeats)
        hr = ci = pval = None
        if steps_var is not None:
            fit = cox_fit(data.select(covs))
            hr_, lo, hi = hazard_ratio(fit, steps_var, cfg.hr_step_increment)
            hr, ci, pval = hr_, (lo, hi), wald_p_value(fit, steps_var)
        reports.append(
            ModelReport(
                name=name,
                covariates=tuple(covs),
                concordance=c,
                steps_variable=steps_var,
                steps_hr_per_500=hr,
                steps_hr_ci=ci,
                steps_p=pval,
            )
        )
    return reports
