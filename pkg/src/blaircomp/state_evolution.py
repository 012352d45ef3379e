"""State-evolution recursions, perturbation extraction, and stage detection.

In the infinite-sample limit the per-node signal/perpendicular components
follow a closed two-variable recursion; on finite-sample traces the same
recursion holds up to small perturbation terms, which are extracted here by
inverting it.  Stage boundaries mark when the signal components grow large
(T_1, T_2) and when all components enter the contraction region (T_gamma).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class SEState:
    """Population-level state: real component sizes per node plus q and eta."""

    alpha_h: np.ndarray
    beta_h: np.ndarray
    alpha_x: np.ndarray
    beta_x: np.ndarray
    q: np.ndarray
    eta: float


@dataclass(frozen=True)
class PerturbationSeries:
    """Deviations of a measured trace from the population recursion.

    phi is uniquely determined by the beta recursions.  The alpha recursions
    carry two unknowns per scalar equation, so the full deviation is reported
    as delta (measured alpha minus the population prediction) and psi is the
    residual solve under the convention rho == 0.  Entries where an inversion
    denominator vanishes are NaN.
    """

    psi_h: np.ndarray   # (T-1, s)
    psi_x: np.ndarray
    phi_h: np.ndarray
    phi_x: np.ndarray
    rho_h: np.ndarray
    rho_x: np.ndarray
    delta_h: np.ndarray
    delta_x: np.ndarray


@dataclass(frozen=True)
class StageReport:
    """Stage boundaries (iteration numbers, None when never reached) and the
    fitted per-iteration growth rates of log(|alpha|/beta) over Stage I."""

    T_gamma: Optional[int]
    T_1: Optional[int]
    T_2: Optional[int]
    gamma: float
    t1_threshold: float
    t2_threshold: float
    growth_rate_h: np.ndarray   # (s,)
    growth_rate_x: np.ndarray   # (s,)

    def to_json_dict(self) -> Dict:
        return {
            "T_gamma": self.T_gamma, "T_1": self.T_1, "T_2": self.T_2,
            "gamma": self.gamma,
            "t1_threshold": self.t1_threshold,
            "t2_threshold": self.t2_threshold,
            "growth_rate_h": [None if not np.isfinite(v) else float(v)
                              for v in self.growth_rate_h],
            "growth_rate_x": [None if not np.isfinite(v) else float(v)
                              for v in self.growth_rate_x],
        }


def population_se_step(state: SEState) -> SEState:
    """One synchronous recursion step using the pre-step values throughout."""
    den_h = state.alpha_h ** 2 + state.beta_h ** 2
    den_x = state.alpha_x ** 2 + state.beta_x ** 2
    if np.any(den_h == 0.0) or np.any(den_x == 0.0):
        raise ParameterError("degenerate state: zero component energy")
    eta, q = state.eta, state.q
    alpha_x = (1.0 - eta) * state.alpha_x + eta * q * state.alpha_h / den_h
    beta_x = (1.0 - eta) * state.beta_x
    alpha_h = (1.0 - eta) * state.alpha_h + eta * q * state.alpha_x / den_x
    beta_h = (1.0 - eta) * state.beta_h
    return SEState(alpha_h=alpha_h, beta_h=beta_h, alpha_x=alpha_x,
                   beta_x=beta_x, q=q, eta=eta)


def run_population_se(state: SEState, steps: int) -> Dict[str, np.ndarray]:
    """Stack the recursion for ``steps`` iterations; arrays are (steps+1, s)."""
    hist = {k: [getattr(state, k)] for k in ("alpha_h", "beta_h", "alpha_x", "beta_x")}
    for _ in range(steps):
        state = population_se_step(state)
        for k in hist:
            hist[k].append(getattr(state, k))
    return {k: np.asarray(v) for k, v in hist.items()}


def extract_perturbations(trace, q: np.ndarray, eta: float) -> PerturbationSeries:
    """Invert the approximate recursions on consecutive logged iterations.

    Works on the component magnitudes (measured alpha may be complex).  Only
    meaningful when the trace was logged at cadence 1.
    """
    q = np.asarray(q, dtype=float)
    a_h = np.abs(np.asarray(trace.alpha_h))
    a_x = np.abs(np.asarray(trace.alpha_x))
    b_h = np.asarray(trace.beta_h)
    b_x = np.asarray(trace.beta_x)
    den_h = a_h ** 2 + b_h ** 2     # multiplies the x-update terms
    den_x = a_x ** 2 + b_x ** 2
    n_steps = a_h.shape[0] - 1

    phi_h = _safe_div((b_h[1:] / _nan_zero(b_h[:-1]) - (1.0 - eta)) * den_x[:-1],
                      eta * q[None, :])
    phi_x = _safe_div((b_x[1:] / _nan_zero(b_x[:-1]) - (1.0 - eta)) * den_h[:-1],
                      eta * q[None, :])
    delta_h = a_h[1:] - ((1.0 - eta) * a_h[:-1]
                         + eta * q[None, :] * a_x[:-1] / den_x[:-1])
    delta_x = a_x[1:] - ((1.0 - eta) * a_x[:-1]
                         + eta * q[None, :] * a_h[:-1] / den_h[:-1])
    psi_h = _safe_div(delta_h * den_x[:-1], eta * q[None, :] * _nan_zero(a_h[:-1]))
    psi_x = _safe_div(delta_x * den_h[:-1], eta * q[None, :] * _nan_zero(a_x[:-1]))
    rho = np.zeros((n_steps, q.size))
    return PerturbationSeries(psi_h=psi_h, psi_x=psi_x, phi_h=phi_h, phi_x=phi_x,
                              rho_h=rho, rho_x=rho.copy(),
                              delta_h=delta_h, delta_x=delta_x)


def detect_stages(trace, gamma: float = 0.1, t1_threshold: float = 1.0,
                  t2_threshold: float = 0.1) -> StageReport:
    """Scan a trace for the stage boundaries and fit Stage-I growth rates.

    T_gamma is the first logged iteration where every per-node component
    satisfies the contraction-region conditions; T_1 and T_2 are the first
    iterations where the normalized signal components clear 1/log^5(m)-scale
    and constant thresholds respectively.
    """
    q = np.asarray(trace.q, dtype=float)
    kappa = float(np.max(q) / np.min(q))
    s = q.size
    a_h = np.abs(np.asarray(trace.alpha_h))
    a_x = np.abs(np.asarray(trace.alpha_x))
    b_h = np.asarray(trace.beta_h)
    b_x = np.asarray(trace.beta_x)
    t_idx = np.asarray(trace.t)

    thr = gamma / (2.0 * kappa * np.sqrt(s))
    in_region = ((np.abs(a_h - q[None, :]) <= thr) & (b_h <= thr)
                 & (np.abs(a_x - q[None, :]) <= thr) & (b_x <= thr)).all(axis=1)
    log5m = np.log(trace.m) ** 5
    t1_ok = ((a_h / q[None, :]).min(axis=1) >= t1_threshold / log5m) \
        & ((a_x / q[None, :]).min(axis=1) >= t1_threshold / log5m)
    t2_ok = ((a_h / q[None, :]).min(axis=1) > t2_threshold) \
        & ((a_x / q[None, :]).min(axis=1) > t2_threshold)

    T_gamma = _first_true(in_region, t_idx)
    T_1 = _first_true(t1_ok, t_idx)
    T_2 = _first_true(t2_ok, t_idx)

    window = np.ones(len(t_idx), dtype=bool) if T_gamma is None else (t_idx <= T_gamma)
    growth_h = _fit_log_ratio(t_idx[window], a_h[window], b_h[window])
    growth_x = _fit_log_ratio(t_idx[window], a_x[window], b_x[window])
    return StageReport(T_gamma=T_gamma, T_1=T_1, T_2=T_2, gamma=gamma,
                       t1_threshold=t1_threshold, t2_threshold=t2_threshold,
                       growth_rate_h=growth_h, growth_rate_x=growth_x)


def _first_true(mask: np.ndarray, t_idx: np.ndarray) -> Optional[int]:
    hits = np.flatnonzero(mask)
    return int(t_idx[hits[0]]) if hits.size else None


def _fit_log_ratio(t_idx, alpha_abs, beta) -> np.ndarray:
    s = alpha_abs.shape[1]
    slopes = np.full(s, np.nan)
    for i in range(s):
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.log(alpha_abs[:, i] / beta[:, i])
        ok = np.isfinite(log_ratio)
        if ok.sum() >= 2:
            slopes[i] = np.polyfit(t_idx[ok], log_ratio[ok], 1)[0]
    return slopes


def _safe_div(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    return np.where(np.isfinite(out), out, np.nan)


def _nan_zero(arr, eps: float = 1e-300):
    return np.where(np.abs(arr) <= eps, np.nan, arr)
