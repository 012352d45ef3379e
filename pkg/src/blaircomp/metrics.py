"""Ambiguity alignment, error metrics, and signal/perpendicular splits.

Every bilinear pair (h_i, x_i) carries the gauge ambiguity
(h_i, x_i) -> (h_i/omega*, omega*x_i); all metrics first resolve it by
minimizing the alignment objective over the complex scalar omega.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .ensemble import GroundTruth
from .errors import DegenerateAlignmentError, ParameterError, UndefinedMetricError

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class AlignmentResult:
    omega: complex
    cost: float


@dataclass(frozen=True)
class ComponentDecomposition:
    """Per-node overlap with the ground-truth direction and its complement.

    alpha may be complex on measured traces; |alpha|^2 + beta^2 equals the
    squared norm of the aligned block (Pythagoras).
    """

    alpha_h: np.ndarray      # (s,) complex
    beta_h: np.ndarray       # (s,) real >= 0
    alpha_x: np.ndarray      # (s,) complex
    beta_x: np.ndarray       # (s,) real >= 0
    rmse_x: np.ndarray       # (s,) beta_x / ||x_i|| of the raw iterate
    omega: np.ndarray        # (s,) complex alignment parameters used


@dataclass(frozen=True)
class MetricSnapshot:
    relative_error: float
    dist: float
    decomposition: ComponentDecomposition


def align_pair(h_a: np.ndarray, x_a: np.ndarray,
               h_b: np.ndarray, x_b: np.ndarray) -> AlignmentResult:
    """Global minimizer of ||h_a/w* - h_b||^2 + ||w*x_a - x_b||^2 over w.

    Writing w = r*exp(i*theta), the optimal phase for fixed r is
    theta = -arg(c1/r + c2*r) with c1 = h_b^H h_a and c2 = x_b^H x_a, which
    reduces the problem to a smooth coercive 1-D cost in u = r^2.  That cost
    is localized on a log grid, narrowed by golden-section, and polished by
    guarded Newton steps; the reported cost re-evaluates the objective at w.
    """
    a2 = float(np.vdot(h_a, h_a).real)
    b2 = float(np.vdot(x_a, x_a).real)
    if a2 == 0.0 or b2 == 0.0:
        raise DegenerateAlignmentError("cannot align a zero block")
    c1 = complex(np.vdot(h_b, h_a))
    c2 = complex(np.vdot(x_b, x_a))
    const = float(np.vdot(h_b, h_b).real + np.vdot(x_b, x_b).real)
    p, q = abs(c1) ** 2, abs(c2) ** 2
    r_cross = 2.0 * (c1 * np.conj(c2)).real

    def g(u):
        phi = np.sqrt(np.maximum(p / u + q * u + r_cross, 0.0))
        return a2 / u + b2 * u + const - 2.0 * phi

    u_scale = np.sqrt(a2 / b2)
    lo, hi = 1e-12 * u_scale, 1e12 * u_scale

    # Coarse log-grid scan keeps golden-section honest if g is not unimodal
    # over the full 24-decade bracket.
    grid = np.exp(np.linspace(np.log(lo), np.log(hi), 257))
    best = int(np.argmin(g(grid)))
    u_lo = grid[max(best - 1, 0)]
    u_hi = grid[min(best + 1, len(grid) - 1)]
    u = _golden_section(g, u_lo, u_hi)
    u = _newton_polish(u, a2, b2, p, q, r_cross, u_lo, u_hi)

    r = np.sqrt(u)
    c = c1 / r + c2 * r
    theta = -np.angle(c) if c != 0 else 0.0
    omega = r * np.exp(1j * theta)
    cost = float(np.linalg.norm(h_a / np.conj(omega) - h_b) ** 2
                 + np.linalg.norm(omega * x_a - x_b) ** 2)
    return AlignmentResult(omega=complex(omega), cost=cost)


def dist(z, truth: GroundTruth) -> float:
    """Aggregate gauge-invariant discrepancy between an iterate and the truth.

    Square root of the sum over nodes of the minimal alignment cost divided
    by d_i = ||h_bar_i||^2 + ||x_bar_i||^2.
    """
    total = 0.0
    for i in range(truth.s):
        res = align_pair(z.h[i], z.x[i], truth.h[i], truth.x[i])
        total += res.cost / (2.0 * truth.q[i] ** 2)
    return float(np.sqrt(total))


def relative_error(z, truth: GroundTruth) -> float:
    """Normalized error of the recovered target sum, with per-node alignment
    parameters recomputed at call time."""
    target = np.sum(truth.x, axis=0)
    denom = np.linalg.norm(target)
    if denom == 0.0:
        raise UndefinedMetricError("target vector sums to zero")
    est = np.zeros_like(target)
    for i in range(truth.s):
        omega = align_pair(z.h[i], z.x[i], truth.h[i], truth.x[i]).omega
        est = est + omega * z.x[i]
    return float(np.linalg.norm(est - target) / denom)


def decompose(z, truth: GroundTruth) -> ComponentDecomposition:
    """Split each aligned block into its ground-truth-direction component
    (alpha) and perpendicular remainder norm (beta)."""
    s = truth.s
    alpha_h = np.zeros(s, dtype=complex)
    beta_h = np.zeros(s)
    alpha_x = np.zeros(s, dtype=complex)
    beta_x = np.zeros(s)
    rmse_x = np.zeros(s)
    omegas = np.zeros(s, dtype=complex)
    for i in range(s):
        omega = align_pair(z.h[i], z.x[i], truth.h[i], truth.x[i]).omega
        omegas[i] = omega
        h_t = z.h[i] / np.conj(omega)
        x_t = omega * z.x[i]
        alpha_h[i], beta_h[i] = _components(h_t, truth.h[i])
        alpha_x[i], beta_x[i] = _components(x_t, truth.x[i])
        rmse_x[i] = beta_x[i] / np.linalg.norm(z.x[i])
    return ComponentDecomposition(alpha_h=alpha_h, beta_h=beta_h,
                                  alpha_x=alpha_x, beta_x=beta_x,
                                  rmse_x=rmse_x, omega=omegas)


def snapshot_metrics(z, truth: GroundTruth) -> MetricSnapshot:
    """relative_error, dist, and the component split from one alignment pass."""
    target = np.sum(truth.x, axis=0)
    denom = np.linalg.norm(target)
    if denom == 0.0:
        raise UndefinedMetricError("target vector sums to zero")
    dec = decompose(z, truth)
    est = np.einsum("i,in->n", dec.omega, z.x)
    rel = float(np.linalg.norm(est - target) / denom)
    total = 0.0
    for i in range(truth.s):
        cost = (np.linalg.norm(z.h[i] / np.conj(dec.omega[i]) - truth.h[i]) ** 2
                + np.linalg.norm(dec.omega[i] * z.x[i] - truth.x[i]) ** 2)
        total += cost / (2.0 * truth.q[i] ** 2)
    return MetricSnapshot(relative_error=rel, dist=float(np.sqrt(total)),
                          decomposition=dec)


def incoherence(truth: GroundTruth, b_rows: np.ndarray) -> float:
    """sqrt(m) times the largest normalized correlation between access rows
    and ground-truth channels."""
    if np.any(truth.q == 0.0):
        raise DegenerateAlignmentError("zero channel in ground truth")
    corr = np.abs(truth.h @ b_rows.T) / truth.q[:, None]   # (s, m)
    return float(np.sqrt(b_rows.shape[0]) * corr.max())


def perturb_alignment(omega: Union[complex, np.ndarray], sigma_w: float,
                      rng: np.random.Generator):
    """omega plus circularly symmetric noise with E|noise|^2 = 1/sigma_w."""
    if sigma_w <= 0.0:
        raise ParameterError("sigma_w must be > 0")
    omega = np.asarray(omega, dtype=complex)
    scale = np.sqrt(0.5 / sigma_w)
    noise = rng.normal(0.0, scale, omega.shape) + 1j * rng.normal(0.0, scale, omega.shape)
    out = omega + noise
    return complex(out) if out.ndim == 0 else out


def aligned_block_distance(h_a, x_a, h_b, x_b, d: float) -> float:
    """Minimal alignment cost between two blocks, normalized by d."""
    return float(np.sqrt(align_pair(h_a, x_a, h_b, x_b).cost / d))


def _components(v_tilde: np.ndarray, v_bar: np.ndarray):
    nb = np.linalg.norm(v_bar)
    overlap = np.vdot(v_bar, v_tilde)
    alpha = overlap / nb
    perp = v_tilde - (overlap / nb ** 2) * v_bar
    return complex(alpha), float(np.linalg.norm(perp))


def _golden_section(g, lo: float, hi: float, rel_width: float = 1e-10) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    gc, gd = g(c), g(d)
    while (b - a) > rel_width * b:
        if gc < gd:
            b, d, gd = d, c, gc
            c = b - _GOLDEN * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + _GOLDEN * (b - a)
            gd = g(d)
    return 0.5 * (a + b)


def _newton_polish(u: float, a2, b2, p, q, r_cross, lo, hi, steps: int = 12) -> float:
    # Root-find g'(u) = 0; tracking |g'| avoids the cancellation floor of
    # comparing g itself near a flat minimum.
    def deriv(v):
        phi2 = p / v + q * v + r_cross
        if phi2 <= 1e-300:
            return None, None
        phi = np.sqrt(phi2)
        dphi_num = -p / v ** 2 + q
        g1 = -a2 / v ** 2 + b2 - dphi_num / phi
        g2 = (2.0 * a2 / v ** 3 - (2.0 * p / v ** 3) / phi
              + dphi_num ** 2 / (2.0 * phi ** 3))
        return g1, g2

    g1, g2 = deriv(u)
    if g1 is None:
        return u
    for _ in range(steps):
        if g2 is None or g2 <= 0.0 or not np.isfinite(g1) or not np.isfinite(g2):
            break
        u_new = u - g1 / g2
        if not (lo * 0.5 <= u_new <= hi * 2.0) or u_new <= 0.0:
            break
        g1_new, g2_new = deriv(u_new)
        if g1_new is None or abs(g1_new) >= abs(g1):
            break
        u, g1, g2 = u_new, g1_new, g2_new
    return u
