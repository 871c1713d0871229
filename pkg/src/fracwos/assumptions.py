"""Monte Carlo checks of the coupling-contraction and boundary functionals.

Both quantities look at a single walk step x1 = x0 + Theta d(x0)/sqrt(beta):

* the pairwise contraction  I2(x0, y0) = E[(|x1-y1|/|x0-y0|)^(mu alpha);
  x1, y1 in D]  with (beta, Theta) shared between the two updates, and
* the boundary-accumulation functional  I1(x0) = E[Phi(x1)/Phi(x0); x1 in D]
  with Phi(x) = max(A, 1/d(x)^t).

Estimates below one certify the contraction/accumulation behaviour the
multilevel coupling rate rests on.  Start points are drawn uniformly on the
domain (20 points, 1e6 samples by default); an optional stress mode places
pairs near the boundary on a shared inward normal, the geometry that makes
exponents mu > 1 fail.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import NamedTuple

import numpy as np

from .geometry import Domain, box
from .sampling import _check_alpha
from .streams import batch_generator, johnk_beta_rng

_BATCH = 1 << 17
_LABEL_STARTS = 0x57A7
_LABEL_I1 = 0x11
_LABEL_I2 = 0x12


class CheckResult(NamedTuple):
    max_over_starts: float
    per_start: list[tuple[float, float]]   # (estimate, standard error)


@dataclass
class AssumptionConfig:
    """Parameters of one checker run."""

    alpha: float
    mu: float = 1.0
    t: float = 1.0
    A: float = 1e4
    samples_M: int = 10 ** 6
    start_points_J: int = 20
    domain: Domain = dfield(default_factory=lambda: box(0.0, 0.0, 1.0, 1.0))
    seed: int = 0

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not 0.0 < self.mu <= 1.5:
            raise ValueError("mu must be in (0, 1.5]")
        if not 0.0 < self.t <= 1.0:
            raise ValueError("t must be in (0, 1]")
        if self.A <= 0:
            raise ValueError("A must be positive")
        if self.samples_M < 2 or self.start_points_J < 1:
            raise ValueError("need at least 2 samples and 1 start point")


def _one_step(domain: Domain, x0: np.ndarray, rng, n: int, alpha: float):
    beta = johnk_beta_rng(alpha, rng, n)
    ang = 2.0 * np.pi * rng.random(n)
    theta = np.column_stack([np.cos(ang), np.sin(ang)])
    d0 = float(domain.distance(x0))
    return x0 + theta * (d0 / np.sqrt(beta))[:, None]


def _mean_stderr(total: float, total_sq: float, n: int) -> tuple[float, float]:
    mean = total / n
    var = max((total_sq - n * mean * mean) / (n - 1), 0.0)
    return mean, float(np.sqrt(var / n))


def check_I2(cfg: AssumptionConfig, pairs: np.ndarray | None = None,
             stress: bool = False) -> CheckResult:
    """Pairwise one-step contraction moment, maximized over start pairs.

    Pairs share (beta, Theta) between their updates; the expectation carries
    the both-survive indicator.  `pairs` overrides the uniform draw with an
    explicit (J, 2, 2) array of [x0, y0] rows.
    """
    if pairs is None:
        rng = batch_generator(cfg.seed, _LABEL_STARTS, _LABEL_I2)
        if stress:
            pairs = _boundary_pairs(cfg.domain, cfg.start_points_J, rng)
        else:
            pts = cfg.domain.sample_uniform(rng, 2 * cfg.start_points_J)
            pairs = pts.reshape(cfg.start_points_J, 2, 2)
    pairs = np.asarray(pairs, dtype=np.float64)
    per_start = []
    expo = cfg.mu * cfg.alpha
    for j, (x0, y0) in enumerate(pairs):
        r0 = float(np.hypot(*(x0 - y0)))
        if r0 == 0.0:
            raise ValueError(f"start pair {j} is degenerate (x0 == y0)")
        d0x = float(cfg.domain.distance(x0))
        d0y = float(cfg.domain.distance(y0))
        rng = batch_generator(cfg.seed, _LABEL_I2, j)
        tot = tot_sq = 0.0
        done = 0
        while done < cfg.samples_M:
            n = min(_BATCH, cfg.samples_M - done)
            beta = johnk_beta_rng(cfg.alpha, rng, n)
            ang = 2.0 * np.pi * rng.random(n)
            theta = np.column_stack([np.cos(ang), np.sin(ang)])
            jump = theta / np.sqrt(beta)[:, None]
            x1 = x0 + d0x * jump
            y1 = y0 + d0y * jump
            both = np.asarray(cfg.domain._contains(x1)) \
                & np.asarray(cfg.domain._contains(y1))
            r1 = np.hypot(x1[:, 0] - y1[:, 0], x1[:, 1] - y1[:, 1])
            vals = np.where(both, (r1 / r0) ** expo, 0.0)
            tot += vals.sum()
            tot_sq += (vals * vals).sum()
            done += n
        per_start.append(_mean_stderr(tot, tot_sq, cfg.samples_M))
    return CheckResult(max(v for v, _ in per_start), per_start)


def check_I1(cfg: AssumptionConfig,
             starts: np.ndarray | None = None) -> CheckResult:
    """One-step moment of the boundary functional, maximized over starts."""
    if starts is None:
        rng = batch_generator(cfg.seed, _LABEL_STARTS, _LABEL_I1)
        starts = cfg.domain.sample_uniform(rng, cfg.start_points_J)
    starts = np.asarray(starts, dtype=np.float64)
    per_start = []
    for j, x0 in enumerate(starts):
        d0 = float(cfg.domain.distance(x0))
        if d0 <= 0.0:
            raise ValueError(f"start point {j} is not interior")
        phi0 = max(cfg.A, d0 ** -cfg.t)
        rng = batch_generator(cfg.seed, _LABEL_I1, j)
        tot = tot_sq = 0.0
        done = 0
        while done < cfg.samples_M:
            n = min(_BATCH, cfg.samples_M - done)
            x1 = _one_step(cfg.domain, x0, rng, n, cfg.alpha)
            inside = np.asarray(cfg.domain._contains(x1))
            vals = np.zeros(n)
            if inside.any():
                d1 = cfg.domain._distance(x1[inside])
                vals[inside] = np.maximum(cfg.A, d1 ** -cfg.t) / phi0
            tot += vals.sum()
            tot_sq += (vals * vals).sum()
            done += n
        per_start.append(_mean_stderr(tot, tot_sq, cfg.samples_M))
    return CheckResult(max(v for v, _ in per_start), per_start)


def _boundary_pairs(domain: Domain, count: int, rng) -> np.ndarray:
    """Pairs on a shared inward normal line near the boundary (stress mode)."""
    pts = domain.sample_uniform(rng, count)
    # push each point toward the boundary along the outward direction of
    # steepest distance decrease, found by finite differences
    h = 1e-6
    pairs = np.empty((count, 2, 2))
    for j, p in enumerate(pts):
        gx = (float(domain.distance(p + [h, 0.0])) - float(domain.distance(p - [h, 0.0]))) / (2 * h)
        gy = (float(domain.distance(p + [0.0, h])) - float(domain.distance(p - [0.0, h]))) / (2 * h)
        grad = np.array([gx, gy])
        grad /= max(np.linalg.norm(grad), 1e-12)
        d0 = float(domain.distance(p))
        z = p - d0 * grad          # nearest boundary point, approximately
        delta = 10.0 ** rng.uniform(-4, -1)
        r0 = delta * rng.uniform(0.1, 1.0)
        pairs[j, 0] = z + delta * grad
        pairs[j, 1] = z + (delta + r0) * grad
    return pairs


def sweep(kind: str, grid, template: AssumptionConfig):
    """Run a checker over a parameter grid; returns one row dict per point.

    kind "I2": grid entries are (alpha, mu); kind "I1": (alpha, A, t).
    """
    rows = []
    for entry in grid:
        if kind == "I2":
            alpha, mu = entry
            cfg = AssumptionConfig(alpha=alpha, mu=mu, t=template.t,
                                   A=template.A, samples_M=template.samples_M,
                                   start_points_J=template.start_points_J,
                                   domain=template.domain, seed=template.seed)
            res = check_I2(cfg)
            rows.append({"alpha": alpha, "mu_or_t": mu, "A": "",
                         "max_I": res.max_over_starts,
                         "stderr": max(se for _, se in res.per_start)})
        elif kind == "I1":
            alpha, A, t = entry
            cfg = AssumptionConfig(alpha=alpha, mu=template.mu, t=t, A=A,
                                   samples_M=template.samples_M,
                                   start_points_J=template.start_points_J,
                                   domain=template.domain, seed=template.seed)
            res = check_I1(cfg)
            rows.append({"alpha": alpha, "mu_or_t": t, "A": A,
                         "max_I": res.max_over_starts,
                         "stderr": max(se for _, se in res.per_start)})
        else:
            raise ValueError("kind must be 'I1' or 'I2'")
    return rows
