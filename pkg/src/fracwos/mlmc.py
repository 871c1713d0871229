"""Multilevel Monte Carlo orchestration for the whole-field solve.

The estimator telescopes over mesh levels: plain field samples at the
coarsest level plus coupled fine-minus-coarse corrections at each
transition.  A pilot run estimates per-level variances V_l, costs C_l
(walk steps) and mean-correction norms; levels are then chosen so the
squared bias fits eps^2/4 and samples are allocated by the optimal-work
rule

    M_l = ceil(2 eps^-2 sqrt(V_l / C_l) * sum_j sqrt(V_j C_j)),

which by Cauchy-Schwarz minimizes total cost subject to a statistical
error of eps^2/2.  Pilot samples are reused as the first production
samples, and every sample is a pure function of (seed, term, index), so
results are independent of batching and worker count.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import multiprocessing as mp
import numpy as np

from .field import FieldMoments, batch_defects, field_values, mass_matrix
from .mesh import FieldVector, MeshHierarchy, l2_norm, prolong_to
from .problems import Problem
from .streams import derive_key

_KIND_PLAIN = 1
_KIND_PAIR = 2
_VAR_FLOOR = 1e-12
_ROW_BUDGET = 1 << 21  # batch rows scaled so rows * vertices stays bounded

BIAS_RATE = 2.0   # mean-correction norms decay like 2^(-2 l)
COST_RATE = 2.0   # vertex count grows like 2^(2 l) per level in 2-D


class BudgetExceededError(RuntimeError):
    """The planned sampling cost exceeds the configured cap."""


@dataclass
class MlmcPlan:
    """Levels, per-term statistics, and sample allocation for one run."""

    eps: float
    coarsest: int
    finest: int
    V: np.ndarray            # index 0: plain coarsest term; then transitions
    C: np.ndarray
    M: np.ndarray
    c1_hat: float
    a: float = BIAS_RATE
    gamma: float = COST_RATE

    @property
    def terms(self) -> list[tuple[int, int]]:
        """(kind, level) per term, aligned with V/C/M."""
        return [(_KIND_PLAIN, self.coarsest)] + [
            (_KIND_PAIR, ell) for ell in range(self.coarsest, self.finest)]

    @property
    def planned_cost(self) -> float:
        return float(np.sum(self.M * self.C))

    @property
    def stat_error_sq(self) -> float:
        return float(np.sum(self.V / self.M))


@dataclass
class MlmcResult:
    solution: FieldVector
    plan: MlmcPlan
    total_cost: int
    samples_used: np.ndarray
    stat_error_est: float
    pilot_M: int


@dataclass
class LevelStatistics:
    """Pilot moments per term, reusable as the head of production sampling."""

    l0: int
    l_max: int
    count: int
    plain: FieldMoments                    # plain fields at l0
    trans: dict[int, FieldMoments]         # defect moments, keyed by coarse level
    fine_plain: dict[int, FieldMoments]    # plain moments of transition fine fields

    @property
    def bias_norms(self) -> dict[int, float]:
        return {ell: m.mean_norm for ell, m in self.trans.items()}

    def plain_variance(self, ell: int) -> float:
        if ell == self.l0:
            return self.plain.variance
        return self.fine_plain[ell - 1].variance

    def plain_cost(self, ell: int) -> float:
        if ell == self.l0:
            return self.plain.mean_cost
        return self.fine_plain[ell - 1].mean_cost

    @property
    def total_cost(self) -> int:
        return self.plain.cost + sum(m.cost for m in self.trans.values())


# ---------------------------------------------------------------------------
# sampling engine (serial or process pool; identical results either way)

_WORKER_CTX: dict = {}


def _init_worker(hier, problem, seed, max_steps):
    _WORKER_CTX["hier"] = hier
    _WORKER_CTX["problem"] = problem
    _WORKER_CTX["seed"] = seed
    _WORKER_CTX["max_steps"] = max_steps


def _term_chunk(task):
    """Moments of one contiguous chunk of samples of one term.

    Returns (sum_vec, sum_sq, count, cost) plus the plain-field moments of
    the fine values when the term is a transition (for vanilla planning).
    """
    kind, ell, i0, count = task
    hier: MeshHierarchy = _WORKER_CTX["hier"]
    problem: Problem = _WORKER_CTX["problem"]
    seed = _WORKER_CTX["seed"]
    max_steps = _WORKER_CTX["max_steps"]
    fine_ell = ell if kind == _KIND_PLAIN else ell + 1
    level = hier.level(fine_ell)
    keys = derive_key(seed, kind, ell, np.arange(i0, i0 + count))
    vals, cost = field_values(level, problem, keys, max_steps)
    masses = _WORKER_CTX.setdefault("masses", {})
    mass = masses.get(fine_ell)
    if mass is None:
        mass = masses[fine_ell] = mass_matrix(level, hier.norm_mask(fine_ell))
    out: list = []
    if kind == _KIND_PAIR:
        plain = FieldMoments(mass)
        plain.add(vals, cost)
        out.append((plain.sum_vec, plain.sum_sq, count, cost))
        vals = batch_defects(hier, vals, ell)
    mom = FieldMoments(mass)
    mom.add(vals, cost)
    out.insert(0, (mom.sum_vec, mom.sum_sq, count, cost))
    return out


def _batch_rows(n_vertices: int) -> int:
    return int(max(8, min(1024, _ROW_BUDGET // max(n_vertices, 1))))


class _Engine:
    """Runs term chunks serially or on a fork pool, merging in chunk order."""

    def __init__(self, hier, problem, seed, max_steps, workers):
        self.args = (hier, problem, seed, max_steps)
        self.hier = hier
        self.workers = max(1, int(workers))
        self._pool = None

    def __enter__(self):
        if self.workers > 1:
            ctx = mp.get_context("fork")
            self._pool = ProcessPoolExecutor(max_workers=self.workers,
                                             mp_context=ctx,
                                             initializer=_init_worker,
                                             initargs=self.args)
        _init_worker(*self.args)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
        _WORKER_CTX.clear()

    def sample_term(self, kind, ell, i0, i1, defect_moments, plain_moments=None):
        """Accumulate samples i0..i1-1 of one term into the given moments."""
        fine_ell = ell if kind == _KIND_PLAIN else ell + 1
        rows = _batch_rows(self.hier.level(fine_ell).num_vertices)
        tasks = [(kind, ell, j, min(rows, i1 - j)) for j in range(i0, i1, rows)]
        if self._pool is not None:
            results = list(self._pool.map(_term_chunk, tasks))
        else:
            results = [_term_chunk(t) for t in tasks]
        for res in results:
            sum_vec, sum_sq, count, cost = res[0]
            defect_moments.sum_vec += sum_vec
            defect_moments.sum_sq += sum_sq
            defect_moments.count += count
            defect_moments.cost += cost
            if plain_moments is not None and len(res) > 1:
                sum_vec, sum_sq, count, cost = res[1]
                plain_moments.sum_vec += sum_vec
                plain_moments.sum_sq += sum_sq
                plain_moments.count += count
                plain_moments.cost += cost


# ---------------------------------------------------------------------------
# planning operations

def level_statistics(hier: MeshHierarchy, problem: Problem, l0: int,
                     l_max: int, samples: int, seed: int, workers: int = 1,
                     max_steps: int = 1_000_000) -> LevelStatistics:
    """Plain moments at l0 and coupled-correction moments per transition."""
    if samples < 2:
        raise ValueError("need at least two samples per level")
    if not hier.coarsest <= l0 <= l_max <= hier.finest:
        raise ValueError("levels out of hierarchy range")
    stats = LevelStatistics(
        l0=l0, l_max=l_max, count=samples,
        plain=FieldMoments(mass_matrix(hier.level(l0), hier.norm_mask(l0))),
        trans={}, fine_plain={})
    with _Engine(hier, problem, seed, max_steps, workers) as eng:
        eng.sample_term(_KIND_PLAIN, l0, 0, samples, stats.plain)
        for ell in range(l0, l_max):
            mass = mass_matrix(hier.level(ell + 1), hier.norm_mask(ell + 1))
            stats.trans[ell] = FieldMoments(mass)
            stats.fine_plain[ell] = FieldMoments(mass)
            eng.sample_term(_KIND_PAIR, ell, 0, samples,
                            stats.trans[ell], stats.fine_plain[ell])
    return stats


def pilot(hier: MeshHierarchy, problem: Problem, pilot_M: int, seed: int,
          l0: int | None = None, l_max: int | None = None,
          workers: int = 1) -> LevelStatistics:
    """Pilot estimates of (V_l, C_l) per term for planning."""
    if pilot_M < 8:
        raise ValueError("pilot needs at least 8 samples")
    return level_statistics(hier, problem,
                            hier.coarsest if l0 is None else l0,
                            hier.finest if l_max is None else l_max,
                            pilot_M, seed, workers)


def fit_bias_coefficient(bias_norms: dict[int, float],
                         rate: float = BIAS_RATE) -> float:
    """Least-squares fit of ||mean correction||_l ~ c1 2^(-rate*l) in log scale."""
    ls = np.array(sorted(bias_norms))
    md = np.array([bias_norms[ell] for ell in ls])
    if np.all(md < 1e-300):
        return 0.0
    md = np.maximum(md, 1e-300)
    return float(2.0 ** np.mean(np.log2(md) + rate * ls))


def choose_levels(eps: float, bias_norms: dict[int, float], l0: int,
                  l_max: int, rate: float = BIAS_RATE) -> int:
    """Smallest L with fitted bias c1 2^(-rate*L) at most eps/2.

    Falls back to the maximum available level (with a warning) when the
    bias estimates do not decay or no level satisfies the condition.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not bias_norms:
        return l0
    ls = sorted(bias_norms)
    md = [bias_norms[ell] for ell in ls]
    if len(md) >= 2 and md[-1] >= md[0] and max(md) > 0:
        warnings.warn("bias estimates do not decay; using all levels")
        return l_max
    c1 = fit_bias_coefficient(bias_norms, rate)
    if c1 == 0.0:
        return l0
    for ell in range(l0, l_max + 1):
        if c1 * 2.0 ** (-rate * ell) <= eps / 2.0:
            return ell
    warnings.warn(f"bias target eps/2 unreachable at level {l_max}; "
                  "using the finest available level")
    return l_max


def allocate(eps: float, V, C) -> np.ndarray:
    """Optimal sample counts: M_l = ceil(2 eps^-2 sqrt(V_l/C_l) sum sqrt(V C))."""
    V = np.maximum(np.asarray(V, dtype=np.float64), 0.0)
    C = np.asarray(C, dtype=np.float64)
    if np.any(C <= 0):
        raise ValueError("costs must be positive")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if np.any(V < _VAR_FLOOR):
        if np.all(V < _VAR_FLOOR):
            return np.ones(V.shape, dtype=np.int64)
        warnings.warn("zero variance at some level; clamping to floor")
    V = np.maximum(V, _VAR_FLOOR)
    total = np.sum(np.sqrt(V * C))
    M = np.ceil(2.0 * eps ** -2 * np.sqrt(V / C) * total)
    return np.maximum(M, 1).astype(np.int64)


def run(hier: MeshHierarchy, problem: Problem, eps: float, l0: int, seed: int,
        pilot_M: int = 32, fixed_L: int | None = None, workers: int = 1,
        max_cost: float | None = None, max_steps: int = 1_000_000) -> MlmcResult:
    """Full multilevel solve: pilot, plan, sample, telescope.

    Parameters
    ----------
    eps : target root-mean-square L2 error (bias^2 + statistical <= eps^2).
    l0 : coarsest level of the telescope.
    fixed_L : pin the finest level instead of choosing it from the fitted
        bias decay (used when the operator must stay identical across calls).
    max_cost : optional cap on projected total walk steps.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    l_max = hier.finest if fixed_L is None else fixed_L
    stats = pilot(hier, problem, pilot_M, seed, l0=l0, l_max=l_max,
                  workers=workers)
    c1 = fit_bias_coefficient(stats.bias_norms) if stats.bias_norms else 0.0
    L = fixed_L if fixed_L is not None else choose_levels(
        eps, stats.bias_norms, l0, l_max)

    terms = [(_KIND_PLAIN, l0)] + [(_KIND_PAIR, ell) for ell in range(l0, L)]
    moments = [stats.plain] + [stats.trans[ell] for ell in range(l0, L)]
    V = np.array([m.variance for m in moments])
    C = np.array([m.mean_cost for m in moments])
    M = allocate(eps, V, C)
    plan = MlmcPlan(eps=eps, coarsest=l0, finest=L, V=V, C=C, M=M, c1_hat=c1)
    assert plan.stat_error_sq <= eps ** 2 / 2.0 + 1e-9

    extra = np.maximum(M - pilot_M, 0)
    projected = stats.total_cost + float(np.sum(extra * C))
    if max_cost is not None and projected > max_cost:
        raise BudgetExceededError(
            f"projected cost {projected:.3g} exceeds cap {max_cost:.3g}")

    with _Engine(hier, problem, seed, max_steps, workers) as eng:
        for (kind, ell), mom, m_need in zip(terms, moments, M):
            if m_need > pilot_M:
                eng.sample_term(kind, ell, pilot_M, int(m_need), mom)

    solution = prolong_to(hier, FieldVector(l0, stats.plain.mean_field), L)
    for ell in range(l0, L):
        corr = prolong_to(hier, FieldVector(ell + 1, stats.trans[ell].mean_field), L)
        solution = FieldVector(L, solution.values + corr.values)

    used = np.array([m.count for m in moments])
    total_cost = stats.plain.cost + sum(m.cost for m in stats.trans.values())
    stat_est = float(np.sum([m.variance / m.count for m in moments]))
    return MlmcResult(solution=solution, plan=plan, total_cost=int(total_cost),
                      samples_used=used, stat_error_est=stat_est,
                      pilot_M=pilot_M)


def error_vs_exact(result: MlmcResult, exact, hier: MeshHierarchy):
    """Masked L2 absolute and relative error against a closed-form solution.

    Returns (abs, rel); rel is None when the exact field has zero norm.
    """
    level = hier.level(result.solution.level)
    mask = hier.norm_mask(level.level)
    exact_vals = np.asarray(exact(level.vertices), dtype=np.float64)
    diff = result.solution.values - exact_vals
    abs_err = l2_norm(level, diff, mask)
    exact_norm = l2_norm(level, exact_vals, mask)
    if exact_norm == 0.0:
        return abs_err, None
    return abs_err, abs_err / exact_norm


def cost_comparison(hier: MeshHierarchy, problem: Problem, eps_list, l0: int,
                    seed: int, pilot_M: int = 32, workers: int = 1,
                    execute_budget: float = 0.0, L_list=None):
    """Projected multilevel vs single-level (vanilla) step costs per tolerance.

    One pilot estimates all level statistics; each eps then gets its finest
    level, its multilevel allocation cost, and the matching vanilla cost
    M C at the same finest level with M = ceil(2 eps^-2 V_L).  The finest
    level follows the dyadic schedule L = log2(1/eps)/2 (clamped to the
    hierarchy) unless `L_list` pins it explicitly; pilot mean-correction
    norms are too noisy to resolve bias at these tolerances.  Runs whose
    planned cost fits `execute_budget` are also executed to report realized
    cost (tolerances far below that are reported as plans, which is the only
    meaningful scale for costs near 1e16 steps).
    """
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if L_list is None:
        L_list = [int(np.clip(round(np.log2(1.0 / eps) / 2.0), l0, hier.finest))
                  for eps in eps_list]
    stats = pilot(hier, problem, pilot_M, seed, l0=l0, workers=workers)
    rows = []
    for eps, L in zip(eps_list, L_list):
        moments = [stats.plain] + [stats.trans[ell] for ell in range(l0, L)]
        V = np.array([m.variance for m in moments])
        C = np.array([m.mean_cost for m in moments])
        M = allocate(eps, V, C)
        ml_cost = float(np.sum(M * C))
        v_var = stats.plain_variance(L)
        v_cost_per = stats.plain_cost(L)
        m_vanilla = max(int(np.ceil(2.0 * eps ** -2 * max(v_var, _VAR_FLOOR))), 1)
        van_cost = m_vanilla * v_cost_per
        executed = None
        if ml_cost <= execute_budget:
            res = run(hier, problem, eps, l0, seed, pilot_M=pilot_M,
                      workers=workers)
            executed = res.total_cost
        rows.append({"eps": eps, "L": L, "mlmc_cost": ml_cost,
                     "vanilla_cost": float(van_cost), "M": M.tolist(),
                     "executed_cost": executed})
    return rows
