"""Block coordinate descent for the fused-lasso additive objective.

    minimize  1/2 ||y_c - sum_j beta_j[bin_j(i)]||^2 + lambda_f * sum_j TV(beta_j)

Each block ``beta_j`` lives at bin level. Blocks are chosen either
round-robin or greedily: the greedy rule scores every block by the squared
norm of its steepest-descent directions in the difference-variable lasso
``theta_j = diff(beta_j)``, whose gradient is a reverse cumulative sum of
per-bin residual sums. The selected block is then solved exactly as a
weighted FLSA.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange

from .data import DEFAULT_MAX_BINS, BinMap, Dataset, all_bin_sums, bin_sums, build_bins
from .flsa import WeightedSignal, solve_flsa

logger = logging.getLogger(__name__)

SELECTION_RULES = ("greedy", "cyclic")


@dataclass
class FitConfig:
    """Fitting options.

    ``stationarity_tol`` is relative: the greedy loop stops once the best
    block score is at most ``stationarity_tol * n * Var(y)``.
    ``max_block_updates`` defaults to ``100 * p``.
    """

    lambda_f: float
    max_bins: int | None = DEFAULT_MAX_BINS
    selection_rule: str = "greedy"
    stationarity_tol: float = 1e-10
    max_block_updates: int | None = None
    sweep_tol: float = 1e-8

    def __post_init__(self):
        if not (self.lambda_f >= 0 and math.isfinite(self.lambda_f)):
            raise ValueError(f"lambda_f must be finite and non-negative, got {self.lambda_f}")
        if self.max_bins is not None and self.max_bins < 2:
            raise ValueError("max_bins must be at least 2")
        if self.selection_rule not in SELECTION_RULES:
            raise ValueError(f"selection_rule must be one of {SELECTION_RULES}")
        if self.stationarity_tol < 0 or self.sweep_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.max_block_updates is not None and self.max_block_updates < 0:
            raise ValueError("max_block_updates must be non-negative")

    def update_cap(self, p: int) -> int:
        return 100 * p if self.max_block_updates is None else self.max_block_updates

    def absolute_tol(self, target) -> float:
        return self.stationarity_tol * target.size * float(np.var(target))


@dataclass
class TraceRecord:
    update_index: int
    feature: int
    score: float
    objective: float
    wall_ms: float


@dataclass
class BlockState:
    """Mutable optimizer state.

    Coefficients of all blocks sit in one flat array; ``beta[j]`` is a view
    onto feature ``j``'s bins. ``residual`` is ``target_centered`` minus the
    current additive prediction.
    """

    coef: np.ndarray
    offsets: np.ndarray
    residual: np.ndarray
    target_mean: float
    lambda_f: float
    objective: float = 0.0
    update_count: int = 0
    converged: bool = False
    trace: list = field(default_factory=list)

    @classmethod
    def zeros(cls, dataset: Dataset, bin_map: BinMap, lambda_f: float) -> "BlockState":
        y_mean = float(dataset.target.mean())
        residual = dataset.target - y_mean
        state = cls(
            coef=np.zeros(bin_map.offsets[-1]),
            offsets=np.asarray(bin_map.offsets),
            residual=residual.copy(),
            target_mean=y_mean,
            lambda_f=float(lambda_f),
        )
        state.objective = objective(state)
        return state

    @property
    def beta(self) -> list:
        return [self.coef[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def block(self, j: int) -> np.ndarray:
        return self.coef[self.offsets[j]:self.offsets[j + 1]]

    @property
    def p(self) -> int:
        return self.offsets.size - 1

    @property
    def support(self) -> set:
        return {j for j in range(self.p) if np.any(self.block(j) != 0)}

    def copy(self) -> "BlockState":
        return BlockState(
            coef=self.coef.copy(),
            offsets=self.offsets,
            residual=self.residual.copy(),
            target_mean=self.target_mean,
            lambda_f=self.lambda_f,
            objective=self.objective,
            update_count=self.update_count,
            converged=self.converged,
            trace=list(self.trace),
        )


def total_variation(beta) -> float:
    return float(np.abs(np.diff(beta)).sum())


def objective(state: BlockState, lambda_f: float | None = None) -> float:
    lam = state.lambda_f if lambda_f is None else lambda_f
    r = state.residual
    tv = sum(total_variation(b) for b in state.beta)
    return 0.5 * float(r @ r) + lam * tv


def predict_rows(state: BlockState, bin_map: BinMap) -> np.ndarray:
    """Centered block-state prediction for every training row."""
    out = np.zeros(bin_map.codes.shape[1])
    for j, beta in enumerate(state.beta):
        out += beta[bin_map.codes[j]]
    return out


def recompute_residual(state: BlockState, dataset: Dataset, bin_map: BinMap) -> np.ndarray:
    return dataset.target - state.target_mean - predict_rows(state, bin_map)


def block_gradient(residual, j: int, bin_map: BinMap) -> np.ndarray:
    """Gradient of the smooth loss w.r.t. feature ``j``'s difference variables.

    Entry ``b`` is minus the residual mass in bins ``b+1 .. B-1``.
    """
    fb = bin_map[j]
    sums = bin_sums(np.asarray(residual, dtype=np.float64), fb.row_to_bin, fb.n_bins)
    return _gradient_from_sums(sums)


def _gradient_from_sums(sums):
    tail = np.cumsum(sums[::-1])[::-1]
    return -tail[1:]


def soft_threshold(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def steepest_directions(gradient, theta, lambda_f: float) -> np.ndarray:
    """Magnitude of the most negative directional derivative per coordinate."""
    gradient = np.asarray(gradient, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    return np.where(
        theta == 0,
        np.abs(soft_threshold(gradient, lambda_f)),
        np.abs(gradient + np.sign(theta) * lambda_f),
    )


@njit(parallel=True, cache=True)
def _score_blocks(sums, coef, offsets, lam):
    p = offsets.size - 1
    scores = np.zeros(p)
    for j in prange(p):
        lo = offsets[j]
        hi = offsets[j + 1]
        tail = 0.0
        s = 0.0
        for b in range(hi - 1, lo, -1):
            tail += sums[b]
            g = -tail
            theta = coef[b] - coef[b - 1]
            if theta == 0.0:
                d = abs(g) - lam
                if d < 0.0:
                    d = 0.0
            elif theta > 0.0:
                d = abs(g + lam)
            else:
                d = abs(g - lam)
            s += d * d
        scores[j] = s
    return scores


def block_scores(state: BlockState, bin_map: BinMap, lambda_f: float | None = None, sums=None):
    """Squared steepest-direction norm for every block, plus the bin sums used."""
    lam = state.lambda_f if lambda_f is None else lambda_f
    if sums is None:
        sums = all_bin_sums(state.residual, bin_map.codes, bin_map.offsets)
    return _score_blocks(sums, state.coef, state.offsets, float(lam)), sums


def select_block_bgs(state: BlockState, bin_maps: BinMap, lambda_f: float | None = None,
                     candidates=None):
    """Return ``(k, score)`` for the block with the largest score.

    Ties go to the lowest index. ``candidates`` restricts the search; an
    empty candidate set yields ``(None, 0.0)``.
    """
    scores, _ = block_scores(state, bin_maps, lambda_f)
    return _argmax_over(scores, candidates)


def _argmax_over(scores, candidates=None):
    if candidates is not None:
        candidates = sorted(candidates)
        if not candidates:
            return None, 0.0
        masked = np.full(scores.shape, -np.inf)
        masked[candidates] = scores[candidates]
        scores = masked
    k = int(np.argmax(scores))
    return k, float(scores[k])


@njit(cache=True, nogil=True)
def _shift_residual(residual, row_to_bin, delta):
    for i in range(residual.size):
        residual[i] -= delta[row_to_bin[i]]


def _set_block(state: BlockState, k: int, new_beta, bin_map: BinMap):
    beta = state.block(k)
    delta = new_beta - beta
    if np.any(delta != 0):
        _shift_residual(state.residual, bin_map[k].row_to_bin, delta)
        beta[:] = new_beta


def block_signal(state: BlockState, k: int, bin_map: BinMap, sums=None) -> WeightedSignal:
    """Bin means of the partial residual that excludes block ``k``."""
    fb = bin_map[k]
    if sums is None:
        sums = bin_sums(state.residual, fb.row_to_bin, fb.n_bins)
    return WeightedSignal(sums / fb.counts + state.block(k), fb.counts.astype(np.float64))


def update_block(state: BlockState, k: int, bin_map: BinMap, lambda_f: float | None = None,
                 sums=None) -> BlockState:
    """Exactly minimize over block ``k`` (in place); returns the state."""
    lam = state.lambda_f if lambda_f is None else lambda_f
    signal = block_signal(state, k, bin_map, sums)
    _set_block(state, k, solve_flsa(signal, lam), bin_map)
    state.update_count += 1
    state.objective = objective(state, lam)
    return state


def _record(state, k, score, t0):
    state.trace.append(TraceRecord(state.update_count, k, score, state.objective,
                                   1000.0 * (time.perf_counter() - t0)))


def _prepare(dataset: Dataset, config: FitConfig, bin_map: BinMap | None, state: BlockState | None):
    if bin_map is None:
        bin_map = build_bins(dataset, max_bins=config.max_bins)
    if state is None:
        state = BlockState.zeros(dataset, bin_map, config.lambda_f)
    return bin_map, state


def fit_gbcd(dataset: Dataset, config: FitConfig, bin_map: BinMap | None = None,
             state: BlockState | None = None) -> BlockState:
    """Greedy block coordinate descent.

    Repeats (score all blocks, update the best) until the best score drops
    to the stationarity tolerance or the update cap binds. ``state.converged``
    tells the two apart.
    """
    bin_map, state = _prepare(dataset, config, bin_map, state)
    tol = config.absolute_tol(dataset.target)
    cap = config.update_cap(dataset.p)
    t0 = time.perf_counter()
    state.converged = False
    done = 0
    while True:
        scores, sums = block_scores(state, bin_map)
        k, score = _argmax_over(scores)
        if score <= tol:
            state.converged = True
            break
        if done >= cap:
            logger.warning("greedy fit stopped at the %d-update cap with score %.3g > tol %.3g",
                           cap, score, tol)
            break
        lo, hi = state.offsets[k], state.offsets[k + 1]
        update_block(state, k, bin_map, sums=sums[lo:hi])
        done += 1
        _record(state, k, score, t0)
    return state


def sweep(state: BlockState, bin_map: BinMap, blocks, update=None, sweep_tol: float = 1e-8,
          max_updates: int | None = None, t0: float | None = None) -> bool:
    """Cycle over ``blocks`` until a full pass lowers the objective by a relative
    amount below ``sweep_tol``. Returns True on convergence, False at the cap."""
    blocks = list(blocks)
    if not blocks:
        return True
    update = update or (lambda s, k: update_block(s, k, bin_map))
    t0 = time.perf_counter() if t0 is None else t0
    done = 0
    while True:
        before = state.objective
        for k in blocks:
            if max_updates is not None and done >= max_updates:
                return False
            update(state, k)
            done += 1
            _record(state, k, float("nan"), t0)
        # one exact block minimization already solves a single-block problem
        if len(blocks) == 1:
            return True
        if before - state.objective <= sweep_tol * max(abs(before), np.finfo(float).tiny):
            return True


def fit_cbcd(dataset: Dataset, config: FitConfig, bin_map: BinMap | None = None,
             state: BlockState | None = None) -> BlockState:
    """Cyclic block coordinate descent over all features in index order."""
    bin_map, state = _prepare(dataset, config, bin_map, state)
    state.converged = sweep(state, bin_map, range(dataset.p), sweep_tol=config.sweep_tol,
                            max_updates=config.update_cap(dataset.p))
    if not state.converged:
        logger.warning("cyclic fit stopped at the %d-update cap", config.update_cap(dataset.p))
    return state


def fit(dataset: Dataset, config: FitConfig, bin_map: BinMap | None = None) -> tuple:
    """Fit with the configured selection rule; returns ``(state, bin_map)``."""
    bin_map = bin_map if bin_map is not None else build_bins(dataset, max_bins=config.max_bins)
    solver = fit_gbcd if config.selection_rule == "greedy" else fit_cbcd
    return solver(dataset, config, bin_map), bin_map


def set_threads(threads: int | None) -> int:
    """Set the scoring thread count, clamped to what numba was started with."""
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if threads is None else max(1, min(int(threads), limit))
    numba.set_num_threads(n)
    return n
