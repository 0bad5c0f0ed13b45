"""Feature-sparse fitting: greedy iterative selection and group-l0 penalization.

Both methods grow or prune a support set of features while keeping every
block outside the support exactly zero, and both can polish a solution with
a swap-based local search driven by the greedy block scores.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .data import BinMap, Dataset, build_bins
from .flsa import solve_flsa
from .optimizer import (
    BlockState,
    FitConfig,
    _argmax_over,
    _record,
    _set_block,
    block_scores,
    block_signal,
    objective,
    sweep,
    total_variation,
    update_block,
)

logger = logging.getLogger(__name__)


class SparsityWarning(UserWarning):
    pass


@dataclass
class SparsityConfig:
    """``mode`` is ``"agis"`` (uses ``k``) or ``"group_l0"`` (uses ``lambda_s``).

    ``iterate_swaps`` repeats local search until no swap helps, at most ``p``
    times per call; otherwise one swap is attempted per call.
    """

    mode: str = "agis"
    k: int | None = None
    lambda_s: float = 0.0
    local_search: bool = True
    iterate_swaps: bool = False

    def __post_init__(self):
        if self.mode not in ("agis", "group_l0"):
            raise ValueError("mode must be 'agis' or 'group_l0'")
        if self.mode == "agis" and (self.k is None or self.k < 1):
            raise ValueError("agis needs k >= 1")
        if not (self.lambda_s >= 0 and math.isfinite(self.lambda_s)):
            raise ValueError("lambda_s must be finite and non-negative")


def penalized_objective(state: BlockState, lambda_s: float) -> float:
    """Fused objective plus ``lambda_s`` per nonzero block."""
    return state.objective + lambda_s * len(state.support)


def _zero_block(state: BlockState, j: int, bin_map: BinMap):
    _set_block(state, j, np.zeros_like(state.block(j)), bin_map)


def l0_block_update(state: BlockState, k: int, bin_map: BinMap, lambda_f: float | None = None,
                    lambda_s: float = 0.0) -> BlockState:
    """Exact block minimization with the group-l0 penalty (in place).

    Solves the plain FLSA on the partial residual and keeps the solution only
    if it beats the all-zero block by more than ``lambda_s``; ties zero.
    """
    lam = state.lambda_f if lambda_f is None else lambda_f
    signal = block_signal(state, k, bin_map)
    beta = solve_flsa(signal, lam)
    # 1/2||r||^2 - 1/2||r - beta[bin]||^2 written at bin level
    gain = float(np.sum(signal.weights * beta * (signal.values - 0.5 * beta)))
    improvement = gain - lam * total_variation(beta)
    if improvement <= lambda_s:
        beta = np.zeros_like(beta)
    _set_block(state, k, beta, bin_map)
    state.update_count += 1
    state.objective = objective(state, lam)
    return state


def local_search_swap(state: BlockState, bin_map: BinMap, support, lambda_f: float | None = None,
                      lambda_s: float = 0.0, update=None, sweep_tol: float = 1e-8,
                      max_updates: int | None = None):
    """Try to swap the best outside block into ``support``.

    The candidate is the highest-scoring block outside the support. Each
    member is tentatively zeroed on a scratch copy and the candidate updated;
    the single best swap is committed only if it strictly lowers the
    objective, after which the new support is swept to convergence.

    Returns ``(state, support, swapped)``; the input state is never mutated
    and is returned as-is when no swap helps.
    """
    lam = state.lambda_f if lambda_f is None else lambda_f
    support = sorted(support)
    outside = [j for j in range(state.p) if j not in support]
    if not support or not outside:
        return state, support, False
    scores, _ = block_scores(state, bin_map, lam)
    incoming, score = _argmax_over(scores, outside)
    if score <= 0.0:
        return state, support, False

    current = penalized_objective(state, lambda_s)
    best = None
    for j in support:
        trial = state.copy()
        _zero_block(trial, j, bin_map)
        update_block(trial, incoming, bin_map, lam)
        value = penalized_objective(trial, lambda_s)
        if best is None or value < best[0]:
            best = (value, j, trial)
    value, outgoing, trial = best
    if not value < current - 1e-12 * abs(current):
        return state, support, False

    new_support = sorted(set(support) - {outgoing} | {incoming})
    update = update or (lambda s, k: update_block(s, k, bin_map, lam))
    sweep(trial, bin_map, new_support, update=update, sweep_tol=sweep_tol, max_updates=max_updates)
    logger.debug("swapped feature %d out for %d: %.6g -> %.6g", outgoing, incoming, current,
                 penalized_objective(trial, lambda_s))
    return trial, new_support, True


def _polish(state, bin_map, support, lam, lambda_s, update, sparsity: SparsityConfig, config: FitConfig):
    rounds = state.p if sparsity.iterate_swaps else 1
    for _ in range(rounds):
        state, support, swapped = local_search_swap(
            state, bin_map, support, lam, lambda_s, update, config.sweep_tol,
            config.update_cap(len(support) or 1))
        if not swapped:
            break
    return state, support


def agis_fit(dataset: Dataset, config: FitConfig, k: int, bin_map: BinMap | None = None,
             local_search: bool = True, iterate_swaps: bool = False):
    """Approximate greedy iterative selection.

    Returns a list of ``(support, state)`` pairs, one per support size
    ``1..k``. Stops early, with a :class:`SparsityWarning`, if no remaining
    feature has a positive selection score.
    """
    if not 1 <= k <= dataset.p:
        raise ValueError(f"k must be between 1 and p={dataset.p}")
    bin_map = bin_map if bin_map is not None else build_bins(dataset, max_bins=config.max_bins)
    sparsity = SparsityConfig("agis", k=k, local_search=local_search, iterate_swaps=iterate_swaps)
    lam = config.lambda_f
    state = BlockState.zeros(dataset, bin_map, lam)
    support: list = []
    models = []
    t0 = time.perf_counter()
    while len(support) < k:
        scores, sums = block_scores(state, bin_map, lam)
        outside = [j for j in range(dataset.p) if j not in support]
        j, score = _argmax_over(scores, outside)
        if j is None or score <= 0.0:
            warnings.warn(f"only {len(support)} features have a positive selection score; "
                          f"returning {len(models)} of {k} models", SparsityWarning, stacklevel=2)
            break
        update_block(state, j, bin_map, lam, sums=sums[state.offsets[j]:state.offsets[j + 1]])
        _record(state, j, score, t0)
        support = sorted(support + [j])
        if len(support) > 1:
            sweep(state, bin_map, support, sweep_tol=config.sweep_tol,
                  max_updates=config.update_cap(len(support)), t0=t0)
        if local_search:
            state, support = _polish(state, bin_map, support, lam, 0.0, None, sparsity, config)
        snapshot = state.copy()
        snapshot.converged = True
        models.append((list(support), snapshot))
    return models


def lambda_s_max(dataset: Dataset, config: FitConfig, bin_map: BinMap | None = None) -> float:
    """Largest single-block improvement at the all-zero model.

    Any ``lambda_s`` at or above this keeps every block zero.
    """
    bin_map = bin_map if bin_map is not None else build_bins(dataset, max_bins=config.max_bins)
    state = BlockState.zeros(dataset, bin_map, config.lambda_f)
    best = 0.0
    for j in range(dataset.p):
        signal = block_signal(state, j, bin_map)
        beta = solve_flsa(signal, config.lambda_f)
        gain = float(np.sum(signal.weights * beta * (signal.values - 0.5 * beta)))
        best = max(best, gain - config.lambda_f * total_variation(beta))
    return best


def lambda_s_grid(dataset: Dataset, config: FitConfig, num: int = 30, ratio: float = 1e-4,
                  bin_map: BinMap | None = None) -> np.ndarray:
    """Decreasing log-spaced ``lambda_s`` values from :func:`lambda_s_max` down by ``ratio``."""
    top = lambda_s_max(dataset, config, bin_map)
    if top <= 0:
        return np.zeros(1)
    return top * np.logspace(0, np.log10(ratio), num)


def group_l0_fit(dataset: Dataset, config: FitConfig, lambda_s: float, bin_map: BinMap | None = None,
                 local_search: bool = True, iterate_swaps: bool = False, max_rounds: int = 100):
    """Cyclic block descent on the group-l0 penalized objective, interlaced with
    local search until neither improves it. Returns ``(support, state)``."""
    bin_map = bin_map if bin_map is not None else build_bins(dataset, max_bins=config.max_bins)
    sparsity = SparsityConfig("group_l0", lambda_s=lambda_s, local_search=local_search,
                              iterate_swaps=iterate_swaps)
    lam = config.lambda_f
    state = BlockState.zeros(dataset, bin_map, lam)

    def update(s, k):
        return l0_block_update(s, k, bin_map, lam, lambda_s)

    cap = config.update_cap(dataset.p)
    state.converged = False
    for _ in range(max_rounds):
        _sweep_penalized(state, bin_map, range(dataset.p), update, lambda_s, config.sweep_tol, cap)
        if not local_search:
            state.converged = True
            break
        before = penalized_objective(state, lambda_s)
        state, _ = _polish(state, bin_map, sorted(state.support), lam, lambda_s, update, sparsity, config)
        if not penalized_objective(state, lambda_s) < before:
            state.converged = True
            break
    return sorted(state.support), state


def _sweep_penalized(state, bin_map, blocks, update, lambda_s, sweep_tol, cap):
    # like optimizer.sweep, but convergence is judged on the penalized objective
    done = 0
    t0 = time.perf_counter()
    while done < cap:
        before = penalized_objective(state, lambda_s)
        for k in blocks:
            update(state, k)
            done += 1
            _record(state, k, float("nan"), t0)
        after = penalized_objective(state, lambda_s)
        if before - after <= sweep_tol * max(abs(before), np.finfo(float).tiny):
            return True
    return False


def fit_l0_for_budget(dataset: Dataset, config: FitConfig, k: int, bin_map: BinMap | None = None,
                      num: int = 30, ratio: float = 1e-4, **kwargs):
    """Walk the ``lambda_s`` grid downward; return ``(lambda_s, support, state)`` for the
    first value whose support has exactly ``k`` features, else the largest
    support not exceeding ``k``."""
    bin_map = bin_map if bin_map is not None else build_bins(dataset, max_bins=config.max_bins)
    fallback = None
    for lambda_s in lambda_s_grid(dataset, config, num, ratio, bin_map):
        support, state = group_l0_fit(dataset, config, float(lambda_s), bin_map, **kwargs)
        if len(support) == k:
            return float(lambda_s), support, state
        if len(support) < k and (fallback is None or len(support) > len(fallback[1])):
            fallback = (float(lambda_s), support, state)
        if len(support) > k:
            break
    if fallback is None:
        raise RuntimeError(f"no lambda_s on the grid gives a support of at most {k} features")
    warnings.warn(f"no lambda_s on the grid gives exactly {k} features; using {len(fallback[1])}",
                  SparsityWarning, stacklevel=2)
    return fallback
