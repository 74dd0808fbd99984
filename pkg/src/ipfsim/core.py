#!/usr/bin/env python3

# ipfsim
# This file is part of ipfsim.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>

"""
Library of functions for iterating the Impulse Pattern Formulation (IPF).

The simple form is g+ = g - ln(g/alpha). The general form adds reflections
with strengths beta_k acting with delay k:

    g+ = g - ln( (g - sum_k beta_k exp(g - g_k-)) / alpha )

All trajectories are computed by one vectorised kernel (iterate_batch), so a
single run through iterate() and a column of a large parameter sweep give the
same numbers.
"""

# =============================================================================
# Import modules
# =============================================================================
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

logger = logging.getLogger(__name__)

DIVERGENCE_CAP = 1e6  # |g| above this counts as runaway growth


def DefaultProtocol():
    """Returns the default iteration protocol used for orbit diagrams and
    regime classification: 2500 iteration steps, of which the last 250 are
    inspected.
    Output:
        parP: dict containing protocol parameters
    """
    parP = {
        "n_steps": 2500,  # iteration steps after seeding
        "tail": 250,  # samples kept for classification
        "tol": 1e-6,  # relative tolerance for period detection
        "p_max": 64,  # longest period searched for
        "g0": 0.5,  # seed system state
    }
    return parP


# =============================================================================
# Errors and warnings
# =============================================================================
class IpfError(Exception):
    """Base class of all ipfsim errors."""


class DomainError(IpfError, ValueError):
    """Non-positive state or alpha handed to the logarithm."""


class ParameterError(IpfError, ValueError):
    """A precondition on an input parameter does not hold."""


class SearchError(IpfError, RuntimeError):
    """A numerical boundary search found no bracket or no transition."""


class ScalingError(IpfError, ValueError):
    """An envelope cannot be mapped onto an alpha range."""


class ScoreError(IpfError, RuntimeError):
    """The recursion diverged before a score could be recorded."""


class RenderError(IpfError, RuntimeError):
    """A score holds states that cannot be rendered."""


class IpfConstraintWarning(UserWarning):
    """Energy or cascade condition on alpha and the betas is violated."""


# =============================================================================
# Domain types
# =============================================================================
@dataclass(frozen=True)
class StateHistory:
    """Current system state g and past states, newest first (g-, g2-, ...)."""

    current: float
    past: tuple = ()

    def __post_init__(self):
        past = tuple(float(v) for v in self.past)
        object.__setattr__(self, "current", float(self.current))
        object.__setattr__(self, "past", past)
        if not np.all(np.isfinite((self.current,) + past)):
            raise ParameterError("history entries must be finite")

    def chain(self):
        """States oldest first, ending with the current state."""
        return tuple(reversed(self.past)) + (self.current,)


@dataclass(frozen=True)
class IpfParams:
    """Full configuration of one IPF run.

    alpha is the strength of the primary back-travelling impulse, betas the
    reflection strengths beta_1..beta_n. A run starts either from the single
    seed g0 (the remaining history is derived with the simple IPF) or from an
    explicit history.
    """

    alpha: float
    betas: tuple = ()
    g0: float = 0.5
    history: StateHistory | None = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if any(not b >= 0 for b in self.betas):
            raise ParameterError(f"betas must be non-negative, got {self.betas}")
        if self.history is None:
            if not self.g0 > 0:
                raise ParameterError(f"g0 must be positive, got {self.g0}")
            object.__setattr__(self, "g0", float(self.g0))
        else:
            if len(self.history.past) != len(self.betas):
                raise ParameterError(
                    "explicit history needs one past state per beta, got "
                    f"{len(self.history.past)} for {len(self.betas)} betas"
                )
            object.__setattr__(self, "g0", self.history.current)

    @classmethod
    def with_history(cls, alpha, betas, seeds):
        """Builds parameters from explicit seeds given newest first
        (g, g-, g2-, ...), e.g. seeds=(0.3, 0.0) for g01=0.3 and g02=0.
        """
        seeds = tuple(seeds)
        if len(seeds) != len(tuple(betas)) + 1:
            raise ParameterError(
                f"{len(tuple(betas))} betas need {len(tuple(betas)) + 1} seeds"
            )
        return cls(alpha, betas, history=StateHistory(seeds[0], seeds[1:]))

    @property
    def depth(self):
        return len(self.betas)

    def constraint_warnings(self):
        """Lists violated constraints: energy (alpha >= sum of betas) and
        cascade (alpha > beta_1 > beta_2 > ...). Neither is fatal.
        """
        messages = []
        total = sum(self.betas)
        if self.alpha < total:
            messages.append(
                f"energy constraint violated: alpha={self.alpha:g} < "
                f"sum(beta)={total:g}"
            )
        chain = (self.alpha,) + self.betas
        for k in range(1, len(chain)):
            if chain[k] >= chain[k - 1]:
                messages.append(
                    f"cascade condition violated: beta_{k}={chain[k]:g} >= "
                    + ("alpha" if k == 1 else f"beta_{k - 1}")
                    + f"={chain[k - 1]:g}"
                )
        return messages

    def check_constraints(self):
        """Issues an IpfConstraintWarning per violated constraint."""
        messages = self.constraint_warnings()
        for message in messages:
            warnings.warn(message, IpfConstraintWarning, stacklevel=2)
        return messages


@dataclass(frozen=True)
class DivergenceSignal:
    """The logarithm argument of a general step was not positive; g becomes
    complex and the recursion diverges."""

    argument: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States g_0..g_N of one run. The seed chain comes first (oldest seed
    at index 0). diverged_at is the index of the first state that could not
    be produced; no state is stored from there on."""

    states: np.ndarray
    diverged_at: int | None
    params: IpfParams

    @property
    def diverged(self):
        return self.diverged_at is not None


@dataclass(frozen=True)
class RegimeReport:
    """Long-run regime of a trajectory.
    kind: "fixed-point", "period-<p>", "chaotic" or "divergent"
    limit_values: distinct cycle values in ascending order
    period: p, None for chaotic or divergent runs
    """

    kind: str
    limit_values: tuple = ()
    period: int | None = None

    @property
    def is_periodic(self):
        return self.period is not None


@dataclass(frozen=True, eq=False)
class BatchResult:
    """Output of iterate_batch.
    states: (keep, M) array of the last `keep` states of each run, NaN where
        a run had already diverged
    diverged_at: (M,) index of the failing state, -1 for bounded runs
    first_index: state index of row 0 of `states`
    """

    states: np.ndarray
    diverged_at: np.ndarray
    first_index: int

    @property
    def diverged(self):
        return self.diverged_at >= 0


# =============================================================================
# Single steps
# =============================================================================
def step_simple(g, alpha):
    """Simple IPF step.
    Input:
        g: current system state, > 0
        alpha: impulse strength, > 0
    Output:
        g+ = g - ln(g/alpha)
    """
    if not (g > 0 and alpha > 0):
        raise DomainError(f"simple IPF needs g > 0 and alpha > 0, got g={g}, alpha={alpha}")
    arg = g / alpha
    return float(g - np.log(arg))


def step_general(history, params):
    """General IPF step.
    Input:
        history: StateHistory with one past state per beta
        params: IpfParams providing alpha and the betas
    Output:
        g+ as float, or a DivergenceSignal if the logarithm argument
        (g - sum beta_k exp(g - g_k-)) / alpha is not positive.
        The caller shifts the history.
    """
    if len(history.past) != len(params.betas):
        raise ParameterError("history depth does not match the number of betas")
    g = history.current
    s = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for beta, past in zip(params.betas, history.past):
            if beta == 0.0:
                continue
            s = s + beta * np.exp(g - past)
        arg = (g - s) / params.alpha
        if not arg > 0:
            return DivergenceSignal(float(arg))
        return float(g - np.log(arg))


def fixed_point(params):
    """Fixed point g_s = alpha + sum(beta)."""
    return params.alpha + sum(params.betas)


def fixed_point_multipliers(params):
    """Eigenvalues of the linearised general IPF at the fixed point.

    The recursion is a delay map of dimension n+1. At g_s the partial
    derivatives are dg+/dg = 1 - (1 - sum beta)/alpha and
    dg+/dg_k- = -beta_k/alpha.
    Input:
        params: IpfParams
    Output:
        complex array of n+1 multipliers ([1 - 1/alpha] without betas)
    """
    alpha = params.alpha
    a0 = 1.0 - (1.0 - sum(params.betas)) / alpha
    coefficients = [1.0, -a0] + [beta / alpha for beta in params.betas]
    return np.roots(coefficients).astype(complex)


def is_linearly_stable(params):
    """True if every fixed-point multiplier lies inside the unit circle."""
    return bool(np.max(np.abs(fixed_point_multipliers(params))) < 1.0)


# =============================================================================
# Vectorised iteration
# =============================================================================
def _advance(g, past, alpha, betas):
    """One general IPF step on arrays; past[k] holds g_(k+1)-.
    Returns the next states and a mask of runs that diverged in this step."""
    s = np.zeros_like(g)
    with np.errstate(all="ignore"):
        for k, beta in enumerate(betas):
            if beta == 0.0:
                continue
            s = s + beta * np.exp(g - past[k])
        arg = (g - s) / alpha
        g_next = g - np.log(arg)
        failed = ~(arg > 0) | ~np.isfinite(g_next) | (np.abs(g_next) > DIVERGENCE_CAP)
    return g_next, failed


def _seed_chain(g0, alpha, depth):
    """Derives a history of `depth` past states from one seed by running the
    simple IPF; returns the chain oldest first and a failure mask per link."""
    chain = [g0]
    failures = [~(g0 > 0)]
    g = g0
    for _ in range(depth):
        g, failed = _advance(g, (), alpha, ())
        chain.append(g)
        failures.append(failed)
    return chain, failures


def iterate_batch(alphas, betas, n_steps, keep=None, g0=None, history=None, chain=None):
    """Iterates many IPF runs at once.
    Input:
        alphas: (M,) impulse strengths, one per run
        betas: reflection strengths shared by all runs
        n_steps: general steps after the seed chain
        keep: number of trailing states to store (default: all)
        g0: scalar or (M,) seeds, history derived with the simple IPF
        history: StateHistory shared by all runs (explicit seeds)
        chain: list of depth+1 arrays (M,), states oldest first
    Output:
        BatchResult
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    betas = tuple(float(b) for b in betas)
    m = alphas.size
    depth = len(betas)

    if chain is not None:
        chain = [np.broadcast_to(np.asarray(c, dtype=float), (m,)).copy() for c in chain]
        failures = [~np.isfinite(c) for c in chain]
    elif history is not None:
        chain = [np.full(m, v) for v in history.chain()]
        failures = [np.zeros(m, dtype=bool) for _ in chain]
    else:
        if g0 is None:
            raise ParameterError("iterate_batch needs g0, history or chain")
        seeds = np.broadcast_to(np.asarray(g0, dtype=float), (m,)).copy()
        chain, failures = _seed_chain(seeds, alphas, depth)
    if len(chain) != depth + 1:
        raise ParameterError(f"{depth} betas need {depth + 1} seed states, got {len(chain)}")

    total = depth + 1 + n_steps
    keep = total if keep is None else min(int(keep), total)
    first = total - keep
    states = np.full((keep, m), np.nan)
    diverged_at = np.full(m, -1, dtype=int)
    alive = np.ones(m, dtype=bool)

    def record(index, g, failed):
        newly = failed & alive
        diverged_at[newly] = index
        alive[newly] = False
        if index >= first:
            states[index - first] = np.where(alive, g, np.nan)

    for index, (g, failed) in enumerate(zip(chain, failures)):
        record(index, g, failed)

    g = chain[-1].copy()
    past = np.array(chain[-2::-1]) if depth else np.empty((0, m))
    for step in range(n_steps):
        if not alive.any():
            break
        g_next, failed = _advance(g, past, alphas, betas)
        record(depth + 1 + step, g_next, failed)
        if depth:
            past = np.concatenate((g[np.newaxis], past[:-1]))
        g = g_next

    return BatchResult(states=states, diverged_at=diverged_at, first_index=first)


def iterate(params, n_steps):
    """Runs the IPF for n_steps steps after seeding.
    Input:
        params: IpfParams
        n_steps: number of steps, >= 1
    Output:
        Trajectory holding every state, stopped at divergence
    """
    if int(n_steps) < 1:
        raise ParameterError(f"n_steps must be >= 1, got {n_steps}")
    batch = iterate_batch(
        [params.alpha], params.betas, int(n_steps), g0=params.g0, history=params.history
    )
    column = batch.states[:, 0]
    if batch.diverged[0]:
        stop = int(batch.diverged_at[0])
        return Trajectory(states=column[:stop].copy(), diverged_at=stop, params=params)
    return Trajectory(states=column.copy(), diverged_at=None, params=params)


# =============================================================================
# Regime classification
# =============================================================================
def count_distinct(values, tol=1e-6):
    """Number of distinct values after merging clusters whose neighbours lie
    within tol relative to the largest magnitude."""
    values = np.sort(np.asarray(values, dtype=float).ravel())
    if values.size == 0:
        return 0
    scale = max(np.max(np.abs(values)), np.finfo(float).tiny)
    return int(1 + np.count_nonzero(np.diff(values) > tol * scale))


def _merge_values(values, threshold):
    values = np.sort(values)
    merged = [values[0]]
    for v in values[1:]:
        if v - merged[-1] > threshold:
            merged.append(v)
    return tuple(float(v) for v in merged)


def classify_tails(tails, diverged, tol=1e-6, p_max=64):
    """Classifies many tails at once.
    Input:
        tails: (T, M) trailing states, one column per run
        diverged: (M,) bool
        tol: relative tolerance of the shift test
        p_max: longest period searched for
    Output:
        list of M RegimeReport
    """
    tails = np.asarray(tails, dtype=float)
    diverged = np.asarray(diverged, dtype=bool)
    n_tail, m = tails.shape
    with np.errstate(invalid="ignore"):
        scale = np.nanmax(np.abs(np.where(diverged, 1.0, tails)), axis=0)
    threshold = tol * np.maximum(scale, np.finfo(float).tiny)

    period = np.zeros(m, dtype=int)
    undecided = ~diverged
    for p in range(1, min(int(p_max), n_tail - 1) + 1):
        columns = np.flatnonzero(undecided)
        if columns.size == 0:
            break
        shift = np.abs(tails[p:, columns] - tails[:-p, columns])
        ok = np.all(shift <= threshold[columns], axis=0)
        period[columns[ok]] = p
        undecided[columns[ok]] = False

    reports = []
    for j in range(m):
        if diverged[j]:
            reports.append(RegimeReport("divergent"))
        elif period[j] == 0:
            reports.append(RegimeReport("chaotic"))
        else:
            p = int(period[j])
            limits = _merge_values(tails[-p:, j], threshold[j])
            kind = "fixed-point" if p == 1 else f"period-{p}"
            reports.append(RegimeReport(kind, limits, p))
    return reports


def classify_regime(trajectory, tail=250, tol=1e-6, p_max=64):
    """Classifies the long-run regime from the last `tail` states.
    Input:
        trajectory: Trajectory
        tail: number of trailing states inspected
        tol: relative tolerance for g_i ~ g_(i+p)
        p_max: longest period searched for
    Output:
        RegimeReport with the minimal period
    """
    if trajectory.diverged:
        return RegimeReport("divergent")
    if tail < 2 or tail > len(trajectory.states):
        raise ParameterError(
            f"tail={tail} needs between 2 and {len(trajectory.states)} states"
        )
    tails = trajectory.states[-tail:, np.newaxis]
    return classify_tails(tails, np.array([False]), tol, p_max)[0]


# =============================================================================
# Boundaries of the parameter space
# =============================================================================
def _sign_search(predicate, lo, hi, xtol):
    """Bisection on a boolean predicate that is False at lo and True at hi."""

    def f(x):
        return 1.0 if predicate(x) else -1.0

    return float(optimize.bisect(f, lo, hi, xtol=xtol))


def alpha_min(betas, g0=1.0, history=None, n_steps=2500, lo=1e-6, hi=1.0,
              n_scan=400, n_fine=201, xtol=1e-7):
    """Lowest alpha in [lo, hi] above which the IPF does not diverge from the
    given seed.

    With betas the divergent set is not an interval: bounded islands sit
    below its upper edge and runs diverge again for alpha well above 1 from
    seed transients. A log-spaced scan over [lo, hi] finds the last
    diverging alpha, a linear scan between it and the next scan point
    narrows the edge, bisection refines it. Without betas the result is 1/e.
    Input:
        betas: reflection strengths
        g0: seed state (ignored when history is given)
        history: explicit StateHistory
        n_steps: iteration horizon per alpha
    Output:
        alpha_min
    """
    betas = tuple(betas)

    def last_diverging(alphas):
        batch = iterate_batch(alphas, betas, n_steps, keep=1, g0=g0, history=history)
        hits = np.flatnonzero(batch.diverged)
        return int(hits[-1]) if hits.size else -1

    scan = np.geomspace(lo, hi, int(n_scan))
    k = last_diverging(scan)
    if k < 0 or k == scan.size - 1:
        raise SearchError(
            f"no divergence boundary bracketed in [{lo:g}, {hi:g}] for betas={betas}"
        )
    fine = np.linspace(scan[k], scan[k + 1], int(n_fine))
    j = last_diverging(fine)

    def bounded(alpha):
        params = IpfParams(alpha, betas, g0, history)
        return not iterate(params, n_steps).diverged

    result = _sign_search(bounded, fine[j], fine[j + 1], xtol)
    logger.debug("alpha_min(betas=%s) = %.8f", betas, result)
    return result


def _fixed_point_attracting(alphas, betas, n_steps, delta=1e-7, window=16):
    """Starts each run at g_s with a relative perturbation of the current
    state and checks that the deviation shrinks between mid-horizon and the
    end of the horizon."""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    gs = alphas + sum(betas)
    chain = [gs.copy() for _ in betas] + [gs * (1.0 + delta)]
    batch = iterate_batch(alphas, betas, n_steps, chain=chain)
    deviation = np.abs(batch.states - gs) / gs
    mid = batch.states.shape[0] // 2
    d_mid = np.max(deviation[mid - window:mid], axis=0)
    d_end = np.max(deviation[-window:], axis=0)
    with np.errstate(invalid="ignore"):
        shrinking = (d_end < d_mid) | (d_end <= 1e-12)
        return ~batch.diverged & shrinking & (d_end < 1e-3)


def first_bifurcation_alpha(betas, lo=0.01, hi=1.0, n_scan=200, n_steps=2500, xtol=1e-7):
    """First bifurcation point: descending in alpha, the first value where the
    fixed point g_s stops attracting and the regime turns from fixed-point to
    period-2. Without betas the result is 0.5.
    Input:
        betas: reflection strengths
        lo, hi: scan range in alpha
    Output:
        alpha_c
    """
    betas = tuple(betas)
    scan = np.linspace(hi, lo, int(n_scan))
    attracting = _fixed_point_attracting(scan, betas, n_steps)
    if not attracting[0]:
        raise SearchError(f"fixed point not attracting at alpha={hi:g}")
    lost = np.flatnonzero(~attracting)
    if lost.size == 0:
        raise SearchError(f"no bifurcation found in [{lo:g}, {hi:g}] for betas={betas}")
    k = int(lost[0])

    def stable(alpha):
        return bool(_fixed_point_attracting([alpha], betas, n_steps)[0])

    result = _sign_search(stable, scan[k], scan[k - 1], xtol)
    logger.debug("first_bifurcation_alpha(betas=%s) = %.8f", betas, result)
    return result
