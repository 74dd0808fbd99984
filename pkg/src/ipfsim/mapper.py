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
Maps the two-reflection IPF over the (beta1, beta2) plane.

For every grid cell alpha is swept over (0, 1]. Period-2 orbits give an
audible interval, the ratio of the two alternating states normalised into
]0, 1]. The likelihood of a target interval in a cell is its reliability
(fraction of seeds in ]0, 5] producing the interval) divided by the
sensitivity of the interval to alpha.

Periods are detected with a relative tolerance of 1e-4 (core uses 1e-6):
period-2 orbits close to a period doubling still contract after n_steps.

Cell evaluation runs in two stages. Stage one sweeps alpha (and alpha +- h)
from the default seed and yields the interval per alpha, the maximum
interval of the cell and the finite-difference derivative. Stage two runs
all seeds, only at alpha values where the default seed already hits a target
interval with finite derivative; everywhere else the likelihood is zero.
"""

# =============================================================================
# Import modules
# =============================================================================
from __future__ import annotations

import logging
import multiprocessing
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import pandas as pd

from ipfsim import core

logger = logging.getLogger(__name__)

MARK_INTERVAL = "interval"
MARK_STABLE = "stable-only"
MARK_NONE = "none"


def DefaultMapProtocol():
    """Returns the default protocol for parameter maps.
    Output:
        parM: dict containing the iteration protocol of core.DefaultProtocol()
              extended by the grids and tolerances of the mapper
    """
    parM = core.DefaultProtocol()
    parM.update(
        {
            "p_max": 2,  # only fixed points and period-2 orbits carry intervals
            "tol": 1e-4,  # period-2 orbits near a flip still contract at n_steps
            "n_alpha": 200,  # alpha grid 1/n, 2/n, ..., 1
            "n_seeds": 150,  # seeds evenly spaced in ]0, seed_max]
            "seed_max": 5.0,
            "g0": 2.5,  # default seed for the alpha sweep
            "tol_semitones": 0.25,
            "h": 1e-3,  # finite-difference step in alpha
            "eps": 1e-6,  # derivative floor
            "grid": 120,  # cells per beta axis
            "beta_max": 0.5,
            "jobs": 1,
        }
    )
    return parM


def _protocol(protocol):
    parM = DefaultMapProtocol()
    parM.update(protocol or {})
    for key in ("n_alpha", "n_seeds", "grid", "n_steps", "tail", "jobs", "p_max"):
        if int(parM[key]) < 1:
            raise core.ParameterError(f"protocol entry {key} must be >= 1, got {parM[key]}")
    for key in ("seed_max", "g0", "tol_semitones", "h", "eps", "tol"):
        if not parM[key] > 0:
            raise core.ParameterError(f"protocol entry {key} must be positive, got {parM[key]}")
    if parM["tail"] > parM["n_steps"]:
        raise core.ParameterError("protocol tail exceeds n_steps")
    return parM


def alpha_grid(protocol=None):
    """n_alpha evenly spaced alpha values in (0, 1]."""
    n = int(_protocol(protocol)["n_alpha"])
    return np.linspace(1.0 / n, 1.0, n)


def seed_grid(protocol=None):
    """n_seeds evenly spaced initial states in ]0, seed_max]."""
    parM = _protocol(protocol)
    n, top = int(parM["n_seeds"]), float(parM["seed_max"])
    return np.linspace(top / n, top, n)


def beta_grid(protocol=None):
    """grid evenly spaced beta values in [0, beta_max]."""
    parM = _protocol(protocol)
    return np.linspace(0.0, float(parM["beta_max"]), int(parM["grid"]))


# =============================================================================
# Intervals
# =============================================================================
@dataclass(frozen=True)
class Interval:
    """Audible interval as the normalised ratio of two alternating states."""

    ratio: float

    def __post_init__(self):
        object.__setattr__(self, "ratio", float(self.ratio))
        if not 0.0 < self.ratio <= 1.0:
            raise core.ParameterError(f"interval ratio must lie in ]0, 1], got {self.ratio}")

    @property
    def semitones(self):
        return float(12.0 * np.log2(1.0 / self.ratio))

    @classmethod
    def from_semitones(cls, semitones):
        if not semitones >= 0:
            raise core.ParameterError(f"semitones must be >= 0, got {semitones}")
        return cls(2.0 ** (-float(semitones) / 12.0))

    @classmethod
    def from_ratio(cls, ratio):
        """Accepts either orientation of the ratio, e.g. 2.378 or 0.4205."""
        ratio = float(ratio)
        if not ratio > 0:
            raise core.ParameterError(f"ratio must be positive, got {ratio}")
        return cls(1.0 / ratio if ratio > 1.0 else ratio)


def extract_interval(report):
    """Interval of a regime: fixed point -> unison, period-2 -> ratio of the
    two limit values, anything else -> None."""
    if report.kind == "fixed-point":
        return Interval(1.0)
    if report.period == 2 and len(report.limit_values) == 2:
        lo, hi = report.limit_values
        if lo > 0 and hi > 0:
            return Interval(lo / hi)
    return None


def _semitones_of(reports):
    """Semitones per report, NaN where no interval exists."""
    out = np.full(len(reports), np.nan)
    for j, report in enumerate(reports):
        interval = extract_interval(report)
        if interval is not None:
            out[j] = interval.semitones
    return out


def _ratios_of(reports):
    out = np.full(len(reports), np.nan)
    for j, report in enumerate(reports):
        interval = extract_interval(report)
        if interval is not None:
            out[j] = interval.ratio
    return out


def _regimes(betas, alphas, seeds, parM):
    """Regime of every (alpha, seed) pair, alphas and seeds broadcast."""
    alphas, seeds = np.broadcast_arrays(np.asarray(alphas, float), np.asarray(seeds, float))
    batch = core.iterate_batch(
        alphas.ravel(), betas, int(parM["n_steps"]), keep=int(parM["tail"]), g0=seeds.ravel()
    )
    return core.classify_tails(batch.states, batch.diverged, parM["tol"], int(parM["p_max"]))


def _derivative(ratio_lo, ratio_hi, h, valid):
    with np.errstate(invalid="ignore"):
        derivative = np.abs(ratio_hi - ratio_lo) / (2.0 * h)
    derivative[~valid | ~np.isfinite(derivative)] = np.inf
    return derivative


def _seed_semitones(betas, alphas, parM):
    """(len(alphas), n_seeds) semitones over the seed grid."""
    alphas = np.asarray(alphas, dtype=float)
    seeds = seed_grid(parM)
    reports = _regimes(betas, alphas[:, np.newaxis], seeds[np.newaxis, :], parM)
    return _semitones_of(reports).reshape(alphas.size, seeds.size)


# =============================================================================
# Single-cell quantities
# =============================================================================
def interval_derivative(beta1, beta2, alpha, protocol=None):
    """Central finite difference |I(alpha+h) - I(alpha-h)| / 2h of the
    normalised ratio, from the protocol's default seed.
    Output:
        derivative >= 0, inf where an interval is undefined or alpha +- h
        leaves (0, 1]
    """
    parM = _protocol(protocol)
    h = float(parM["h"])
    if not (alpha - h > 0 and alpha + h <= 1.0):
        return float("inf")
    reports = _regimes((beta1, beta2), np.array([alpha - h, alpha + h]), parM["g0"], parM)
    ratios = _ratios_of(reports)
    return float(_derivative(ratios[:1], ratios[1:], h, np.array([True]))[0])


def reliability(beta1, beta2, alpha, target, protocol=None):
    """Fraction of seeds in ]0, seed_max] whose regime yields the target
    interval within +- tol_semitones."""
    parM = _protocol(protocol)
    semitones = _seed_semitones((beta1, beta2), [alpha], parM)[0]
    with np.errstate(invalid="ignore"):
        hits = np.abs(semitones - target.semitones) <= parM["tol_semitones"]
    return float(np.count_nonzero(hits) / semitones.size)


@dataclass
class CellResult:
    max_interval: float  # semitones, NaN without tone production
    mark: str
    reliability: list = field(default_factory=list)
    derivative: list = field(default_factory=list)
    likelihood: list = field(default_factory=list)
    alpha: list = field(default_factory=list)


def _evaluate_cell(beta1, beta2, targets, parM):
    """Evaluates one (beta1, beta2) cell for all targets."""
    betas = (float(beta1), float(beta2))
    alphas = alpha_grid(parM)
    n = alphas.size
    h = float(parM["h"])
    valid = (alphas - h > 0) & (alphas + h <= 1.0)
    sweep = np.concatenate((alphas, np.where(valid, alphas - h, alphas), np.where(valid, alphas + h, alphas)))
    reports = _regimes(betas, sweep, parM["g0"], parM)
    semitones = _semitones_of(reports[:n])
    ratios = _ratios_of(reports)
    derivative = _derivative(ratios[n:2 * n], ratios[2 * n:], h, valid)

    periodic = np.array([r.period == 2 for r in reports[:n]]) & np.isfinite(semitones)
    fixed = np.array([r.kind == "fixed-point" for r in reports[:n]])
    if periodic.any():
        cell = CellResult(float(np.max(semitones[periodic])), MARK_INTERVAL)
    elif fixed.any():
        cell = CellResult(0.0, MARK_STABLE)
    else:
        cell = CellResult(float("nan"), MARK_NONE)

    tol = parM["tol_semitones"]
    matches = []
    with np.errstate(invalid="ignore"):
        for target in targets:
            matches.append((np.abs(semitones - target.semitones) <= tol) & np.isfinite(derivative))
    candidates = np.flatnonzero(np.any(matches, axis=0)) if matches else np.array([], dtype=int)
    if candidates.size:
        seeded = _seed_semitones(betas, alphas[candidates], parM)
    for target, match in zip(targets, matches):
        rows = np.flatnonzero(match[candidates])
        if rows.size:
            with np.errstate(invalid="ignore"):
                hits = np.abs(seeded[rows] - target.semitones) <= tol
            rel = np.count_nonzero(hits, axis=1) / seeded.shape[1]
            der = derivative[candidates[rows]]
            like = rel / np.maximum(der, parM["eps"])
            best = int(np.argmax(like))
        if rows.size == 0 or not like[best] > 0:
            cell.reliability.append(0.0)
            cell.derivative.append(float("inf"))
            cell.likelihood.append(0.0)
            cell.alpha.append(float("nan"))
            continue
        cell.reliability.append(float(rel[best]))
        cell.derivative.append(float(der[best]))
        cell.likelihood.append(float(like[best]))
        cell.alpha.append(float(alphas[candidates[rows[best]]]))
    return cell


def _evaluate_row(task):
    beta1, beta2_axis, targets, parM = task
    return [_evaluate_cell(beta1, beta2, targets, parM) for beta2 in beta2_axis]


def best_alpha(beta1, beta2, target, protocol=None):
    """Alpha on the protocol grid with the highest likelihood of producing
    target in the cell (beta1, beta2), None if the cell cannot produce it."""
    parM = _protocol(protocol)
    cell = _evaluate_cell(beta1, beta2, [target], parM)
    return None if cell.likelihood[0] == 0.0 else cell.alpha[0]


# =============================================================================
# Maps
# =============================================================================
@dataclass(eq=False)
class LikelihoodMap:
    """Per-cell values over the (beta1, beta2) plane. All arrays have shape
    (len(beta1_axis), len(beta2_axis)) and are indexed [i_beta1, i_beta2].
    Maps without target hold intervals only (reliability etc. are NaN)."""

    beta1_axis: np.ndarray
    beta2_axis: np.ndarray
    max_interval: np.ndarray
    mark: np.ndarray
    reliability: np.ndarray
    derivative: np.ndarray
    likelihood: np.ndarray
    alpha: np.ndarray
    target: Interval | None = None
    alpha_grid: np.ndarray | None = None

    @property
    def is_empty(self):
        """True if no cell has a positive likelihood."""
        like = np.nan_to_num(self.likelihood, nan=0.0)
        return not bool(np.any(like > 0))

    def cell(self, i, j):
        return {
            "beta1": float(self.beta1_axis[i]),
            "beta2": float(self.beta2_axis[j]),
            "max_interval_semitones": float(self.max_interval[i, j]),
            "mark": str(self.mark[i, j]),
            "reliability": float(self.reliability[i, j]),
            "derivative": float(self.derivative[i, j]),
            "likelihood": float(self.likelihood[i, j]),
            "alpha": float(self.alpha[i, j]),
        }

    def to_frame(self):
        b1, b2 = np.meshgrid(self.beta1_axis, self.beta2_axis, indexing="ij")
        return pd.DataFrame.from_dict(
            {
                "beta1": b1.ravel(),
                "beta2": b2.ravel(),
                "max_interval_semitones": self.max_interval.ravel(),
                "reliability": self.reliability.ravel(),
                "derivative": self.derivative.ravel(),
                "likelihood": self.likelihood.ravel(),
                "alpha": self.alpha.ravel(),
                "mark": self.mark.ravel(),
            }
        )

    @classmethod
    def from_frame(cls, df, target=None):
        """Rebuilds a map from the table written by write_map_csv."""
        beta1_axis = np.unique(df["beta1"].to_numpy(dtype=float))
        beta2_axis = np.unique(df["beta2"].to_numpy(dtype=float))
        shape = (beta1_axis.size, beta2_axis.size)
        if len(df) != shape[0] * shape[1]:
            raise core.ParameterError("map table is not a complete rectangular grid")
        df = df.sort_values(["beta1", "beta2"], kind="stable")

        def grid(name, dtype=float):
            if name not in df:
                return np.full(shape, np.nan)
            return df[name].to_numpy(dtype=dtype).reshape(shape)

        marks = df["mark"].fillna(MARK_NONE).to_numpy(dtype=str).reshape(shape) if "mark" in df else np.full(shape, MARK_NONE)
        return cls(
            beta1_axis, beta2_axis,
            grid("max_interval_semitones"), marks,
            grid("reliability"), grid("derivative"), grid("likelihood"), grid("alpha"),
            target=target,
        )


def _evaluate_grid(beta_grids, targets, parM):
    beta1_axis, beta2_axis = (np.asarray(axis, dtype=float) for axis in beta_grids)
    if beta1_axis.size == 0 or beta2_axis.size == 0:
        raise core.ParameterError("beta grids must be non-empty")
    tasks = [(b1, beta2_axis, targets, parM) for b1 in beta1_axis]
    jobs = int(parM["jobs"])
    logger.info(
        "evaluating %dx%d cells for %d targets with %d job(s)",
        beta1_axis.size, beta2_axis.size, len(targets), jobs,
    )
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            rows = pool.map(_evaluate_row, tasks)
    else:
        rows = [_evaluate_row(task) for task in tasks]
    return beta1_axis, beta2_axis, rows


def _default_grids(beta_grids, parM):
    if beta_grids is None:
        axis = beta_grid(parM)
        return axis, axis
    return beta_grids


def likelihood_maps(beta_grids, targets, protocol=None):
    """Likelihood maps for several targets from one pass over the grid.
    Input:
        beta_grids: (beta1_axis, beta2_axis), None for the protocol grid
        targets: list of Interval
        protocol: dict, see DefaultMapProtocol()
    Output:
        list of LikelihoodMap, one per target, each normalised to max 1
    """
    parM = _protocol(protocol)
    targets = list(targets)
    beta1_axis, beta2_axis, rows = _evaluate_grid(_default_grids(beta_grids, parM), targets, parM)
    shape = (beta1_axis.size, beta2_axis.size)
    max_interval = np.array([[c.max_interval for c in row] for row in rows]).reshape(shape)
    mark = np.array([[c.mark for c in row] for row in rows]).reshape(shape)

    maps = []
    for t, target in enumerate(targets):
        raw = np.array([[c.likelihood[t] for c in row] for row in rows]).reshape(shape)
        peak = raw.max()
        if peak > 0:
            likelihood = raw / peak
        else:
            logger.warning("likelihood map for %.3f semitones is empty", target.semitones)
            likelihood = raw
        maps.append(
            LikelihoodMap(
                beta1_axis, beta2_axis, max_interval, mark,
                np.array([[c.reliability[t] for c in row] for row in rows]).reshape(shape),
                np.array([[c.derivative[t] for c in row] for row in rows]).reshape(shape),
                likelihood,
                np.array([[c.alpha[t] for c in row] for row in rows]).reshape(shape),
                target=target,
                alpha_grid=alpha_grid(parM),
            )
        )
    return maps


def likelihood_map(beta_grids, target, protocol=None):
    """Normalised likelihood of producing `target` over the (beta1, beta2)
    plane. An all-zero map is returned as is (see LikelihoodMap.is_empty)."""
    return likelihood_maps(beta_grids, [target], protocol)[0]


def max_interval_map(beta_grids, protocol=None):
    """Largest interval over the alpha sweep per cell, with the marks
    interval / stable-only / none."""
    parM = _protocol(protocol)
    beta1_axis, beta2_axis, rows = _evaluate_grid(_default_grids(beta_grids, parM), [], parM)
    shape = (beta1_axis.size, beta2_axis.size)
    empty = np.full(shape, np.nan)
    return LikelihoodMap(
        beta1_axis, beta2_axis,
        np.array([[c.max_interval for c in row] for row in rows]).reshape(shape),
        np.array([[c.mark for c in row] for row in rows]).reshape(shape),
        empty, empty.copy(), empty.copy(), empty.copy(),
        target=None,
        alpha_grid=alpha_grid(parM),
    )


# =============================================================================
# Centroids
# =============================================================================
@dataclass(frozen=True)
class CentroidResult:
    beta1: float
    beta2: float
    region_mask: frozenset
    target: Interval | None = None

    @property
    def region_cell_count(self):
        return len(self.region_mask)


def centroid(likelihood_map, level=0.9):
    """Likelihood-weighted mean of (beta1, beta2) over the cells with at least
    `level` times the maximum likelihood."""
    if likelihood_map.is_empty:
        raise core.ParameterError("centroid of an empty likelihood map")
    like = np.nan_to_num(likelihood_map.likelihood, nan=0.0)
    mask = like >= level * like.max()
    b1, b2 = np.meshgrid(likelihood_map.beta1_axis, likelihood_map.beta2_axis, indexing="ij")
    weights = like[mask]
    region = frozenset(zip(*(idx.tolist() for idx in np.nonzero(mask))))
    return CentroidResult(
        float(np.sum(weights * b1[mask]) / np.sum(weights)),
        float(np.sum(weights * b2[mask]) / np.sum(weights)),
        region,
        likelihood_map.target,
    )


def catalog_scan(intervals, protocol=None, beta_grids=None):
    """Centroid per catalog interval (semitones). Intervals whose map is empty
    give a NaN centroid so the result lines up with the catalog."""
    intervals = [float(s) for s in intervals]
    if not intervals:
        raise core.ParameterError("catalog is empty")
    targets = [Interval.from_semitones(s) for s in intervals]
    results = []
    for target, lmap in zip(targets, likelihood_maps(beta_grids, targets, protocol)):
        if lmap.is_empty:
            logger.warning("no cell produces %.3f semitones", target.semitones)
            results.append(CentroidResult(float("nan"), float("nan"), frozenset(), target))
        else:
            results.append(centroid(lmap))
    return results


# =============================================================================
# Catalog and file output
# =============================================================================
def load_catalog(path):
    """Reads one semitone value per line; '#' starts a comment."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        try:
            values = np.loadtxt(path, comments="#", ndmin=1)
        except ValueError as error:
            raise core.ParameterError(f"{path}: not a list of semitone values ({error})") from None
    if values.ndim != 1:
        raise core.ParameterError(f"{path}: expected one semitone value per line")
    if values.size == 0:
        raise core.ParameterError(f"{path}: catalog holds no intervals")
    return values.tolist()


def sample_catalog():
    """The multiphonic interval sample shipped with the package."""
    with resources.as_file(resources.files("ipfsim") / "data" / "multiphonic_intervals.txt") as path:
        return load_catalog(path)


def write_map_csv(likelihood_map, path):
    likelihood_map.to_frame().to_csv(path, index=False, float_format="%.12g")


def read_map_csv(path, target=None):
    return LikelihoodMap.from_frame(pd.read_csv(path, keep_default_na=True), target)


def write_centroid_csv(results, path):
    data = {
        "target_semitones": [np.nan if r.target is None else r.target.semitones for r in results],
        "beta1_centroid": [r.beta1 for r in results],
        "beta2_centroid": [r.beta2 for r in results],
        "region_cell_count": [r.region_cell_count for r in results],
    }
    pd.DataFrame.from_dict(data).to_csv(path, index=False, float_format="%.12g")
