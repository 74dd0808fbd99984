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
Orbit diagrams and regime maps over a sweep of 1/alpha.
"""

# =============================================================================
# Import modules
# =============================================================================
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ipfsim import core

logger = logging.getLogger(__name__)

DIVERGED = "DIVERGED"


# =============================================================================
# Types
# =============================================================================
@dataclass(eq=False)
class OrbitDiagram:
    """Tail samples per swept 1/alpha value.
    inv_alpha: (n,) strictly increasing 1/alpha values
    alpha: (n,) the corresponding alpha values
    points: per column an array of `tail` samples, None for divergent runs
    betas: fixed reflection strengths
    seeding: {"g0": ...} or {"seeds": (g, g-, ...)}
    """

    inv_alpha: np.ndarray
    alpha: np.ndarray
    points: list
    betas: tuple
    seeding: dict
    tail: int

    def distinct_counts(self, tol=1e-6):
        """Distinct tail values per column, None for divergent columns."""
        return [None if p is None else core.count_distinct(p, tol) for p in self.points]

    def to_frame(self):
        """Long-format table with columns inv_alpha, sample_index, g."""
        data = {"inv_alpha": [], "sample_index": [], "g": []}
        for inv, column in zip(self.inv_alpha, self.points):
            if column is None:
                data["inv_alpha"].append(inv)
                data["sample_index"].append(DIVERGED)
                data["g"].append(np.nan)
                continue
            data["inv_alpha"].extend([inv] * len(column))
            data["sample_index"].extend(range(len(column)))
            data["g"].extend(column)
        return pd.DataFrame.from_dict(data)


def _sweep_axis(inv_alpha_range, n_alpha):
    lo, hi = (float(v) for v in inv_alpha_range)
    if not (0 < lo < hi):
        raise core.ParameterError(f"1/alpha range must satisfy 0 < lo < hi, got [{lo}, {hi}]")
    if int(n_alpha) < 2:
        raise core.ParameterError(f"n_alpha must be >= 2, got {n_alpha}")
    inv_alpha = np.linspace(lo, hi, int(n_alpha))
    return inv_alpha, 1.0 / inv_alpha


def _run_sweep(betas, alpha, n_steps, tail, g0, seeds):
    if int(tail) < 1 or int(tail) > int(n_steps):
        raise core.ParameterError(f"tail must lie in [1, n_steps], got tail={tail}, n_steps={n_steps}")
    if seeds is not None:
        params = core.IpfParams.with_history(1.0, betas, seeds)
        return core.iterate_batch(alpha, betas, int(n_steps), keep=int(tail), history=params.history)
    if not g0 > 0:
        raise core.ParameterError(f"g0 must be positive, got {g0}")
    return core.iterate_batch(alpha, betas, int(n_steps), keep=int(tail), g0=g0)


# =============================================================================
# Functions
# =============================================================================
def orbit_diagram(betas, inv_alpha_range, n_alpha, n_steps=2500, tail=250, g0=0.5, seeds=None):
    """Computes an orbit (bifurcation) diagram.
    Input:
        betas: reflection strengths, fixed along the sweep
        inv_alpha_range: (lo, hi) of the swept 1/alpha, 0 < lo < hi
        n_alpha: number of evenly spaced 1/alpha values, >= 2
        n_steps: iteration steps per column
        tail: trailing states kept per column
        g0: seed state, history derived with the simple IPF
        seeds: explicit seeds newest first (g, g-, ...), overrides g0
    Output:
        OrbitDiagram
    """
    betas = tuple(float(b) for b in betas)
    inv_alpha, alpha = _sweep_axis(inv_alpha_range, n_alpha)
    batch = _run_sweep(betas, alpha, n_steps, tail, g0, seeds)
    points = [
        None if batch.diverged[j] else batch.states[:, j].copy() for j in range(alpha.size)
    ]
    seeding = {"seeds": tuple(seeds)} if seeds is not None else {"g0": float(g0)}
    logger.info(
        "orbit diagram: betas=%s, %d columns, %d divergent",
        betas, alpha.size, int(batch.diverged.sum()),
    )
    return OrbitDiagram(inv_alpha, alpha, points, betas, seeding, int(tail))


def regime_map(betas, inv_alpha_range, n_alpha, protocol=None, seeds=None):
    """Classifies the regime of every column of a 1/alpha sweep.
    Input:
        betas: reflection strengths
        inv_alpha_range, n_alpha: sweep as in orbit_diagram
        protocol: dict as returned by core.DefaultProtocol()
        seeds: explicit seeds newest first, overrides protocol["g0"]
    Output:
        list of (1/alpha, RegimeReport)
    """
    parP = core.DefaultProtocol()
    parP.update(protocol or {})
    betas = tuple(float(b) for b in betas)
    inv_alpha, alpha = _sweep_axis(inv_alpha_range, n_alpha)
    batch = _run_sweep(betas, alpha, parP["n_steps"], parP["tail"], parP["g0"], seeds)
    reports = core.classify_tails(batch.states, batch.diverged, parP["tol"], parP["p_max"])
    return list(zip(inv_alpha.tolist(), reports))


# =============================================================================
# File output
# =============================================================================
def write_orbit_csv(diagram, path):
    """Writes `inv_alpha,sample_index,g`; divergent columns become a single
    `inv_alpha,DIVERGED,` row."""
    diagram.to_frame().to_csv(path, index=False, float_format="%.12g")


def read_orbit_csv(path):
    """Reads a CSV written by write_orbit_csv back into an OrbitDiagram
    (betas and seeding are not stored in the file)."""
    df = pd.read_csv(path, dtype={"sample_index": str})
    inv_alpha, points = [], []
    for inv, group in df.groupby("inv_alpha", sort=True):
        inv_alpha.append(float(inv))
        if (group["sample_index"] == DIVERGED).any():
            points.append(None)
        else:
            points.append(group["g"].to_numpy(dtype=float))
    inv_alpha = np.asarray(inv_alpha)
    tail = max((len(p) for p in points if p is not None), default=0)
    return OrbitDiagram(inv_alpha, 1.0 / inv_alpha, points, (), {}, tail)


def write_regime_csv(regimes, path):
    """Writes `inv_alpha,alpha,kind,period,limit_values`, limit values
    joined by semicolons."""
    data = {"inv_alpha": [], "alpha": [], "kind": [], "period": [], "limit_values": []}
    for inv, report in regimes:
        data["inv_alpha"].append(inv)
        data["alpha"].append(1.0 / inv)
        data["kind"].append(report.kind)
        data["period"].append("" if report.period is None else report.period)
        data["limit_values"].append(";".join(f"{v:.12g}" for v in report.limit_values))
    pd.DataFrame.from_dict(data).to_csv(path, index=False, float_format="%.12g")
