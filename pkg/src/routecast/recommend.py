"""Greedy top-k route recommendation from demand and emission forecasts.

Each route's demand value and summed per-cell emission are min-max
normalized over the route universe and added; the k routes with the largest
sums are recommended, with ties broken by route id for determinism.  Because
min-max normalization absorbs positive affine transforms exactly, the
selection is invariant to uniform rescaling of either input.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CoverageError, InferenceError, InvalidInputError
from .features import DEFAULT_BIN_EDGES
from .geo import BusRoute, GridIndex, grids_crossed
from .pipeline import cell_id_str

RECOMMENDATION_HEADER = ["rank", "route_id", "mu", "theta", "mu_norm", "theta_norm", "score"]


@dataclass(frozen=True)
class RouteScore:
    """One route's raw and normalized signals plus their sum."""

    route_id: str
    mu: float
    theta: float
    mu_norm: float
    theta_norm: float

    @property
    def score(self) -> float:
        return self.mu_norm + self.theta_norm


def route_tce(route: BusRoute, emission_kg: dict[str, float], index: GridIndex) -> float:
    """Summed predicted emission over every grid cell the route crosses.

    Raises:
        CoverageError: A crossed cell has no prediction.
    """
    total = 0.0
    for cell in sorted(grids_crossed(route, index)):
        key = cell_id_str(cell)
        if key not in emission_kg:
            raise CoverageError(f"route {route.route_id} crosses unpredicted cell {key}")
        total += emission_kg[key]
    return total


def minmax_normalize(values) -> tuple[np.ndarray, bool]:
    """Map values to [0, 1] by (v - min)/(max - min).

    A degenerate range (every value equal) maps everything to 0 and is
    flagged so callers can surface that the signal carries no information.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InvalidInputError("cannot normalize an empty value set")
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros_like(values), True
    return (values - lo) / (hi - lo), False


def class_midpoints(edges=DEFAULT_BIN_EDGES) -> np.ndarray:
    """Scalar representative of each demand class: the bin midpoint.

    The open-ended top bin uses its lower edge plus half the width of the
    bin below it.
    """
    edges = np.asarray(edges, dtype=np.float64)
    mids = (edges[:-1] + edges[1:]) / 2.0
    top = edges[-1] + (edges[-1] - edges[-2]) / 2.0
    return np.append(mids, top)


def demand_scalar(cls: int, probs=None, edges=DEFAULT_BIN_EDGES, mode: str = "midpoint") -> float:
    """Scalar demand for normalization, from a predicted class.

    ``midpoint`` takes the predicted class's bin midpoint; ``expected``
    averages the midpoints under the class probabilities.
    """
    mids = class_midpoints(edges)
    if mode == "midpoint":
        if not (0 <= cls < len(mids)):
            raise InvalidInputError(f"class {cls} out of range")
        return float(mids[cls])
    if mode == "expected":
        if probs is None:
            raise InvalidInputError("expected-value mode needs class probabilities")
        probs = np.asarray(probs, dtype=np.float64)
        if len(probs) != len(mids):
            raise InvalidInputError("probability vector length mismatch")
        return float(probs @ mids)
    raise ConfigError(f"unknown demand scalar mode {mode!r}")


@dataclass
class RecommendResult:
    """Ranked route scores plus degenerate-normalization flags."""

    scores: list[RouteScore]
    mu_degenerate: bool
    theta_degenerate: bool


def recommend_topk(mu_by_route: dict[str, float], theta_by_route: dict[str, float],
                   k: int) -> RecommendResult:
    """The k routes maximizing normalized demand plus normalized emission.

    Both inputs must cover the same route universe.  Routes are ranked by
    descending score with ties broken by ascending route id; fewer than k
    routes returns them all.

    Raises:
        InferenceError: Empty universe or mismatched route sets.
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if not mu_by_route:
        raise InferenceError("empty route universe")
    if set(mu_by_route) != set(theta_by_route):
        raise InferenceError("demand and emission route universes differ")
    route_ids = sorted(mu_by_route)
    mu = np.array([mu_by_route[r] for r in route_ids], dtype=np.float64)
    theta = np.array([theta_by_route[r] for r in route_ids], dtype=np.float64)
    mu_norm, mu_deg = minmax_normalize(mu)
    theta_norm, theta_deg = minmax_normalize(theta)
    scores = [
        RouteScore(route_id=r, mu=float(mu[i]), theta=float(theta[i]),
                   mu_norm=float(mu_norm[i]), theta_norm=float(theta_norm[i]))
        for i, r in enumerate(route_ids)
    ]
    scores.sort(key=lambda s: (-s.score, s.route_id))
    return RecommendResult(scores=scores[:min(k, len(scores))],
                           mu_degenerate=mu_deg, theta_degenerate=theta_deg)


def write_recommendation_csv(path, result: RecommendResult) -> None:
    with open(f"{path}.tmp", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECOMMENDATION_HEADER)
        for rank, s in enumerate(result.scores, start=1):
            writer.writerow([rank, s.route_id, repr(s.mu), repr(s.theta),
                             repr(s.mu_norm), repr(s.theta_norm), repr(s.score)])
    os.replace(f"{path}.tmp", path)
