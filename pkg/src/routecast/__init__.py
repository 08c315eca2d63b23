"""routecast: electric-bus route planning from urban mobility data.

Spatial primitives and feature extraction (:mod:`routecast.geo`,
:mod:`routecast.features`), top-down emission accounting
(:mod:`routecast.emission`), from-scratch neural predictors
(:mod:`routecast.neural`), the end-to-end two-task pipeline
(:mod:`routecast.pipeline`), greedy top-k recommendation
(:mod:`routecast.recommend`), and a seeded synthetic-city generator
(:mod:`routecast.synthcity`).
"""

from .geo import (
    AffectingRegion,
    BusRoute,
    GeoPoint,
    GridIndex,
    grids_crossed,
    haversine_km,
    locate_cell,
    make_route,
    partition_city,
    region_contains,
)
from .neural import TrainConfig
from .pipeline import ForecastBundle, LabeledDataset, split_dataset, two_task_forecast
from .recommend import recommend_topk
from .synthcity import CityModel, generate

__all__ = [
    "AffectingRegion",
    "BusRoute",
    "CityModel",
    "ForecastBundle",
    "GeoPoint",
    "GridIndex",
    "LabeledDataset",
    "TrainConfig",
    "generate",
    "grids_crossed",
    "haversine_km",
    "locate_cell",
    "make_route",
    "partition_city",
    "recommend_topk",
    "region_contains",
    "split_dataset",
    "two_task_forecast",
]

__version__ = "0.1.0"
