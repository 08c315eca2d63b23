"""Shared fixtures: the default synthetic city is generated and featurized
once per session because several acceptance criteria train on it."""

import pytest

from routecast.emission import load_coefficients
from routecast.extract import ExtractConfig, featurize
from routecast.synthcity import CityModel, generate


@pytest.fixture(scope="session")
def default_city(tmp_path_factory):
    """The full 106-day default city with fixed seed."""
    out = tmp_path_factory.mktemp("default_city")
    model = CityModel(seed=42)
    return generate(model, out)


@pytest.fixture(scope="session")
def default_extraction(default_city):
    """Featurized route/grid datasets of the default city."""
    model = default_city.model
    cfg = ExtractConfig(
        origin_lat=model.origin_lat,
        origin_lon=model.origin_lon,
        grid_rows=model.grid_rows,
        grid_cols=model.grid_cols,
        cell_size_km=model.cell_size_km,
        hours=model.hours,
        span_hours=model.span_hours,
        horizon_hours=model.horizon_hours,
        region_side_km=model.region_side_km,
        regions_per_route=model.regions_per_route,
        seed=model.seed,
    )
    coeffs = load_coefficients(default_city.coefficients_path)
    return featurize(default_city.out_dir, cfg, coeffs)
