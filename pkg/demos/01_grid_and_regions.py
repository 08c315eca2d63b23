"""Spatial primitives: partition a city into cells, test region membership,
and map a bus route onto the cells it crosses.

Run:  python demos/01_grid_and_regions.py
"""

import numpy as np

from routecast.geo import (
    KM_PER_DEG_LAT,
    AffectingRegion,
    GeoPoint,
    grids_crossed,
    km_per_deg_lon,
    locate_cell,
    make_route,
    partition_city,
    region_contains,
)

# A ~16 x 16 km box in 2 km cells.
sw = GeoPoint(22.20, 113.20)
ne = GeoPoint(22.20 + 16.0 / KM_PER_DEG_LAT,
              113.20 + 16.0 / km_per_deg_lon(22.20))
grid = partition_city((sw, ne), cell_size_km=2.0)
print(f"grid: {grid.rows} x {grid.cols} cells of {grid.cell_size_km} km")

center = GeoPoint(22.26, 113.26)
print("center cell:", locate_cell(grid, center))
print("outside point:", locate_cell(grid, GeoPoint(21.0, 113.0)))

# A 0.5 km affecting region around a bus station.
region = AffectingRegion(center=center)
east = GeoPoint(center.lat, center.lon + 0.26 / km_per_deg_lon(center.lat))
print("station inside its own region:", region_contains(region, center))
print("0.26 km east (outside the 0.25 km half-side):", region_contains(region, east))

# A route with 20 stations; 15 affecting regions are sampled per route.
rng = np.random.default_rng(7)
stations = []
lat, lon = 22.22, 113.22
for _ in range(20):
    stations.append(GeoPoint(lat, lon))
    lat += rng.uniform(0.5, 1.0) / KM_PER_DEG_LAT
    lon += rng.uniform(0.2, 1.0) / km_per_deg_lon(22.2)
route = make_route("R01", stations, seed=42)
print(f"route {route.route_id}: {len(route.stations)} stations, "
      f"{len(route.regions)} affecting regions")
cells = sorted(grids_crossed(route, grid))
print(f"cells crossed ({len(cells)}):", cells)
