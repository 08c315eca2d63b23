"""Extract route and grid feature vectors from a generated city.

Shows the POI-category selection, the 217-entry route vectors, the
35-entry grid vectors, and the demand/emission labels.

Run:  python demos/03_features_and_labels.py
"""

import tempfile

import numpy as np

from routecast.emission import load_coefficients
from routecast.extract import ExtractConfig, featurize
from routecast.synthcity import CityModel, generate

model = CityModel(seed=11, n_routes=5, stations_per_route=16, n_taxis=40,
                  n_days=12, grid_rows=4, grid_cols=4, hours=(8, 12, 18))

with tempfile.TemporaryDirectory() as out:
    city = generate(model, out)
    cfg = ExtractConfig(
        origin_lat=model.origin_lat, origin_lon=model.origin_lon,
        grid_rows=model.grid_rows, grid_cols=model.grid_cols,
        cell_size_km=model.cell_size_km, hours=model.hours, seed=model.seed,
    )
    result = featurize(out, cfg, load_coefficients(city.coefficients_path))

    print("selected POI categories (by demand correlation):", result.categories)
    route_ds = result.route_dataset
    grid_ds = result.grid_dataset
    print(f"route dataset: {route_ds.X.shape[0]} samples x {route_ds.X.shape[1]} features")
    print(f"grid dataset:  {grid_ds.X.shape[0]} samples x {grid_ds.X.shape[1]} features")

    i = 0
    vec = route_ds.X[i]
    print(f"\nsample route vector ({route_ds.scope_ids[i]}):")
    print("  first region block [N, E, D, f_in, f_out, poi x8]:",
          np.round(vec[:13], 2).tolist())
    print("  meteo block [t_high, t_low, condition one-hot...]:",
          np.round(vec[-22:-16], 1).tolist(), "...")
    print("  demand class:", int(route_ds.y[i]))

    print("\nper-class route label counts:",
          np.bincount(route_ds.y.astype(int), minlength=8).tolist())
    print("grid emission labels (kg): min %.2f mean %.2f max %.2f"
          % (grid_ds.y.min(), grid_ds.y.mean(), grid_ds.y.max()))
