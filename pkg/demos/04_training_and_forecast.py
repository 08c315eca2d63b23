"""Train both predictors on a small city and forecast one window.

The demand classifier is the greedily pretrained autoencoder stack with a
softmax head; the emission predictor is the three-layer perceptron.  Both
are trained from scratch with seeded minibatch SGD.

Run:  python demos/04_training_and_forecast.py   (about a minute)
"""

import tempfile

import numpy as np

from routecast.emission import load_coefficients
from routecast.extract import ExtractConfig, featurize
from routecast.neural import TrainConfig
from routecast.pipeline import evaluate_accuracy, two_task_forecast
from routecast.synthcity import CityModel, generate

model = CityModel(seed=13, n_routes=6, stations_per_route=16, n_taxis=60,
                  n_days=24, grid_rows=4, grid_cols=4, hours=(8, 12, 18))

with tempfile.TemporaryDirectory() as out:
    city = generate(model, out)
    cfg = ExtractConfig(
        origin_lat=model.origin_lat, origin_lon=model.origin_lon,
        grid_rows=model.grid_rows, grid_cols=model.grid_cols,
        cell_size_km=model.cell_size_km, hours=model.hours, seed=model.seed,
    )
    data = featurize(out, cfg, load_coefficients(city.coefficients_path))

    train_cfg = TrainConfig(learning_rate=0.1, pretrain_lr=0.05, epochs=40,
                            pretrain_epochs=5, batch_size=32, corruption=0.2,
                            rng_seed=1)
    target_start = float(data.route_dataset.window_starts.max())
    target = (target_start, target_start + 3600.0 * model.horizon_hours)
    result = two_task_forecast(data.route_dataset, data.grid_dataset,
                               train_cfg, target, hidden=(60, 60, 60, 60),
                               pnn_hidden=24)

    print("demand classifier test accuracy:",
          round(evaluate_accuracy(result.demand, data.route_dataset, "test"), 3))
    print("\nforecast for the last window:")
    for rid in sorted(result.bundle.demand_class):
        probs = result.bundle.demand_probs[rid]
        print(f"  {rid}: class {result.bundle.demand_class[rid]} "
              f"(p_max {probs.max():.2f})")
    kg = np.array(list(result.bundle.emission_kg.values()))
    print(f"  grid emission: min {kg.min():.2f} kg, max {kg.max():.2f} kg "
          f"over {len(kg)} cells")
