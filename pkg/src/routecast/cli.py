"""Command-line front end: generate, featurize, label-emission, train,
predict, recommend.

Configuration is a single flat ``key=value`` file ('#' starts a comment);
every run is deterministic given the config and inputs, and artifacts are
replaced atomically.  Module errors exit with a single machine-parsable
line ``<error-class>: <detail>`` and code 2 (I/O), 3 (validation) or
4 (training divergence).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .emission import emission_labels_from_mileage, grid_window_mileage, load_coefficients
from .errors import ConfigError, MissingInputError, RoutecastError
from .extract import ExtractConfig, derive_routes, featurize, label_window_set
from .ingest import epoch_to_iso, iso_to_epoch, parse_dataset, to_trajectories
from .neural import TrainConfig, load_network, save_network
from .pipeline import (
    GRID_KIND,
    ROUTE_KIND,
    LabeledDataset,
    TrainedModel,
    cell_id_str,
    forecast_window,
    read_features_csv,
    read_forecast_csv,
    split_dataset,
    train_demand_model,
    train_emission_model,
    write_features_csv,
    write_forecast_csv,
)
from .recommend import demand_scalar, recommend_topk, route_tce, write_recommendation_csv
from .synthcity import CityModel, generate

DEFAULTS: dict[str, str] = {
    "seed": "42",
    "data_dir": "data",
    "out_dir": "out",
    "origin_lat": "22.20",
    "origin_lon": "113.20",
    "grid_rows": "8",
    "grid_cols": "8",
    "cell_size_km": "2.0",
    "routes": "20",
    "stations_per_route": "20",
    "taxis": "200",
    "days": "106",
    "start_day": "2015-07-01",
    "hours": "8,11,15,19",
    "span_hours": "1",
    "horizon_hours": "1",
    "region_side_km": "0.5",
    "regions_per_route": "15",
    "demand_scale": "0.45",
    "trips_per_taxi_day": "8.0",
    "bin_edges": "0,60,120,180,240,360,480,720",
    "split": "82,10,14",
    "hidden_layers": "4",
    "hidden_width": "100",
    "pnn_hidden": "40",
    "pretrain_epochs": "10",
    "finetune_epochs": "40",
    "pnn_epochs": "40",
    "pretrain_lr": "0.1",
    "finetune_lr": "0.05",
    "pnn_lr": "0.05",
    "batch_size": "32",
    "corruption": "0.2",
    "k": "5",
    "demand_scalar": "midpoint",
}


def parse_config(path: str | None) -> dict[str, str]:
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise MissingInputError(f"config file {path} not found")
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            cfg[key] = value
    return cfg


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip() != "")


def _split_fractions(cfg) -> tuple[float, float, float]:
    parts = [float(v) for v in cfg["split"].split(",")]
    if len(parts) != 3 or sum(parts) <= 0:
        raise ConfigError(f"split must list three non-negative weights: {cfg['split']}")
    total = sum(parts)
    return tuple(p / total for p in parts)


def city_model(cfg) -> CityModel:
    return CityModel(
        seed=int(cfg["seed"]),
        origin_lat=float(cfg["origin_lat"]),
        origin_lon=float(cfg["origin_lon"]),
        grid_rows=int(cfg["grid_rows"]),
        grid_cols=int(cfg["grid_cols"]),
        cell_size_km=float(cfg["cell_size_km"]),
        n_routes=int(cfg["routes"]),
        stations_per_route=int(cfg["stations_per_route"]),
        n_taxis=int(cfg["taxis"]),
        n_days=int(cfg["days"]),
        start_day=cfg["start_day"],
        hours=_int_tuple(cfg["hours"]),
        span_hours=int(cfg["span_hours"]),
        horizon_hours=int(cfg["horizon_hours"]),
        region_side_km=float(cfg["region_side_km"]),
        regions_per_route=int(cfg["regions_per_route"]),
        demand_scale=float(cfg["demand_scale"]),
        trips_per_taxi_day=float(cfg["trips_per_taxi_day"]),
    )


def extract_config(cfg) -> ExtractConfig:
    return ExtractConfig(
        origin_lat=float(cfg["origin_lat"]),
        origin_lon=float(cfg["origin_lon"]),
        grid_rows=int(cfg["grid_rows"]),
        grid_cols=int(cfg["grid_cols"]),
        cell_size_km=float(cfg["cell_size_km"]),
        hours=_int_tuple(cfg["hours"]),
        span_hours=int(cfg["span_hours"]),
        horizon_hours=int(cfg["horizon_hours"]),
        region_side_km=float(cfg["region_side_km"]),
        regions_per_route=int(cfg["regions_per_route"]),
        seed=int(cfg["seed"]),
        split_fractions=_split_fractions(cfg),
        bin_edges=_int_tuple(cfg["bin_edges"]),
    )


def train_config(cfg, for_pnn: bool = False) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(cfg["pnn_lr" if for_pnn else "finetune_lr"]),
        pretrain_lr=float(cfg["pretrain_lr"]),
        epochs=int(cfg["pnn_epochs" if for_pnn else "finetune_epochs"]),
        pretrain_epochs=int(cfg["pretrain_epochs"]),
        batch_size=int(cfg["batch_size"]),
        corruption=float(cfg["corruption"]),
        rng_seed=int(cfg["seed"]),
    )


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise MissingInputError(f"{path} not found")
    return path


def _coefficients(cfg):
    return load_coefficients(_require(os.path.join(cfg["data_dir"], "coefficients.csv")))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(cfg) -> int:
    city = generate(city_model(cfg), cfg["data_dir"])
    print(f"generated synthetic city in {city.out_dir}")
    return 0


def cmd_featurize(cfg) -> int:
    result = featurize(cfg["data_dir"], extract_config(cfg), _coefficients(cfg))
    os.makedirs(cfg["out_dir"], exist_ok=True)
    out_path = os.path.join(cfg["out_dir"], "features.csv")
    write_features_csv(out_path, [result.route_dataset, result.grid_dataset])
    cats_path = os.path.join(cfg["out_dir"], "categories.csv")
    with open(cats_path + ".tmp", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "category"])
        for rank, cat in enumerate(result.categories, start=1):
            writer.writerow([rank, cat])
    os.replace(cats_path + ".tmp", cats_path)
    print(f"wrote {out_path} ({len(result.route_dataset)} route rows, "
          f"{len(result.grid_dataset)} grid rows)")
    return 0


def cmd_label_emission(cfg) -> int:
    coeffs = _coefficients(cfg)
    taxi = parse_dataset("taxi", _require(os.path.join(cfg["data_dir"], "taxi.csv")))
    weather = parse_dataset("weather", _require(os.path.join(cfg["data_dir"], "weather.csv")))
    days = sorted({w.date for w in weather.records})
    ex = extract_config(cfg)
    windows = label_window_set(days, ex.hours, ex.horizon_hours)
    grid = ex.grid()
    mileage = grid_window_mileage(to_trajectories(taxi.records), grid, windows)
    labels = emission_labels_from_mileage(mileage, coeffs)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    out_path = os.path.join(cfg["out_dir"], "emissions.csv")
    with open(out_path + ".tmp", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_id", "window_start", "window_end",
                         "n_vehicles", "total_km", "kg_co2"])
        for cid in range(grid.rows * grid.cols):
            cell = (cid // grid.cols, cid % grid.cols)
            for w in range(len(windows)):
                start, end = windows.window(w)
                writer.writerow([
                    cell_id_str(cell), epoch_to_iso(start), epoch_to_iso(end),
                    int(mileage.n_vehicles[cid, w]),
                    repr(float(mileage.total_km[cid, w])),
                    repr(float(labels[cid, w])),
                ])
    os.replace(out_path + ".tmp", out_path)
    print(f"wrote {out_path}")
    return 0


def _load_datasets(cfg) -> dict[str, LabeledDataset]:
    feats_path = _require(os.path.join(cfg["out_dir"], "features.csv"))
    datasets = read_features_csv(feats_path)
    for kind in (ROUTE_KIND, GRID_KIND):
        if kind not in datasets:
            raise ConfigError(f"{feats_path} has no {kind} rows")
        split_dataset(datasets[kind], _split_fractions(cfg))
    return datasets


def cmd_train(cfg) -> int:
    datasets = _load_datasets(cfg)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    hidden = tuple([int(cfg["hidden_width"])] * int(cfg["hidden_layers"]))
    demand = train_demand_model(datasets[ROUTE_KIND], train_config(cfg), hidden=hidden)
    emission = train_emission_model(datasets[GRID_KIND], train_config(cfg, for_pnn=True),
                                    hidden=int(cfg["pnn_hidden"]))
    save_network(os.path.join(cfg["out_dir"], "sdae.ckpt"), demand.net, demand.scaler)
    save_network(os.path.join(cfg["out_dir"], "pnn.ckpt"), emission.net, emission.scaler)
    _write_traces(os.path.join(cfg["out_dir"], "traces.csv"), demand, emission)
    val_acc = demand.trace.val_accuracy[demand.trace.best_epoch - 1] \
        if demand.trace.val_accuracy else float("nan")
    print(f"trained demand model (best epoch {demand.trace.best_epoch}, "
          f"val accuracy {val_acc:.3f}) and emission model "
          f"(best epoch {emission.trace.best_epoch})")
    return 0


def _write_traces(path, demand: TrainedModel, emission: TrainedModel) -> None:
    with open(path + ".tmp", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "phase", "epoch", "loss", "val_loss", "val_accuracy"])
        for layer_idx, trace in enumerate(demand.pretrain_traces, start=1):
            for epoch, loss in enumerate(trace, start=1):
                writer.writerow(["sdae", f"pretrain_layer{layer_idx}", epoch,
                                 repr(loss), "", ""])
        for epoch in range(len(demand.trace.train_loss)):
            writer.writerow([
                "sdae", "finetune", epoch + 1, repr(demand.trace.train_loss[epoch]),
                repr(demand.trace.val_loss[epoch]) if demand.trace.val_loss else "",
                repr(demand.trace.val_accuracy[epoch]) if demand.trace.val_accuracy else "",
            ])
        for epoch in range(len(emission.trace.train_loss)):
            writer.writerow([
                "pnn", "train", epoch + 1, repr(emission.trace.train_loss[epoch]),
                repr(emission.trace.val_loss[epoch]) if emission.trace.val_loss else "",
                "",
            ])
    os.replace(path + ".tmp", path)


def cmd_predict(cfg, window_iso: str | None = None) -> int:
    datasets = _load_datasets(cfg)
    route_ds, grid_ds = datasets[ROUTE_KIND], datasets[GRID_KIND]
    demand_net, demand_scaler = load_network(
        _require(os.path.join(cfg["out_dir"], "sdae.ckpt")))
    pnn_net, pnn_scaler = load_network(
        _require(os.path.join(cfg["out_dir"], "pnn.ckpt")))
    if window_iso is not None:
        start = float(iso_to_epoch(window_iso))
    else:
        start = float(min(route_ds.window_starts.max(), grid_ds.window_starts.max()))
    ends = route_ds.window_ends[route_ds.window_starts == start]
    if len(ends) == 0:
        raise ConfigError(f"no feature rows at window {epoch_to_iso(start)}")
    target = (start, float(ends[0]))
    demand = TrainedModel(net=demand_net, scaler=demand_scaler, trace=None)
    emission = TrainedModel(net=pnn_net, scaler=pnn_scaler, trace=None)
    bundle = forecast_window(demand, emission, route_ds, grid_ds, target)
    out_path = os.path.join(cfg["out_dir"], "forecast.csv")
    write_forecast_csv(out_path, bundle)
    print(f"wrote {out_path} for window starting {epoch_to_iso(start)}")
    return 0


def cmd_recommend(cfg) -> int:
    bundle = read_forecast_csv(_require(os.path.join(cfg["out_dir"], "forecast.csv")))
    bus = parse_dataset("bus", _require(os.path.join(cfg["data_dir"], "bus.csv")))
    ex = extract_config(cfg)
    routes = derive_routes(bus.records, seed=ex.seed,
                           regions_per_route=ex.regions_per_route,
                           region_side_km=ex.region_side_km)
    grid = ex.grid()
    mode = cfg["demand_scalar"]
    mu = {}
    theta = {}
    for route in routes:
        if route.route_id not in bundle.demand_class:
            raise ConfigError(f"forecast has no demand row for route {route.route_id}")
        mu[route.route_id] = demand_scalar(
            bundle.demand_class[route.route_id],
            probs=bundle.demand_probs.get(route.route_id),
            edges=ex.bin_edges, mode=mode,
        )
        theta[route.route_id] = route_tce(route, bundle.emission_kg, grid)
    result = recommend_topk(mu, theta, k=int(cfg["k"]))
    out_path = os.path.join(cfg["out_dir"], "recommendation.csv")
    write_recommendation_csv(out_path, result)
    if result.mu_degenerate or result.theta_degenerate:
        which = [name for name, flag in (("demand", result.mu_degenerate),
                                         ("emission", result.theta_degenerate)) if flag]
        print(f"warning: degenerate normalization range for {', '.join(which)}")
    print(f"wrote {out_path} ({len(result.scores)} routes)")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routecast",
        description="Electric-bus route planning: synthetic city, features, "
                    "two-task forecasting, top-k recommendation.",
    )
    parser.add_argument("--config", metavar="PATH", help="flat key=value config file")
    parser.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    parser.add_argument("--k", type=int, metavar="N", help="override the recommendation size")
    parser.add_argument("--horizon-hours", type=int, metavar="N",
                        help="override the forecast horizon")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="write the synthetic-city dataset files")
    sub.add_parser("featurize", help="extract features.csv from the dataset files")
    sub.add_parser("label-emission", help="write per-cell emission labels")
    sub.add_parser("train", help="train both predictors, saving checkpoints")
    predict = sub.add_parser("predict", help="write forecast.csv from checkpoints")
    predict.add_argument("--window", metavar="ISO",
                         help="target window start (default: latest available)")
    sub.add_parser("recommend", help="write recommendation.csv from forecast.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg["seed"] = str(args.seed)
        if args.k is not None:
            cfg["k"] = str(args.k)
        if args.horizon_hours is not None:
            cfg["horizon_hours"] = str(args.horizon_hours)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "featurize":
            return cmd_featurize(cfg)
        if args.command == "label-emission":
            return cmd_label_emission(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, window_iso=args.window)
        if args.command == "recommend":
            return cmd_recommend(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except RoutecastError as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
