"""End-to-end learning pipeline: splits, standardization, two-task forecast.

Datasets are split by calendar day into time blocks (earliest days train,
then validation, then test) so no future information leaks backwards; the
default 82:10:14 day ratio is scaled to the available days by largest
remainder.  Feature standardization is fitted on the training split only.

The two-task step trains the stacked denoising classifier on route demand
and the three-layer perceptron on grid emission, then predicts both for
every route and grid cell at a single target window.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, InferenceError, SplitError
from .features import N_DEMAND_CLASSES
from .ingest import epoch_day, epoch_to_iso, iso_to_epoch
from .neural import (
    FeedForwardNet,
    FitTrace,
    TrainConfig,
    build_pnn,
    build_sdae,
    classify,
    fine_tune,
    fit_classifier,
    init_layer,
    pnn3_predict,
    pnn3_train,
    sdae_pretrain,
)

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_SPLIT_RATIO = (82, 10, 14)

ROUTE_KIND = "route"
GRID_KIND = "grid"


def cell_id_str(cell: tuple[int, int]) -> str:
    return f"{cell[0]}:{cell[1]}"


def parse_cell_id(text: str) -> tuple[int, int]:
    row, col = text.split(":")
    return int(row), int(col)


# ---------------------------------------------------------------------------
# labeled datasets
# ---------------------------------------------------------------------------

@dataclass
class LabeledDataset:
    """Columnar samples of one scope kind with optional split tags."""

    kind: str
    scope_ids: np.ndarray     # (n,) str
    window_starts: np.ndarray  # (n,) float epoch seconds
    window_ends: np.ndarray    # (n,) float
    X: np.ndarray              # (n, d)
    y: np.ndarray              # (n,) class index or kg
    days: np.ndarray = None    # (n,) "YYYY-MM-DD", derived when omitted
    split: np.ndarray = None   # (n,) tag from SPLIT_NAMES once assigned

    def __post_init__(self) -> None:
        if self.days is None:
            self.days = np.array([epoch_day(t) for t in self.window_starts])

    def __len__(self) -> int:
        return len(self.scope_ids)

    def mask(self, tag: str) -> np.ndarray:
        if self.split is None:
            raise SplitError("dataset has no split tags yet")
        return self.split == tag

    def subset(self, tag: str):
        m = self.mask(tag)
        return self.X[m], self.y[m]


def split_dataset(dataset: LabeledDataset, fractions=None, seed: int | None = None) -> LabeledDataset:
    """Assign train/val/test tags by contiguous day blocks.

    Days are sorted; the earliest go to train, then validation, then test.
    Day counts follow the fractions by largest remainder.  A zero fraction
    explicitly requests an empty split; a positive fraction that would get
    zero days is an error.

    The ``seed`` parameter is accepted for interface stability but unused:
    time-blocked splitting is fully deterministic.
    """
    if fractions is None:
        total = sum(DEFAULT_SPLIT_RATIO)
        fractions = tuple(r / total for r in DEFAULT_SPLIT_RATIO)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise SplitError(f"need 3 fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must be non-negative and sum to 1: {fractions}")
    days = sorted(set(dataset.days.tolist()))
    n = len(days)
    counts = [int(np.floor(f * n)) for f in fractions]
    remainders = [f * n - c for f, c in zip(fractions, counts)]
    for _ in range(n - sum(counts)):
        i = int(np.argmax(remainders))
        counts[i] += 1
        remainders[i] = -1.0
    for name, frac, count in zip(SPLIT_NAMES, fractions, counts):
        if frac > 0 and count == 0:
            raise SplitError(
                f"{n} days are too few for a non-empty {name} split at fraction {frac:.3f}"
            )
    day_tag: dict[str, str] = {}
    cursor = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for day in days[cursor:cursor + count]:
            day_tag[day] = name
        cursor += count
    dataset.split = np.array([day_tag[d] for d in dataset.days])
    return dataset


def train_day_set(days, fractions=None) -> set[str]:
    """The train-split day block for a day collection (leakage guard)."""
    probe = LabeledDataset(
        kind="probe",
        scope_ids=np.array([""] * len(list(days))),
        window_starts=np.zeros(len(list(days))),
        window_ends=np.zeros(len(list(days))),
        X=np.zeros((len(list(days)), 1)),
        y=np.zeros(len(list(days))),
        days=np.array(sorted(days)),
    )
    split_dataset(probe, fractions)
    return set(probe.days[probe.split == "train"].tolist())


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------

def fit_scaler(X: np.ndarray):
    """Per-dimension scaling of the training features onto [0, 1].

    Min-max rather than z-score: the denoising autoencoders reconstruct
    their inputs through a sigmoid, whose (0, 1) range cannot express
    unbounded z-scored targets.  Constant dimensions pass through with unit
    scale (they map to 0).  Returns ``(offset, scale)`` applied as
    ``(x - offset) / scale``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    scale = np.where(span > 0.0, span, 1.0)
    return lo, scale


def apply_scaler(scaler, X: np.ndarray) -> np.ndarray:
    mean, scale = scaler
    return (np.asarray(X, dtype=np.float64) - mean) / scale


# ---------------------------------------------------------------------------
# model training wrappers
# ---------------------------------------------------------------------------

@dataclass
class TrainedModel:
    """A fitted network with its input scaler and training history."""

    net: FeedForwardNet
    scaler: tuple[np.ndarray, np.ndarray]
    trace: FitTrace
    pretrain_traces: list[list[float]] = field(default_factory=list)


def train_demand_model(
    dataset: LabeledDataset,
    cfg: TrainConfig,
    hidden: tuple[int, ...] = (100, 100, 100, 100),
    pretrain: bool = True,
) -> TrainedModel:
    """Pretrain and fine-tune the stacked demand classifier on a split dataset."""
    X_train, y_train = dataset.subset("train")
    X_val, y_val = dataset.subset("val")
    scaler = fit_scaler(X_train)
    Xt = apply_scaler(scaler, X_train)
    Xv = apply_scaler(scaler, X_val) if len(X_val) else X_val
    model = build_sdae(Xt.shape[1], hidden=hidden, n_classes=N_DEMAND_CLASSES,
                       corruption=cfg.corruption, seed=cfg.rng_seed)
    traces = []
    if pretrain and cfg.pretrain_epochs > 0:
        traces = sdae_pretrain(model, Xt, cfg)
    net, trace = fine_tune(model, Xt, y_train.astype(np.int64), Xv,
                           y_val.astype(np.int64), cfg)
    return TrainedModel(net=net, scaler=scaler, trace=trace, pretrain_traces=traces)


def train_softmax_baseline(dataset: LabeledDataset, cfg: TrainConfig) -> TrainedModel:
    """A bare softmax classifier on the same standardized features."""
    X_train, y_train = dataset.subset("train")
    X_val, y_val = dataset.subset("val")
    scaler = fit_scaler(X_train)
    Xt = apply_scaler(scaler, X_train)
    Xv = apply_scaler(scaler, X_val) if len(X_val) else X_val
    rng = np.random.default_rng(cfg.rng_seed)
    net = FeedForwardNet(layers=[init_layer(Xt.shape[1], N_DEMAND_CLASSES, "softmax", rng)])
    trace = fit_classifier(net, Xt, y_train.astype(np.int64), Xv,
                           y_val.astype(np.int64), cfg)
    return TrainedModel(net=net, scaler=scaler, trace=trace)


def train_emission_model(
    dataset: LabeledDataset, cfg: TrainConfig, hidden: int = 40
) -> TrainedModel:
    """Fit the three-layer emission regressor on a split dataset.

    Targets are standardized during SGD for stable step sizes; the inverse
    transform is folded into the identity output layer afterwards, so the
    returned network predicts kg directly.
    """
    X_train, y_train = dataset.subset("train")
    X_val, y_val = dataset.subset("val")
    scaler = fit_scaler(X_train)
    Xt = apply_scaler(scaler, X_train)
    Xv = apply_scaler(scaler, X_val) if len(X_val) else X_val
    y_mean = float(np.mean(y_train))
    y_scale = float(np.std(y_train)) or 1.0
    net = build_pnn(Xt.shape[1], hidden=hidden, seed=cfg.rng_seed)
    trace = pnn3_train(net, Xt, (y_train - y_mean) / y_scale,
                       Xv, (y_val - y_mean) / y_scale if len(X_val) else y_val, cfg)
    out = net.layers[-1]
    out.W *= y_scale
    out.b = out.b * y_scale + y_mean
    return TrainedModel(net=net, scaler=scaler, trace=trace)


def evaluate_accuracy(model: TrainedModel, dataset: LabeledDataset, tag: str) -> float:
    X, y = dataset.subset(tag)
    _, pred = classify(model.net, apply_scaler(model.scaler, X))
    return float(np.mean(pred == y.astype(np.int64)))


# ---------------------------------------------------------------------------
# two-task forecasting
# ---------------------------------------------------------------------------

@dataclass
class ForecastBundle:
    """Per-route demand predictions and per-cell emission predictions."""

    window: tuple[float, float]
    demand_class: dict[str, int]
    demand_probs: dict[str, np.ndarray]
    emission_kg: dict[str, float]


@dataclass
class TwoTaskResult:
    bundle: ForecastBundle
    demand: TrainedModel
    emission: TrainedModel


def two_task_forecast(
    route_dataset: LabeledDataset,
    grid_dataset: LabeledDataset,
    cfg: TrainConfig,
    target_window: tuple[float, float],
    hidden: tuple[int, ...] = (100, 100, 100, 100),
    pnn_hidden: int = 40,
    split_fractions=None,
) -> TwoTaskResult:
    """Train both predictors and forecast every route and grid cell at one window.

    Datasets without split tags are split with the default day ratio first.
    The inference rows are the dataset rows whose window equals
    ``target_window``; their features were extracted before the window, so
    predicting them is a genuine forecast.

    Raises:
        InferenceError: No rows (or duplicate rows) at the target window.
    """
    if len(route_dataset) == 0 or len(grid_dataset) == 0:
        raise InferenceError("both training datasets must be non-empty")
    for ds in (route_dataset, grid_dataset):
        if ds.split is None:
            split_dataset(ds, split_fractions)
    demand = train_demand_model(route_dataset, cfg, hidden=hidden)
    emission = train_emission_model(grid_dataset, cfg, hidden=pnn_hidden)
    bundle = forecast_window(demand, emission, route_dataset, grid_dataset, target_window)
    return TwoTaskResult(bundle=bundle, demand=demand, emission=emission)


def _target_rows(dataset: LabeledDataset, window) -> np.ndarray:
    m = (dataset.window_starts == float(window[0])) & (dataset.window_ends == float(window[1]))
    idx = np.flatnonzero(m)
    if len(idx) == 0:
        raise InferenceError(
            f"no {dataset.kind} rows at window {epoch_to_iso(window[0])}"
        )
    ids = dataset.scope_ids[idx]
    if len(set(ids.tolist())) != len(ids):
        raise InferenceError(f"duplicate {dataset.kind} rows at the target window")
    return idx


def forecast_window(
    demand: TrainedModel,
    emission: TrainedModel,
    route_dataset: LabeledDataset,
    grid_dataset: LabeledDataset,
    target_window: tuple[float, float],
) -> ForecastBundle:
    """Predict the whole route/grid universe at one window from fitted models."""
    r_idx = _target_rows(route_dataset, target_window)
    g_idx = _target_rows(grid_dataset, target_window)
    P, pred = classify(demand.net, apply_scaler(demand.scaler, route_dataset.X[r_idx]))
    demand_class = {}
    demand_probs = {}
    for row, i in enumerate(r_idx):
        rid = str(route_dataset.scope_ids[i])
        demand_class[rid] = int(pred[row])
        demand_probs[rid] = P[row]
    kg = pnn3_predict(emission.net, apply_scaler(emission.scaler, grid_dataset.X[g_idx]))
    emission_kg = {
        str(grid_dataset.scope_ids[i]): float(kg[row]) for row, i in enumerate(g_idx)
    }
    return ForecastBundle(
        window=(float(target_window[0]), float(target_window[1])),
        demand_class=demand_class,
        demand_probs=demand_probs,
        emission_kg=emission_kg,
    )


# ---------------------------------------------------------------------------
# features.csv / forecast.csv
# ---------------------------------------------------------------------------

def write_features_csv(path, datasets: list[LabeledDataset]) -> None:
    """Serialize datasets as ``scope_kind,scope_id,window_start,window_end,
    f_0..f_{d-1},label`` rows.

    Kinds of different dimensionality share the file; narrower rows leave
    the surplus feature columns empty so the label stays in the last column.
    """
    max_d = max(ds.X.shape[1] for ds in datasets)
    header = ["scope_kind", "scope_id", "window_start", "window_end"]
    header += [f"f_{i}" for i in range(max_d)]
    header += ["label"]
    with open(f"{path}.tmp", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for ds in datasets:
            d = ds.X.shape[1]
            pad = [""] * (max_d - d)
            label_as_int = ds.kind == ROUTE_KIND
            for i in range(len(ds)):
                row = [ds.kind, str(ds.scope_ids[i]),
                       epoch_to_iso(ds.window_starts[i]), epoch_to_iso(ds.window_ends[i])]
                row += [repr(float(v)) for v in ds.X[i]]
                row += pad
                row.append(int(ds.y[i]) if label_as_int else repr(float(ds.y[i])))
                writer.writerow(row)
    import os
    os.replace(f"{path}.tmp", path)


def read_features_csv(path) -> dict[str, LabeledDataset]:
    """Parse a features file back into per-kind datasets."""
    kinds: dict[str, dict[str, list]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:4] != ["scope_kind", "scope_id", "window_start", "window_end"]:
            raise FormatError(f"{path}: not a features file")
        for row in reader:
            if not row:
                continue
            kind = row[0]
            feats = [v for v in row[4:-1] if v != ""]
            bucket = kinds.setdefault(kind, {
                "ids": [], "starts": [], "ends": [], "X": [], "y": []
            })
            bucket["ids"].append(row[1])
            bucket["starts"].append(iso_to_epoch(row[2]))
            bucket["ends"].append(iso_to_epoch(row[3]))
            bucket["X"].append([float(v) for v in feats])
            bucket["y"].append(float(row[-1]))
    out = {}
    for kind, b in kinds.items():
        out[kind] = LabeledDataset(
            kind=kind,
            scope_ids=np.array(b["ids"]),
            window_starts=np.array(b["starts"], dtype=np.float64),
            window_ends=np.array(b["ends"], dtype=np.float64),
            X=np.array(b["X"], dtype=np.float64),
            y=np.array(b["y"], dtype=np.float64),
        )
    return out


def write_forecast_csv(path, bundle: ForecastBundle) -> None:
    """``kind,id,window_start,window_end,value,prob_0..prob_7`` rows;
    probability columns stay blank for grid rows."""
    start = epoch_to_iso(bundle.window[0])
    end = epoch_to_iso(bundle.window[1])
    with open(f"{path}.tmp", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "id", "window_start", "window_end", "value"]
                        + [f"prob_{i}" for i in range(N_DEMAND_CLASSES)])
        for rid in sorted(bundle.demand_class):
            probs = [repr(float(p)) for p in bundle.demand_probs[rid]]
            writer.writerow([ROUTE_KIND, rid, start, end, bundle.demand_class[rid]] + probs)
        for cid in sorted(bundle.emission_kg):
            writer.writerow([GRID_KIND, cid, start, end,
                             repr(float(bundle.emission_kg[cid]))] + [""] * N_DEMAND_CLASSES)
    import os
    os.replace(f"{path}.tmp", path)


def read_forecast_csv(path) -> ForecastBundle:
    demand_class: dict[str, int] = {}
    demand_probs: dict[str, np.ndarray] = {}
    emission_kg: dict[str, float] = {}
    window = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:5] != ["kind", "id", "window_start", "window_end", "value"]:
            raise FormatError(f"{path}: not a forecast file")
        for row in reader:
            if not row:
                continue
            window = (float(iso_to_epoch(row[2])), float(iso_to_epoch(row[3])))
            if row[0] == ROUTE_KIND:
                demand_class[row[1]] = int(row[4])
                demand_probs[row[1]] = np.array([float(v) for v in row[5:5 + N_DEMAND_CLASSES]])
            elif row[0] == GRID_KIND:
                emission_kg[row[1]] = float(row[4])
            else:
                raise FormatError(f"{path}: unknown forecast kind {row[0]!r}")
    if window is None:
        raise FormatError(f"{path}: empty forecast file")
    return ForecastBundle(window=window, demand_class=demand_class,
                          demand_probs=demand_probs, emission_kg=emission_kg)
