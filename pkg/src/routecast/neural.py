"""Dense neural machinery built from scratch on numpy.

The demand classifier is a stack of four tied-weight denoising autoencoders
(sigmoid units, decoder weight is exactly the transpose of the encoder
weight) pretrained greedily layer by layer, then topped with a softmax head
and fine-tuned end to end by minibatch SGD on the negative log-likelihood.
The emission predictor is a one-hidden-layer perceptron trained on squared
error with an identity output.

All loss/gradient helpers return the *sum* over the batch and its exact
analytic gradient; SGD steps scale by the batch size.  Everything is
float64 and driven by explicitly seeded generators, so a fixed seed and
dataset reproduce bitwise-identical parameter trajectories.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergenceError, FormatError, ShapeError

ACTIVATION_CODES = {"identity": 0, "sigmoid": 1, "softmax": 2}
_CODE_TO_ACTIVATION = {v: k for k, v in ACTIVATION_CODES.items()}

CHECKPOINT_MAGIC = b"NNCK"
CHECKPOINT_VERSION = 1


def sigmoid(x):
    """Elementwise logistic function, stable for |x| up to ~700."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(z):
    """Row-wise softmax, stabilized by max subtraction (shift-invariant)."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)


def _apply_activation(a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "sigmoid":
        return sigmoid(a)
    if activation == "softmax":
        return softmax(a)
    if activation == "identity":
        return a
    raise ConfigError(f"unknown activation {activation!r}")


@dataclass
class DenseLayer:
    """Affine map plus activation; ``W`` has shape (d_out, d_in)."""

    W: np.ndarray
    b: np.ndarray
    activation: str

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    def affine(self, X: np.ndarray) -> np.ndarray:
        if X.shape[-1] != self.d_in:
            raise ShapeError(f"input width {X.shape[-1]} != layer width {self.d_in}")
        return X @ self.W.T + self.b

    def forward(self, X: np.ndarray) -> np.ndarray:
        return _apply_activation(self.affine(X), self.activation)


def init_layer(d_in: int, d_out: int, activation: str, rng: np.random.Generator) -> DenseLayer:
    """Uniform init in +-sqrt(6/(d_in+d_out)), widened 4x for sigmoid layers.

    The bare fan-based limit is calibrated for tanh units; logistic units
    have a quarter of tanh's slope, and without the 4x correction a
    four-layer stack starts so close to linear that SGD cannot fit even
    separable data.  Biases start at zero.
    """
    limit = np.sqrt(6.0 / (d_in + d_out))
    if activation == "sigmoid":
        limit *= 4.0
    W = rng.uniform(-limit, limit, size=(d_out, d_in))
    return DenseLayer(W=W, b=np.zeros(d_out), activation=activation)


@dataclass
class FeedForwardNet:
    """A plain layer stack; the checkpoint format serializes exactly this."""

    layers: list[DenseLayer]

    def forward_all(self, X: np.ndarray) -> list[np.ndarray]:
        """Activations of every layer, input included (index 0)."""
        acts = [np.asarray(X, dtype=np.float64)]
        for layer in self.layers:
            acts.append(layer.forward(acts[-1]))
        return acts

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.asarray(X, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def copy(self) -> "FeedForwardNet":
        return FeedForwardNet(
            layers=[DenseLayer(W=l.W.copy(), b=l.b.copy(), activation=l.activation)
                    for l in self.layers]
        )


def classify(net, X: np.ndarray):
    """Class probabilities and argmax predictions (ties -> lowest index).

    ``net`` may be a :class:`FeedForwardNet` ending in softmax or a single
    softmax :class:`DenseLayer`.
    """
    if isinstance(net, DenseLayer):
        net = FeedForwardNet(layers=[net])
    if net.layers[-1].activation != "softmax":
        raise ConfigError("classify needs a softmax output layer")
    P = net.predict(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return P, np.argmax(P, axis=1)


# ---------------------------------------------------------------------------
# training configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; the published architecture fixes none of these."""

    learning_rate: float = 0.05
    pretrain_lr: float = 0.1
    epochs: int = 100
    pretrain_epochs: int = 30
    batch_size: int = 32
    corruption: float = 0.2
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or self.pretrain_lr < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not (0.0 <= self.corruption <= 1.0):
            raise ConfigError("corruption fraction must be in [0, 1]")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")


# ---------------------------------------------------------------------------
# denoising autoencoder
# ---------------------------------------------------------------------------

def corrupt(X: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Zero exactly ``round(fraction * d)`` entries per row, without replacement.

    The count rounds half away from zero, so a 0.25 fraction of 10 entries
    masks 3 of them.
    """
    if not (0.0 <= fraction <= 1.0):
        raise ConfigError(f"corruption fraction must be in [0, 1], got {fraction}")
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    d = X2.shape[1]
    m = int(np.floor(fraction * d + 0.5))
    out = X2.copy()
    if m > 0:
        order = np.argsort(rng.random(X2.shape), axis=1)[:, :m]
        out[np.arange(X2.shape[0])[:, None], order] = 0.0
    return out[0] if single else out


@dataclass
class DenoisingAutoencoder:
    """Sigmoid encoder with a tied-transpose decoder.

    The decoder weight is never stored: reconstruction uses the encoder
    matrix transposed, so the tie holds exactly at every step.
    """

    encoder: DenseLayer
    b_dec: np.ndarray
    corruption: float = 0.2

    @property
    def d_in(self) -> int:
        return self.encoder.d_in

    @property
    def d_hidden(self) -> int:
        return self.encoder.d_out

    def encode(self, X: np.ndarray) -> np.ndarray:
        return self.encoder.forward(np.asarray(X, dtype=np.float64))

    def reconstruct(self, H: np.ndarray) -> np.ndarray:
        if H.shape[-1] != self.d_hidden:
            raise ShapeError(f"hidden width {H.shape[-1]} != {self.d_hidden}")
        return sigmoid(H @ self.encoder.W + self.b_dec)


def new_dae(d_in: int, d_hidden: int, corruption: float, rng: np.random.Generator) -> DenoisingAutoencoder:
    return DenoisingAutoencoder(
        encoder=init_layer(d_in, d_hidden, "sigmoid", rng),
        b_dec=np.zeros(d_in),
        corruption=corruption,
    )


def dae_apply(dae: DenoisingAutoencoder, X_corrupt: np.ndarray):
    """Hidden representation and reconstruction of a (corrupted) input."""
    H = dae.encode(X_corrupt)
    return H, dae.reconstruct(H)


def dae_loss_and_grads(dae: DenoisingAutoencoder, X_clean: np.ndarray, X_corrupt: np.ndarray):
    """Summed squared reconstruction error and its analytic gradients.

    The tied weight collects both the encoder-path and decoder-path
    contributions.  Returns ``(loss_sum, {"W": gW, "b": gb, "b_dec": gbd})``.
    """
    X_clean = np.atleast_2d(np.asarray(X_clean, dtype=np.float64))
    X_corrupt = np.atleast_2d(np.asarray(X_corrupt, dtype=np.float64))
    H = dae.encode(X_corrupt)
    Xr = dae.reconstruct(H)
    diff = Xr - X_clean
    loss = float((diff * diff).sum())
    g_out = 2.0 * diff * Xr * (1.0 - Xr)
    g_bdec = g_out.sum(axis=0)
    gW_dec = H.T @ g_out
    g_hidden = (g_out @ dae.encoder.W.T) * H * (1.0 - H)
    g_b = g_hidden.sum(axis=0)
    gW_enc = g_hidden.T @ X_corrupt
    return loss, {"W": gW_enc + gW_dec, "b": g_b, "b_dec": g_bdec}


def dae_train(dae: DenoisingAutoencoder, X: np.ndarray, cfg: TrainConfig,
              rng: np.random.Generator | None = None) -> list[float]:
    """Minibatch SGD on the mean reconstruction error of clean inputs.

    Inputs are corrupted afresh each batch; gradients flow through the tied
    weight.  Returns the per-epoch mean training loss.

    Raises:
        DivergenceError: The loss became non-finite, naming the epoch.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(X) < 1:
        raise ConfigError("dae_train needs at least one sample")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    trace: list[float] = []
    n = len(X)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = X[order[start:start + cfg.batch_size]]
            corrupted = corrupt(batch, dae.corruption, rng)
            loss, grads = dae_loss_and_grads(dae, batch, corrupted)
            total += loss
            scale = cfg.learning_rate / len(batch)
            dae.encoder.W -= scale * grads["W"]
            dae.encoder.b -= scale * grads["b"]
            dae.b_dec -= scale * grads["b_dec"]
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise DivergenceError(f"reconstruction loss diverged at epoch {epoch}", epoch=epoch)
        trace.append(mean_loss)
    return trace


# ---------------------------------------------------------------------------
# stacked network with softmax head
# ---------------------------------------------------------------------------

@dataclass
class StackedDenoisingClassifier:
    """Greedily pretrained autoencoder stack plus a softmax head."""

    daes: list[DenoisingAutoencoder]
    head: DenseLayer

    def encode(self, X: np.ndarray) -> np.ndarray:
        """Clean (corruption-free) pass through every encoder."""
        out = np.asarray(X, dtype=np.float64)
        for dae in self.daes:
            out = dae.encode(out)
        return out

    def network(self) -> FeedForwardNet:
        """The inference network: encoder layers then the softmax head."""
        return FeedForwardNet(layers=[dae.encoder for dae in self.daes] + [self.head])


def build_sdae(
    d_in: int,
    hidden: tuple[int, ...] = (100, 100, 100, 100),
    n_classes: int = 8,
    corruption: float = 0.2,
    seed: int = 0,
) -> StackedDenoisingClassifier:
    """Fresh stack with the default four 100-unit hidden layers."""
    rng = np.random.default_rng(seed)
    daes = []
    d = d_in
    for width in hidden:
        daes.append(new_dae(d, width, corruption, rng))
        d = width
    head = init_layer(d, n_classes, "softmax", rng)
    return StackedDenoisingClassifier(daes=daes, head=head)


def sdae_pretrain(model: StackedDenoisingClassifier, X: np.ndarray, cfg: TrainConfig,
                  rng: np.random.Generator | None = None) -> list[list[float]]:
    """Greedy bottom-up pretraining.

    Each layer is trained to reconstruct its own clean input from a
    corrupted copy; the next layer's inputs are the trained layer's
    encodings of the *uncorrupted* inputs.  Returns one loss trace per
    layer.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    layer_cfg = replace(cfg, epochs=max(cfg.pretrain_epochs, 1),
                        learning_rate=cfg.pretrain_lr)
    traces: list[list[float]] = []
    current = np.atleast_2d(np.asarray(X, dtype=np.float64))
    for dae in model.daes:
        if cfg.pretrain_epochs > 0:
            traces.append(dae_train(dae, current, layer_cfg, rng=rng))
        else:
            traces.append([])
        current = dae.encode(current)
    return traces


def nll_and_grads(net: FeedForwardNet, X: np.ndarray, y: np.ndarray):
    """Summed negative log-likelihood and gradients for a softmax network.

    Returns ``(nll_sum, grads)`` where ``grads`` is a per-layer list of
    ``(gW, gb)`` pairs.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    acts = net.forward_all(X)
    P = acts[-1]
    n = len(X)
    eps = np.finfo(np.float64).tiny
    nll = float(-np.log(np.maximum(P[np.arange(n), y], eps)).sum())
    delta = P.copy()
    delta[np.arange(n), y] -= 1.0
    return nll, _backprop(net, acts, delta)


def mse_and_grads(net: FeedForwardNet, X: np.ndarray, y: np.ndarray):
    """Summed squared error and gradients for an identity-output network."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    acts = net.forward_all(X)
    pred = acts[-1][:, 0]
    diff = pred - y
    loss = float((diff * diff).sum())
    delta = np.zeros_like(acts[-1])
    delta[:, 0] = 2.0 * diff
    return loss, _backprop(net, acts, delta)


def _backprop(net: FeedForwardNet, acts: list[np.ndarray], delta: np.ndarray):
    """Gradients per layer from the output-affine error signal ``delta``.

    ``delta`` must already be d(loss)/d(affine output) of the last layer;
    for softmax+NLL that is ``P - onehot`` and for identity+squared error
    ``2 (pred - y)``.
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        if k > 0:
            below = net.layers[k - 1]
            delta = delta @ layer.W
            if below.activation == "sigmoid":
                delta = delta * acts[k] * (1.0 - acts[k])
            elif below.activation != "identity":
                raise ConfigError(f"cannot backprop through {below.activation!r}")
    return grads


@dataclass
class FitTrace:
    """Per-epoch training history of a supervised fit."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0


def fit_classifier(net: FeedForwardNet, X_train, y_train, X_val, y_val,
                   cfg: TrainConfig, rng: np.random.Generator | None = None) -> FitTrace:
    """Minibatch SGD on mean NLL; keeps the best-validation-NLL epoch.

    Corruption never applies here: supervised fine-tuning and inference run
    on clean inputs.  With an empty validation set the final epoch wins.
    """
    return _fit(net, X_train, y_train, X_val, y_val, cfg, rng, kind="nll")


def fit_regressor(net: FeedForwardNet, X_train, y_train, X_val, y_val,
                  cfg: TrainConfig, rng: np.random.Generator | None = None) -> FitTrace:
    """Minibatch SGD on mean squared error; keeps the best-validation epoch."""
    return _fit(net, X_train, y_train, X_val, y_val, cfg, rng, kind="mse")


def _fit(net, X_train, y_train, X_val, y_val, cfg, rng, kind) -> FitTrace:
    X_train = np.atleast_2d(np.asarray(X_train, dtype=np.float64))
    if len(X_train) == 0:
        raise ConfigError("training set is empty")
    loss_fn = nll_and_grads if kind == "nll" else mse_and_grads
    y_train = np.asarray(y_train)
    has_val = X_val is not None and len(X_val) > 0
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    trace = FitTrace()
    best = np.inf
    best_params = None
    n = len(X_train)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            # overflow to inf is the divergence signal, not an error here
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_fn(net, X_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss diverged at epoch {epoch}", epoch=epoch)
            scale = cfg.learning_rate / len(idx)
            for layer, (gW, gb) in zip(net.layers, grads):
                layer.W -= scale * gW
                layer.b -= scale * gb
        epoch_loss, _ = loss_fn(net, X_train, y_train)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"training loss diverged at epoch {epoch}", epoch=epoch)
        trace.train_loss.append(epoch_loss)
        if has_val:
            val_loss, _ = loss_fn(net, X_val, y_val)
            trace.val_loss.append(val_loss)
            if kind == "nll":
                _, pred = classify(net, X_val)
                trace.val_accuracy.append(float(np.mean(pred == np.asarray(y_val))))
            if val_loss < best:
                best = val_loss
                best_params = net.copy()
                trace.best_epoch = epoch
        else:
            trace.best_epoch = epoch
    if best_params is not None:
        net.layers = best_params.layers
    return trace


def fine_tune(model: StackedDenoisingClassifier, X_train, y_train, X_val, y_val,
              cfg: TrainConfig, rng: np.random.Generator | None = None):
    """Supervised fine-tuning of the whole stack plus head.

    Returns ``(network, trace)``; the network shares parameters with the
    model's encoder layers.
    """
    net = model.network()
    trace = fit_classifier(net, X_train, y_train, X_val, y_val, cfg, rng=rng)
    # _fit may have swapped in best-epoch copies; propagate them back.
    for dae, layer in zip(model.daes, net.layers):
        dae.encoder = layer
    model.head = net.layers[-1]
    return net, trace


# ---------------------------------------------------------------------------
# three-layer perceptron (emission regressor)
# ---------------------------------------------------------------------------

def build_pnn(d_in: int, hidden: int = 40, seed: int = 0) -> FeedForwardNet:
    """Input -> sigmoid hidden -> single identity output."""
    rng = np.random.default_rng(seed)
    return FeedForwardNet(layers=[
        init_layer(d_in, hidden, "sigmoid", rng),
        init_layer(hidden, 1, "identity", rng),
    ])


def pnn3_train(net: FeedForwardNet, X_train, y_train, X_val, y_val,
               cfg: TrainConfig, rng: np.random.Generator | None = None) -> FitTrace:
    return fit_regressor(net, X_train, y_train, X_val, y_val, cfg, rng=rng)


def pnn3_predict(net: FeedForwardNet, X) -> np.ndarray:
    """Predicted quantities, clamped at zero (emissions cannot be negative)."""
    out = net.predict(np.atleast_2d(np.asarray(X, dtype=np.float64)))[:, 0]
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_network(path, net: FeedForwardNet, scaler=None) -> None:
    """Serialize a network (and optional feature scaler) to a flat file.

    Layout: magic, version, layer count, per-layer (d_in, d_out, activation
    code), scaler flag (+ mean/scale vectors), then row-major float64 W and
    b payloads per layer.  Writing is atomic (temp file + rename) and a
    save/load/save round trip is byte-identical.
    """
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<II", CHECKPOINT_VERSION, len(net.layers))
    for layer in net.layers:
        blob += struct.pack("<IIB", layer.d_in, layer.d_out,
                            ACTIVATION_CODES[layer.activation])
    if scaler is not None:
        mean, scale = scaler
        mean = np.asarray(mean, dtype=np.float64)
        scale = np.asarray(scale, dtype=np.float64)
        blob += struct.pack("<BI", 1, len(mean))
        blob += mean.tobytes()
        blob += scale.tobytes()
    else:
        blob += struct.pack("<BI", 0, 0)
    for layer in net.layers:
        blob += np.ascontiguousarray(layer.W, dtype=np.float64).tobytes()
        blob += np.ascontiguousarray(layer.b, dtype=np.float64).tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, path)


def load_network(path):
    """Inverse of :func:`save_network`; returns ``(net, scaler_or_None)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    shapes = []
    for _ in range(n_layers):
        d_in, d_out, code = struct.unpack_from("<IIB", data, off)
        off += 9
        if code not in _CODE_TO_ACTIVATION:
            raise FormatError(f"{path}: unknown activation code {code}")
        shapes.append((d_in, d_out, _CODE_TO_ACTIVATION[code]))
    has_scaler, d_scaler = struct.unpack_from("<BI", data, off)
    off += 5
    scaler = None
    if has_scaler:
        mean = np.frombuffer(data, dtype="<f8", count=d_scaler, offset=off).copy()
        off += 8 * d_scaler
        scale = np.frombuffer(data, dtype="<f8", count=d_scaler, offset=off).copy()
        off += 8 * d_scaler
        scaler = (mean, scale)
    layers = []
    for d_in, d_out, activation in shapes:
        W = np.frombuffer(data, dtype="<f8", count=d_in * d_out, offset=off).copy()
        off += 8 * d_in * d_out
        b = np.frombuffer(data, dtype="<f8", count=d_out, offset=off).copy()
        off += 8 * d_out
        layers.append(DenseLayer(W=W.reshape(d_out, d_in), b=b, activation=activation))
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    return FeedForwardNet(layers=layers), scaler
