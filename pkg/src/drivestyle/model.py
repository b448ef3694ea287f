"""The convolutional-recurrent driver classifier and its ablation variant.

Data flow for one aggregate map (R = 7|F| rows, T columns)::

    input R x T
      -> conv1: 16 filters of R x 5 (time padded by 2) -> ReLU -> 16 x 1 x T
      -> filters re-read as a feature axis              -> 16 x T
      -> max-pool 8x1 stride 1                          -> 9 x T -> dropout
      -> conv2: 16 filters 3x3 (padded by 1 both axes)  -> ReLU -> 16 x 9 x T
      -> max-pool 8x1 stride 1                          -> 16 x 2 x T -> dropout
      -> stack channels                                 -> 32 x T
      -> concatenate the input (residual)               -> (32 + R) x T
      -> GRU(100) -> dropout -> GRU(100) -> dropout -> final state
      -> dense(100, sigmoid) [latent] -> batch norm -> dropout -> dense(drivers)

The ablation variant drops the residual concatenation and the batch norm.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .nn import layers as L
from .nn.params import ParameterStore, load_checkpoint, save_checkpoint


@dataclass(frozen=True)
class ArchitectureConfig:
    feature_count: int
    num_drivers: int
    time_len: int = 128
    conv1_filters: int = 16
    conv1_width: int = 5
    conv2_filters: int = 16
    conv2_kernel: int = 3
    pool: int = 8
    gru_units: int = 100
    gru_layers: int = 2
    fc_units: int = 100
    dropout: float = 0.5
    ablation_no_bn_residual: bool = False

    @property
    def input_rows(self) -> int:
        return 7 * self.feature_count

    @property
    def pool1_rows(self) -> int:
        return self.conv1_filters - self.pool + 1

    @property
    def reduced_rows(self) -> int:
        """Feature-axis height after the second pooling (|F'|)."""
        return self.pool1_rows - self.pool + 1

    @property
    def stacked_rows(self) -> int:
        return self.conv2_filters * self.reduced_rows

    @property
    def gru_input(self) -> int:
        return self.stacked_rows + (0 if self.ablation_no_bn_residual else self.input_rows)

    def validate(self) -> None:
        if self.feature_count < 1 or self.num_drivers < 1 or self.time_len < 1:
            raise ValueError("feature_count, num_drivers and time_len must be positive")
        if self.conv1_width % 2 == 0 or self.conv2_kernel % 2 == 0:
            raise ValueError("kernel widths must be odd to preserve the time axis")
        if self.pool1_rows < self.pool:
            raise ValueError(
                f"first pooling leaves {self.pool1_rows} rows, fewer than pool size {self.pool}"
            )
        if self.reduced_rows < 1 or self.gru_layers < 1:
            raise ValueError("inconsistent convolution / pooling geometry")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ArchitectureConfig":
        return cls(**json.loads(text))


@dataclass
class ForwardTrace:
    logits: np.ndarray
    latent: np.ndarray
    shapes: dict
    train: bool
    cache: Optional[dict] = field(default=None, repr=False)


class DCRNN:
    def __init__(self, cfg: ArchitectureConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.params = build_parameters(cfg, seed)

    @property
    def store(self) -> ParameterStore:
        return self.params

    # -- input scaling ------------------------------------------------------

    def fit_input_scaling(self, maps: np.ndarray) -> None:
        """Per-row standardization statistics from training maps (N x R x T)."""
        mean = maps.mean(axis=(0, 2))
        std = maps.std(axis=(0, 2))
        self.params["input_mean"] = mean
        self.params["input_std"] = np.where(std > 1e-8, std, 1.0)

    # -- forward ------------------------------------------------------------

    def forward(self, maps: np.ndarray, train: bool = False, seed: int = 0) -> ForwardTrace:
        cfg, p = self.cfg, self.params
        x = np.asarray(maps, dtype=np.float64)
        if x.ndim != 3 or x.shape[1:] != (cfg.input_rows, cfg.time_len):
            raise ValueError(f"expected maps of shape N x {cfg.input_rows} x {cfg.time_len}, got {x.shape}")
        n, rows, t_len = x.shape
        rng = np.random.default_rng(seed) if train else None
        drop = cfg.dropout
        c: dict = {}
        shapes = {"input": (rows, t_len)}

        xs = (x - p["input_mean"][:, None]) / p["input_std"][:, None]
        h, c["conv1"] = L.conv2d_forward(xs[:, None], p["conv1_w"], p["conv1_b"], pad=(0, cfg.conv1_width // 2))
        h, c["relu1"] = L.relu_forward(h)
        h = h.reshape(n, 1, cfg.conv1_filters, t_len)
        shapes["conv1"] = h.shape[2:]
        h, c["pool1"] = L.maxpool_forward(h, cfg.pool)
        shapes["pool1"] = h.shape[2:]
        h, c["drop1"] = L.dropout_forward(h, drop, train, rng)
        k = cfg.conv2_kernel // 2
        h, c["conv2"] = L.conv2d_forward(h, p["conv2_w"], p["conv2_b"], pad=(k, k))
        h, c["relu2"] = L.relu_forward(h)
        shapes["conv2"] = h.shape[1:]
        h, c["pool2"] = L.maxpool_forward(h, cfg.pool)
        shapes["pool2"] = h.shape[1:]
        h, c["drop2"] = L.dropout_forward(h, drop, train, rng)
        h = h.reshape(n, cfg.stacked_rows, t_len)
        shapes["stacked"] = h.shape[1:]
        if not cfg.ablation_no_bn_residual:
            h = np.concatenate([h, xs], axis=1)
        shapes["gru_input"] = h.shape[1:]
        h = h.transpose(0, 2, 1)

        for layer in range(cfg.gru_layers):
            h, c[f"gru{layer}"] = L.gru_forward(h, _gru_params(p, layer))
            if layer == cfg.gru_layers - 1:
                h = h[:, -1]
            h, c[f"gru_drop{layer}"] = L.dropout_forward(h, drop, train, rng)
        shapes["gru_output"] = h.shape[1:]

        latent, c["fc1"] = L.dense_forward(h, p["fc1_w"], p["fc1_b"], "sigmoid")
        h = latent
        if not cfg.ablation_no_bn_residual:
            h, c["bn"], (rm, rv) = L.batchnorm_forward(
                h, p["bn_gamma"], p["bn_beta"], p["bn_mean"], p["bn_var"], train
            )
            if train:
                p["bn_mean"], p["bn_var"] = rm, rv
        h, c["fc_drop"] = L.dropout_forward(h, drop, train, rng)
        logits, c["fc2"] = L.dense_forward(h, p["fc2_w"], p["fc2_b"])
        L.check_finite(logits, "logits")
        return ForwardTrace(logits, latent, shapes, train, c if train else None)

    # -- backward -----------------------------------------------------------

    def backward(self, trace: ForwardTrace, labels) -> float:
        """Cross-entropy loss of ``trace``; gradients are added to the store."""
        if trace.cache is None:
            raise RuntimeError("backward needs a train-mode forward trace")
        cfg, p, c = self.cfg, self.params, trace.cache
        loss, d = L.softmax_cross_entropy(trace.logits, labels)
        acc = p.accumulate

        d, dw, db = L.dense_backward(d, c["fc2"])
        acc("fc2_w", dw)
        acc("fc2_b", db)
        d = L.dropout_backward(d, c["fc_drop"])
        if not cfg.ablation_no_bn_residual:
            d, dg, dbeta = L.batchnorm_backward(d, c["bn"])
            acc("bn_gamma", dg)
            acc("bn_beta", dbeta)
        d, dw, db = L.dense_backward(d, c["fc1"])
        acc("fc1_w", dw)
        acc("fc1_b", db)

        for layer in range(cfg.gru_layers - 1, -1, -1):
            d = L.dropout_backward(d, c[f"gru_drop{layer}"])
            if layer == cfg.gru_layers - 1:
                n, t_len = trace.logits.shape[0], cfg.time_len
                full = np.zeros((n, t_len, d.shape[-1]))
                full[:, -1] = d
                d = full
            d, grads = L.gru_backward(d, c[f"gru{layer}"])
            for name, g in grads.items():
                acc(f"gru{layer}_{name}", g)
        d = d.transpose(0, 2, 1)

        n = d.shape[0]
        dxs = None
        if not cfg.ablation_no_bn_residual:
            dxs = d[:, cfg.stacked_rows :]
            d = d[:, : cfg.stacked_rows]
        d = d.reshape(n, cfg.conv2_filters, cfg.reduced_rows, cfg.time_len)
        d = L.dropout_backward(d, c["drop2"])
        d = L.maxpool_backward(d, c["pool2"])
        d = L.relu_backward(d, c["relu2"])
        d, dw, db = L.conv2d_backward(d, c["conv2"])
        acc("conv2_w", dw)
        acc("conv2_b", db)
        d = L.dropout_backward(d, c["drop1"])
        d = L.maxpool_backward(d, c["pool1"])
        d = d.reshape(n, cfg.conv1_filters, 1, cfg.time_len)
        d = L.relu_backward(d, c["relu1"])
        d, dw, db = L.conv2d_backward(d, c["conv1"])
        acc("conv1_w", dw)
        acc("conv1_b", db)
        return loss

    # -- inference helpers --------------------------------------------------

    def infer(self, maps: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Infer-mode logits and latents, evaluated in chunks."""
        logits, latents = [], []
        for s in range(0, len(maps), batch_size):
            tr = self.forward(maps[s : s + batch_size], train=False)
            logits.append(tr.logits)
            latents.append(tr.latent)
        if not logits:
            return np.zeros((0, self.cfg.num_drivers)), np.zeros((0, self.cfg.fc_units))
        return np.concatenate(logits), np.concatenate(latents)

    # -- persistence --------------------------------------------------------

    def save(self, checkpoint_path, config_path) -> None:
        with open(checkpoint_path, "wb") as fh:
            save_checkpoint(self.params, fh)
        with open(config_path, "w", encoding="utf-8") as fh:
            fh.write(self.cfg.to_json() + "\n")

    @classmethod
    def load(cls, checkpoint_path, config_path) -> "DCRNN":
        with open(config_path, encoding="utf-8") as fh:
            cfg = ArchitectureConfig.from_json(fh.read())
        model = cls(cfg)
        with open(checkpoint_path, "rb") as fh:
            load_checkpoint(fh, into=model.params)
        return model


def _gru_params(p: ParameterStore, layer: int) -> dict:
    return {name: p[f"gru{layer}_{name}"] for name in L.GRU_PARAMS}


def build_parameters(cfg: ArchitectureConfig, seed: int) -> ParameterStore:
    """Initialize every parameter: He-uniform for the ReLU convolutions,
    uniform +-1/sqrt(fan_in) for the dense and recurrent weights, zero biases."""
    rng = np.random.default_rng(seed)
    store = ParameterStore()

    def uniform(shape, limit):
        return rng.uniform(-limit, limit, size=shape)

    r = cfg.input_rows
    fan1 = r * cfg.conv1_width
    store.add("conv1_w", uniform((cfg.conv1_filters, 1, r, cfg.conv1_width), np.sqrt(6.0 / fan1)))
    store.add("conv1_b", np.zeros(cfg.conv1_filters))
    fan2 = cfg.conv2_kernel**2
    store.add("conv2_w", uniform((cfg.conv2_filters, 1, cfg.conv2_kernel, cfg.conv2_kernel), np.sqrt(6.0 / fan2)))
    store.add("conv2_b", np.zeros(cfg.conv2_filters))

    d_in, hsz = cfg.gru_input, cfg.gru_units
    lim = 1.0 / np.sqrt(hsz)
    for layer in range(cfg.gru_layers):
        for gate in "zrh":
            store.add(f"gru{layer}_W{gate}", uniform((hsz, d_in), lim))
            store.add(f"gru{layer}_U{gate}", uniform((hsz, hsz), lim))
            store.add(f"gru{layer}_b{gate}", np.zeros(hsz))
        d_in = hsz

    store.add("fc1_w", uniform((cfg.fc_units, hsz), 1.0 / np.sqrt(hsz)))
    store.add("fc1_b", np.zeros(cfg.fc_units))
    if not cfg.ablation_no_bn_residual:
        store.add("bn_gamma", np.ones(cfg.fc_units))
        store.add("bn_beta", np.zeros(cfg.fc_units))
        store.add("bn_mean", np.zeros(cfg.fc_units), trainable=False)
        store.add("bn_var", np.ones(cfg.fc_units), trainable=False)
    store.add("fc2_w", uniform((cfg.num_drivers, cfg.fc_units), 1.0 / np.sqrt(cfg.fc_units)))
    store.add("fc2_b", np.zeros(cfg.num_drivers))
    store.add("input_mean", np.zeros(r), trainable=False)
    store.add("input_std", np.ones(r), trainable=False)
    return store
