"""Two-stream objectness regression network at toy scale.

Each stream is a stack of conv -> ReLU stages with 2x2 max pooling between
them. The ReLU output of every selected stage is ROI-pooled per proposal; the
pooled blocks from all streams and stages are concatenated and regressed to a
single score by two hidden FC layers (batch norm, ReLU, dropout) and an output
FC layer followed by a ReLU. Predictions are clamped to [0, 1].
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import IO, Iterable, Sequence, Union

import numpy as np

from .dataprep import kfold_split
from .nnkit import ops
from .nnkit.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nnkit.layers import BatchNorm, Conv2D, Dropout, Layer, Linear, ReLU, Sequential
from .nnkit.optim import mse_loss, sgd_momentum_step
from .scoring import Box, boxes_to_array


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    in_channels: int = 3
    stream_count: int = 2
    channels: tuple[int, ...] = (8, 16, 16)
    kernel_size: int = 3
    roi_scales: tuple[int, ...] = (0, 1, 2)
    roi_grid: int = 3
    fc_widths: tuple[int, ...] = (64, 64)
    dropout_rate: float = 0.5
    output_batch_norm: bool = True
    freeze_streams: bool = True

    @property
    def stages_per_stream(self) -> int:
        return len(self.channels)

    def __post_init__(self) -> None:
        if self.stream_count not in (1, 2):
            raise ValueError("stream_count must be 1 or 2")
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError("channels must be a non-empty list of positive counts")
        if not self.roi_scales or any(not 0 <= s < len(self.channels) for s in self.roi_scales):
            raise ValueError(f"roi_scales must pick stages in 0..{len(self.channels) - 1}")
        if len(set(self.roi_scales)) != len(self.roi_scales):
            raise ValueError("roi_scales must not repeat a stage")
        if self.roi_grid < 1 or self.kernel_size % 2 == 0 or self.image_size < 1:
            raise ValueError("roi_grid must be >= 1, kernel_size odd, image_size positive")
        if self.image_size >> (len(self.channels) - 1) < 1:
            raise ValueError("too many stages for the image size")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def feature_width(self) -> int:
        per_stream = sum(self.channels[s] for s in self.roi_scales) * self.roi_grid**2
        return self.stream_count * per_stream

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    max_proposals_per_batch: int = 256
    epochs: int = 30
    seed: int = 0
    k_folds: int = 5

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive; momentum and weight_decay non-negative")
        if self.max_proposals_per_batch < 1 or self.epochs < 1:
            raise ValueError("max_proposals_per_batch and epochs must be at least 1")


@dataclass
class TrainImage:
    """One training image: pixels, proposal boxes ``(N, 4)`` and their target scores."""

    image_id: str
    image: np.ndarray
    boxes: np.ndarray
    targets: np.ndarray


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def write_csv(self, destination: Union[str, Path, IO[str]]) -> None:
        rows = [["epoch", "train_loss", "val_loss"]]
        for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            rows.append([str(i), f"{t:.9f}", "" if math.isnan(v) else f"{v:.9f}"])
        if isinstance(destination, (str, Path)):
            with open(destination, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerows(rows)
        else:
            csv.writer(destination, lineterminator="\n").writerows(rows)


class Stream:
    """Conv stages; ``forward`` returns every stage's ReLU output."""

    def __init__(self, in_channels: int, channels: Sequence[int], kernel_size: int, rng: np.random.Generator):
        self.convs = []
        prev = in_channels
        for c in channels:
            self.convs.append(Conv2D(prev, c, kernel_size, rng))
            prev = c
        self.relus = [ReLU() for _ in channels]
        self._pool_caches: list = []

    @property
    def layers(self) -> list[Layer]:
        return list(self.convs)

    def forward(self, image: np.ndarray) -> list[np.ndarray]:
        outs = []
        self._pool_caches = []
        x = image
        for s, (conv, act) in enumerate(zip(self.convs, self.relus)):
            x = act.forward(conv.forward(x))
            outs.append(x)
            if s + 1 < len(self.convs):
                x, cache = ops.max_pool_forward(x, 2, 2)
                self._pool_caches.append(cache)
        return outs

    def backward(self, stage_grads: Sequence[np.ndarray | None]) -> np.ndarray:
        carry = None
        for s in reversed(range(len(self.convs))):
            g = stage_grads[s]
            if carry is not None:
                pooled = ops.max_pool_backward(carry, self._pool_caches[s])
                g = pooled if g is None else g + pooled
            if g is None:
                carry = None
                continue
            carry = self.convs[s].backward(self.relus[s].backward(g))
        return carry


class ObjectnessNet:
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.streams = [
            Stream(config.in_channels, config.channels, config.kernel_size, rng) for _ in range(config.stream_count)
        ]
        layers: list[Layer] = []
        prev = config.feature_width
        for width in config.fc_widths:
            layers += [Linear(prev, width, rng), BatchNorm(width), ReLU(), Dropout(config.dropout_rate, rng)]
            prev = width
        layers.append(Linear(prev, 1, rng))
        if config.output_batch_norm:
            layers.append(BatchNorm(1))
        layers.append(ReLU())
        self.head = Sequential(layers)

    # -- parameters ------------------------------------------------------------

    def named_layers(self) -> dict[str, Layer]:
        out: dict[str, Layer] = {}
        for s, stream in enumerate(self.streams):
            for k, conv in enumerate(stream.convs):
                out[f"stream{s}.conv{k}"] = conv
        for i, layer in enumerate(self.head.layers):
            if layer.params or layer.buffers:
                out[f"head.{i}"] = layer
        return out

    def stream_layers(self) -> list[Layer]:
        return [conv for stream in self.streams for conv in stream.convs]

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for prefix, layer in self.named_layers().items():
            for name, value in {**layer.params, **layer.buffers}.items():
                arrays[f"{prefix}.{name}"] = value.copy()
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_arrays()
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise CheckpointError(f"checkpoint does not match model: missing {missing[:3]}, unexpected {extra[:3]}")
        for prefix, layer in self.named_layers().items():
            for store in (layer.params, layer.buffers):
                for name in store:
                    value = arrays[f"{prefix}.{name}"]
                    if value.shape != store[name].shape:
                        raise CheckpointError(
                            f"{prefix}.{name}: shape {value.shape} does not match model {store[name].shape}"
                        )
                    store[name] = value.astype(np.float64).copy()

    # -- forward ---------------------------------------------------------------

    def feature_maps(self, image: np.ndarray) -> list[tuple[np.ndarray, float]]:
        """Selected ``(feature map, spatial scale)`` pairs, stream-major."""
        maps = []
        for stream in self.streams:
            outs = stream.forward(image)
            for s in self.config.roi_scales:
                maps.append((outs[s], 1.0 / (2**s)))
        return maps

    def roi_features(self, image: np.ndarray, boxes: np.ndarray) -> np.ndarray:
        self._check_inputs(image, boxes)
        blocks = [
            ops.roi_pool_many(fm, boxes, scale, self.config.roi_grid).reshape(len(boxes), -1)
            for fm, scale in self.feature_maps(image)
        ]
        return np.concatenate(blocks, axis=1) if blocks else np.zeros((len(boxes), 0))

    def head_forward(self, features: np.ndarray, training: bool) -> np.ndarray:
        self.head.set_training(training)
        return self.head.forward(features)[:, 0]

    def predict(self, image: np.ndarray, boxes) -> np.ndarray:
        arr = _as_box_array(boxes)
        if len(arr) == 0:
            return np.zeros(0)
        feats = self.roi_features(image, arr)
        return np.clip(self.head_forward(feats, training=False), 0.0, 1.0)

    def _check_inputs(self, image: np.ndarray, boxes: np.ndarray) -> None:
        size, c = self.config.image_size, self.config.in_channels
        if image.shape != (size, size, c):
            raise ValueError(f"image must be {size}x{size}x{c}, got {image.shape}")
        eps = 1e-6
        bad = (
            (boxes[:, 0] < -eps)
            | (boxes[:, 1] < -eps)
            | (boxes[:, 0] + boxes[:, 2] > size + eps)
            | (boxes[:, 1] + boxes[:, 3] > size + eps)
            | (boxes[:, 2] <= 0)
            | (boxes[:, 3] <= 0)
        )
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"box {tuple(boxes[i])} is empty or lies outside the {size}x{size} image")

    # -- full backward (used when streams are trainable) -----------------------

    def loss_and_backward(self, image: np.ndarray, boxes: np.ndarray, targets: np.ndarray,
                          through_streams: bool, features: np.ndarray | None = None) -> float:
        """Training-mode forward, Eq-style MSE loss and backward; grads accumulate."""
        cfg = self.config
        if through_streams:
            self._check_inputs(image, boxes)
            stream_outs = [stream.forward(image) for stream in self.streams]
            caches = []
            blocks = []
            for outs in stream_outs:
                for s in cfg.roi_scales:
                    per_box = [ops.roi_pool_forward(outs[s], tuple(b), 1.0 / 2**s, cfg.roi_grid) for b in boxes]
                    blocks.append(np.stack([p[0] for p in per_box]).reshape(len(boxes), -1))
                    caches.append([p[1] for p in per_box])
            features = np.concatenate(blocks, axis=1)
        elif features is None:
            features = self.roi_features(image, boxes)
        pred = self.head_forward(features, training=True)
        loss, grad = mse_loss(pred, targets)
        dfeat = self.head.backward(grad[:, None])
        if through_streams:
            offset = 0
            block = 0
            for stream, outs in zip(self.streams, stream_outs):
                stage_grads: list[np.ndarray | None] = [None] * len(outs)
                for s in cfg.roi_scales:
                    width = cfg.channels[s] * cfg.roi_grid**2
                    g = np.zeros_like(outs[s])
                    chunk = dfeat[:, offset : offset + width].reshape(len(boxes), cfg.roi_grid, cfg.roi_grid, -1)
                    for n, cache in enumerate(caches[block]):
                        g += ops.roi_pool_backward(chunk[n], cache)
                    stage_grads[s] = g
                    offset += width
                    block += 1
                stream.backward(stage_grads)
        return loss


def _as_box_array(boxes) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.astype(np.float64).reshape(-1, 4)
    boxes = list(boxes)
    if boxes and isinstance(boxes[0], Box):
        return boxes_to_array(boxes)
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 4)


def build(config: ModelConfig = ModelConfig(), rng: np.random.Generator | int = 0) -> ObjectnessNet:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return ObjectnessNet(config, rng)


def predict(model: ObjectnessNet, image: np.ndarray, boxes) -> np.ndarray:
    return model.predict(image, boxes)


# -- stream pre-training -----------------------------------------------------------


def sobel_magnitude(image: np.ndarray) -> np.ndarray:
    gray = image.mean(axis=2, keepdims=True)
    kx = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
    kernels = np.stack([kx, kx.T], axis=-1)[:, :, None, :]
    g = ops.conv2d(np.pad(gray, ((1, 1), (1, 1), (0, 0)), mode="edge"), kernels)
    return np.sqrt((g**2).sum(axis=2, keepdims=True))


def box_mask(boxes: Iterable[Box], size: int) -> np.ndarray:
    """Two channels: inside any box, and background."""
    mask = np.zeros((size, size))
    for b in boxes:
        mask[int(b.y) : int(math.ceil(b.y2)), int(b.x) : int(math.ceil(b.x2))] = 1.0
    return np.stack([mask, 1.0 - mask], axis=-1)


def _downsample(target: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return target
    h, w, c = target.shape
    h2, w2 = h // factor, w // factor
    return target[: h2 * factor, : w2 * factor].reshape(h2, factor, w2, factor, c).mean(axis=(1, 3))


def pretrain_streams(
    model: ObjectnessNet,
    scenes: Sequence[tuple[np.ndarray, Sequence[Box]]],
    steps: int = 400,
    lr: float = 0.01,
    seed: int = 0,
) -> list[float]:
    """Give the frozen streams useful filters before head training.

    Stream 0 learns to read out object/background masks of the GT boxes,
    stream 1 learns to regress Sobel edge magnitude. Each stage gets its own
    1x1 linear readout, trained jointly with the stream and then discarded.
    Returns the per-step loss.
    """
    rng = np.random.default_rng(seed)
    cfg = model.config
    targets_fns = [lambda img, gts: box_mask(gts, cfg.image_size), lambda img, gts: sobel_magnitude(img) / 4.0]
    losses = []
    readouts = []
    for s_idx, stream in enumerate(model.streams):
        out_c = 2 if s_idx == 0 else 1
        readouts.append([Conv2D(c, out_c, 1, rng) for c in cfg.channels])
    for step in range(steps):
        image, gts = scenes[int(rng.integers(len(scenes)))]
        total = 0.0
        for s_idx, stream in enumerate(model.streams):
            target = targets_fns[s_idx % 2](image, gts)
            outs = stream.forward(image)
            grads = []
            for s, (feat, readout) in enumerate(zip(outs, readouts[s_idx])):
                readout.zero_grad()
                pred = readout.forward(feat)
                tgt = _downsample(target, 2**s)
                loss, g = mse_loss(pred, tgt)
                total += loss
                grads.append(readout.backward(g.reshape(pred.shape)))
            for conv in stream.convs:
                conv.zero_grad()
            stream.backward(grads)
            sgd_momentum_step(stream.convs + readouts[s_idx], lr, 0.9, 0.0)
        losses.append(total)
    return losses


# -- training ----------------------------------------------------------------------


def train(
    model: ObjectnessNet,
    dataset: Sequence[TrainImage],
    tc: TrainConfig = TrainConfig(),
    val_set: Sequence[TrainImage] | None = None,
) -> tuple[ObjectnessNet, History]:
    """Train with one image's proposals per mini-batch.

    With ``val_set=None`` and ``tc.k_folds >= 2`` one fold of the images is
    held out for validation. The head parameters from the epoch with the lowest
    validation loss are restored at the end; without a validation set the last
    epoch is kept.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(tc.seed)
    train_set = list(dataset)
    if val_set is None and tc.k_folds >= 2 and len(train_set) >= tc.k_folds:
        folds = kfold_split(list(range(len(train_set))), tc.k_folds, rng)
        held = set(folds[0])
        val_set = [train_set[i] for i in sorted(held)]
        train_set = [d for i, d in enumerate(train_set) if i not in held]
    val_set = list(val_set or [])

    through_streams = not model.config.freeze_streams
    trainable = model.head.layers + ([] if not through_streams else model.stream_layers())
    for layer in model.head.layers:
        if isinstance(layer, Dropout):
            layer.rng = np.random.default_rng(rng.integers(2**63))

    cache: dict[int, np.ndarray] = {}
    if not through_streams:
        for i, item in enumerate(train_set):
            cache[i] = model.roi_features(item.image, item.boxes)
    val_feats = [model.roi_features(v.image, v.boxes) for v in val_set] if not through_streams else None

    history = History()
    best_loss = math.inf
    best_state = None
    for epoch in range(tc.epochs):
        losses, weights = [], []
        for i in rng.permutation(len(train_set)):
            item = train_set[i]
            n = len(item.boxes)
            if n < 2:
                continue
            take = rng.permutation(n)[: tc.max_proposals_per_batch]
            if len(take) < 2:
                continue
            for layer in trainable:
                layer.zero_grad()
            loss = model.loss_and_backward(
                item.image,
                item.boxes[take],
                item.targets[take],
                through_streams,
                features=None if through_streams else cache[i][take],
            )
            sgd_momentum_step(trainable, tc.lr, tc.momentum, tc.weight_decay)
            losses.append(loss)
            weights.append(len(take))
        history.train_loss.append(float(np.average(losses, weights=weights)) if losses else math.nan)
        if val_set:
            val_loss = _validation_loss(model, val_set, val_feats)
            history.val_loss.append(val_loss)
            if val_loss < best_loss:
                best_loss = val_loss
                history.best_epoch = epoch + 1
                best_state = model.state_arrays()
        else:
            history.val_loss.append(math.nan)
            history.best_epoch = epoch + 1
    if best_state is not None:
        model.load_arrays(best_state)
    model.head.set_training(False)
    return model, history


def _validation_loss(model: ObjectnessNet, val_set: Sequence[TrainImage], feats) -> float:
    preds, targets = [], []
    for j, item in enumerate(val_set):
        if len(item.boxes) == 0:
            continue
        f = feats[j] if feats is not None else model.roi_features(item.image, item.boxes)
        preds.append(np.clip(model.head_forward(f, training=False), 0.0, 1.0))
        targets.append(item.targets)
    if not preds:
        return math.nan
    return mse_loss(np.concatenate(preds), np.concatenate(targets))[0]


# -- persistence -------------------------------------------------------------------


def save(model: ObjectnessNet, path: Union[str, Path]) -> None:
    save_checkpoint(path, model.state_arrays(), {"model_config": model.config.to_dict()})


def load(path: Union[str, Path]) -> ObjectnessNet:
    arrays, meta = load_checkpoint(path)
    try:
        config = ModelConfig.from_dict(meta["model_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model config in checkpoint ({exc})") from exc
    model = build(config, 0)
    model.load_arrays(arrays)
    model.head.set_training(False)
    return model


def clone(model: ObjectnessNet) -> ObjectnessNet:
    return copy.deepcopy(model)
