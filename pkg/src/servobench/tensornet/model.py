"""Siamese relative-pose network: spec, parameters, forward, checkpoints.

Two weight-sharing extractor branches (the shared parameters are the same
Tensor objects, not copies) feed a 1x1 channel-reduction layer; both
feature maps are flattened, concatenated (A first, B second) and passed
through a fully-connected classifier ending in 7 outputs: translation (3)
plus raw quaternion (4).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..geometry import Pose, Quat
from .tensor import Tensor, affine, concat, conv2d, maxpool2d


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    kind: str = "conv"


@dataclass(frozen=True)
class Relu:
    kind: str = "relu"


@dataclass(frozen=True)
class MaxPool:
    window: int
    kind: str = "maxpool"


@dataclass(frozen=True)
class Flatten:
    kind: str = "flatten"


@dataclass(frozen=True)
class Dense:
    out_features: int
    kind: str = "dense"


def _layer_to_json(layer) -> dict:
    d = {"kind": layer.kind}
    for k, v in layer.__dict__.items():
        if k != "kind":
            d[k] = v
    return d


def _layer_from_json(d: dict):
    kinds = {"conv": Conv, "relu": Relu, "maxpool": MaxPool, "flatten": Flatten, "dense": Dense}
    cls = kinds[d["kind"]]
    kwargs = {k: v for k, v in d.items() if k != "kind"}
    return cls(**kwargs)


@dataclass(frozen=True)
class NetworkSpec:
    """Shared extractor + channel reduction + joint classifier head."""

    extractor: tuple
    reduction: Conv
    classifier: tuple
    input_height: int = 64
    input_width: int = 64
    input_channels: int = 1

    def to_json(self) -> dict:
        return {
            "extractor": [_layer_to_json(l) for l in self.extractor],
            "reduction": _layer_to_json(self.reduction),
            "classifier": [_layer_to_json(l) for l in self.classifier],
            "input_height": self.input_height,
            "input_width": self.input_width,
            "input_channels": self.input_channels,
        }

    @staticmethod
    def from_json(d: dict) -> "NetworkSpec":
        return NetworkSpec(
            tuple(_layer_from_json(l) for l in d["extractor"]),
            _layer_from_json(d["reduction"]),
            tuple(_layer_from_json(l) for l in d["classifier"]),
            int(d["input_height"]),
            int(d["input_width"]),
            int(d["input_channels"]),
        )


def default_network_spec(height: int = 64, width: int = 64) -> NetworkSpec:
    """Desk-scale architecture; at 64x64 the extractor yields 32@4x4."""
    return NetworkSpec(
        extractor=(
            Conv(8, 5, stride=2),
            Relu(),
            MaxPool(2),
            Conv(16, 3),
            Relu(),
            MaxPool(2),
            Conv(32, 3),
            Relu(),
        ),
        reduction=Conv(12, 1),
        classifier=(
            Dense(256), Relu(),
            Dense(128), Relu(),
            Dense(64), Relu(),
            Dense(64), Relu(),
            Dense(32), Relu(),
            Dense(16), Relu(),
            Dense(7),
        ),
        input_height=height,
        input_width=width,
    )


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out <= 0:
        raise ValueError("network spec produces an empty feature map")
    return out


def _trace_shapes(spec: NetworkSpec):
    """Per-parameter shapes in spec order, plus the classifier input width."""
    shapes = []
    c, h, w = spec.input_channels, spec.input_height, spec.input_width
    for layer in list(spec.extractor) + [spec.reduction]:
        if layer.kind == "conv":
            shapes.append(("conv", (layer.out_channels, c, layer.kernel, layer.kernel)))
            h = _conv_out(h, layer.kernel, layer.stride, layer.padding)
            w = _conv_out(w, layer.kernel, layer.stride, layer.padding)
            c = layer.out_channels
        elif layer.kind == "maxpool":
            h, w = h // layer.window, w // layer.window
            if h == 0 or w == 0:
                raise ValueError("maxpool collapses the feature map")
    features = 2 * c * h * w  # both branches, flattened and concatenated
    n = features
    for layer in spec.classifier:
        if layer.kind == "dense":
            shapes.append(("dense", (layer.out_features, n)))
            n = layer.out_features
    if n != 7:
        raise ValueError(f"classifier must end in 7 outputs, got {n}")
    return shapes, features


@dataclass
class Prediction:
    """Raw network output: translation (m) and unnormalized quaternion."""

    translation: np.ndarray  # (3,)
    quaternion_raw: np.ndarray  # (4,), (w, x, y, z) order

    def to_pose(self) -> Pose:
        q = Quat(*self.quaternion_raw).normalized()
        return Pose(q, tuple(self.translation))


class SiameseModel:
    """Parameter container plus the two-branch forward pass."""

    def __init__(self, spec: NetworkSpec, params=None):
        self.spec = spec
        self.param_shapes, self.feature_width = _trace_shapes(spec)
        if params is None:
            params = []
            for _, shape in self.param_shapes:
                params.append(Tensor(np.zeros(shape), requires_grad=True))
                params.append(Tensor(np.zeros(shape[0]), requires_grad=True))
        self.params = params

    def parameters(self):
        """Weights and biases interleaved, in spec order."""
        return self.params

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def _run_stack(self, layers, x: Tensor, params_iter) -> Tensor:
        for layer in layers:
            if layer.kind == "conv":
                w, b = next(params_iter), next(params_iter)
                x = conv2d(x, w, b, stride=layer.stride, padding=layer.padding)
            elif layer.kind == "relu":
                x = x.relu()
            elif layer.kind == "maxpool":
                x = maxpool2d(x, layer.window)
            elif layer.kind == "flatten":
                x = x.flatten_batch()
            elif layer.kind == "dense":
                w, b = next(params_iter), next(params_iter)
                x = affine(x, w, b)
            else:
                raise ValueError(f"unknown layer kind {layer.kind}")
        return x

    def branch_features(self, batch: np.ndarray) -> Tensor:
        """Shared extractor + channel reduction, flattened per image."""
        spec = self.spec
        if batch.ndim != 4 or batch.shape[1:] != (
            spec.input_channels, spec.input_height, spec.input_width,
        ):
            raise ValueError(
                f"branch input must be [B, {spec.input_channels}, "
                f"{spec.input_height}, {spec.input_width}], got {batch.shape}"
            )
        it = iter(self.params)
        x = self._run_stack(list(spec.extractor) + [spec.reduction], Tensor(batch), it)
        return x.flatten_batch()

    def _classifier_params(self):
        n_shared = sum(2 for kind, _ in self.param_shapes if kind == "conv")
        return iter(self.params[n_shared:])

    def forward(self, batch_a: np.ndarray, batch_b: np.ndarray) -> Tensor:
        """Batched Siamese forward; returns [B, 7] (t first, then raw q)."""
        fa = self.branch_features(batch_a)
        fb = self.branch_features(batch_b)
        x = concat([fa, fb], axis=1)
        return self._run_stack(self.spec.classifier, x, self._classifier_params())

    def predict(self, image_a, image_b) -> Prediction:
        """Single-pair prediction from two Image objects."""
        a = image_a.pixels[None, None, :, :]
        b = image_b.pixels[None, None, :, :]
        out = self.forward(a, b).data[0]
        return Prediction(out[:3].copy(), out[3:].copy())

    def predict_delta(self, image_a, image_b) -> Pose:
        """Predicted relative pose, quaternion normalized and canonical."""
        return self.predict(image_a, image_b).to_pose()


def init_uniform(spec: NetworkSpec, seed: int) -> SiameseModel:
    """Weights uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero."""
    model = SiameseModel(spec)
    rng = np.random.default_rng(seed)
    for (kind, shape), i in zip(model.param_shapes, range(0, len(model.params), 2)):
        if kind == "conv":
            fan_in = shape[1] * shape[2] * shape[3]
        else:
            fan_in = shape[1]
        bound = 1.0 / np.sqrt(fan_in)
        model.params[i].data = rng.uniform(-bound, bound, size=shape)
        model.params[i + 1].data = np.zeros(shape[0])
    return model


def save_checkpoint(path: str, model: SiameseModel, epoch: int = 0,
                    metrics: dict = None, seed: int = 0) -> None:
    """JSON header line + raw little-endian float64 blocks in spec order."""
    header = {
        "spec": model.spec.to_json(),
        "epoch": epoch,
        "metrics": metrics or {},
        "seed": seed,
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for p in model.params:
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path: str):
    """Returns (model, header dict)."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        spec = NetworkSpec.from_json(header["spec"])
        model = SiameseModel(spec)
        for p in model.params:
            raw = f.read(p.data.size * 8)
            if len(raw) != p.data.size * 8:
                raise ValueError("checkpoint truncated")
            p.data = np.frombuffer(raw, dtype="<f8").reshape(p.data.shape).copy()
    return model, header
