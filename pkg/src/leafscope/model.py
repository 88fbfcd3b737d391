"""Backbone registry, classification head and two-phase trainability.

The classifier is ``backbone -> global average pool -> batch norm -> dropout
-> dense``; it emits raw logits and :func:`softmax` is applied separately for
reporting. Feature maps on the numpy side are channel-last ``(h, w, d)``.

Alongside the torch modules this file carries small numpy reference versions
of the head operations, used for gradient and consistency checks.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .errors import BackboneUnavailableError, ConfigError, NumericError, ShapeError

PHASES = ("head_only", "full_finetune")
BN_EPSILON = 1e-5


# --- backbones -------------------------------------------------------------

def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _toyconv_hw(s: int) -> int:
    s = _conv_out(s, 3, 2, 1)  # stride-2 stem convolution
    for _ in range(4):
        s //= 2
    return s


def _halve_ceil(s: int, times: int) -> int:
    for _ in range(times):
        s = (s - 1) // 2 + 1
    return s


def _densenet_hw(s: int) -> int:
    s = _halve_ceil(s, 2)  # 7x7/2 stem conv + 3x3/2 max pool
    for _ in range(3):
        s //= 2  # transition average pools
    return s


def _inception_hw(s: int) -> int:
    s = _conv_out(s, 3, 2, 0) - 2  # Conv2d_1a, Conv2d_2a
    s = _conv_out(s, 3, 2, 0) - 2  # pool, Conv2d_4a
    for _ in range(3):  # pool, Mixed_6a, Mixed_7a
        s = _conv_out(s, 3, 2, 0)
    return s


def _xception_hw(s: int) -> int:
    s = _conv_out(s, 3, 2, 0) - 2
    return _halve_ceil(s, 4)


class ToyConv(nn.Module):
    """Small from-scratch extractor: 3 -> 8 -> 16 -> 32 -> 64 channels.

    Each block is 3x3 conv, batch norm, ReLU and 2x2 max pool; the first
    convolution has stride 2, so a 224 input yields a 7x7x64 map.
    """

    def __init__(self):
        super().__init__()
        layers: list[nn.Module] = []
        chans = [3, 8, 16, 32, 64]
        for i, (cin, cout) in enumerate(zip(chans, chans[1:])):
            layers += [
                nn.Conv2d(cin, cout, 3, stride=2 if i == 0 else 1, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
        self.features = nn.Sequential(*layers)

    def forward(self, x):
        return self.features(x)


class TimmBackbone(nn.Module):
    """Feature trunk of a timm model with its ImageNet input scaling built in."""

    def __init__(self, timm_name: str, pretrained: bool, weights_path: str | Path | None = None):
        super().__init__()
        try:
            import timm
        except ImportError as exc:  # pragma: no cover - timm is a declared dependency
            raise BackboneUnavailableError(
                "the timm model provider is not installed; `pip install timm`"
            ) from exc
        try:
            net = timm.create_model(timm_name, pretrained=pretrained and weights_path is None,
                                    num_classes=0, global_pool="")
        except Exception as exc:
            raise BackboneUnavailableError(
                f"could not fetch pretrained weights for {timm_name!r} ({exc}). "
                "Connect to the Hugging Face hub, pre-populate HF_HOME, or pass "
                "weights_path pointing at a local state dict; pretrained=false "
                "builds the same architecture with random weights."
            ) from exc
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            missing, _ = net.load_state_dict(state, strict=False)
            if missing:
                raise BackboneUnavailableError(
                    f"weights file {weights_path} lacks {len(missing)} tensors, e.g. {missing[:3]}"
                )
        self.net = net
        cfg = getattr(net, "pretrained_cfg", {}) or {}
        mean = cfg.get("mean", (0.485, 0.456, 0.406))
        std = cfg.get("std", (0.229, 0.224, 0.225))
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float32).view(1, 3, 1, 1))

    def forward(self, x):
        return self.net.forward_features((x - self.mean) / self.std)


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    depth: int
    output_hw: Callable[[int], int]
    factory: Callable[[bool, str | Path | None], nn.Module]
    timm_name: str | None = None


def _timm_factory(timm_name: str):
    return lambda pretrained, weights_path: TimmBackbone(timm_name, pretrained, weights_path)


def _toy_factory(pretrained, weights_path):
    if pretrained:
        raise ConfigError("toyconv has no published weights; use pretrained=false")
    return ToyConv()


BACKBONES: dict[str, BackboneSpec] = {
    "toyconv": BackboneSpec("toyconv", 64, _toyconv_hw, _toy_factory),
    "densenet201": BackboneSpec("densenet201", 1920, _densenet_hw, _timm_factory("densenet201"), "densenet201"),
    "inceptionv3": BackboneSpec("inceptionv3", 2048, _inception_hw, _timm_factory("inception_v3"), "inception_v3"),
    "resnet152v2": BackboneSpec("resnet152v2", 2048, lambda s: _halve_ceil(s, 5),
                                _timm_factory("resnetv2_152"), "resnetv2_152"),
    "seresnet152": BackboneSpec("seresnet152", 2048, lambda s: _halve_ceil(s, 5),
                                _timm_factory("seresnet152"), "seresnet152"),
    "xception": BackboneSpec("xception", 2048, _xception_hw, _timm_factory("legacy_xception"), "legacy_xception"),
}

IMAGENET_CLASSES = 1000


class Backbone(nn.Module):
    def __init__(self, spec: BackboneSpec, module: nn.Module, pretrained: bool):
        super().__init__()
        self.spec = spec
        self.module = module
        self.pretrained = pretrained

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def depth(self) -> int:
        return self.spec.depth

    def feature_shape(self, input_size: int) -> tuple[int, int, int]:
        hw = self.spec.output_hw(input_size)
        return (hw, hw, self.spec.depth)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    @property
    def imagenet_parameter_count(self) -> int:
        """Count including the 1000-way ImageNet classifier, the figure usually quoted for a network."""
        if self.spec.timm_name is None:
            return self.parameter_count
        return self.parameter_count + self.depth * IMAGENET_CLASSES + IMAGENET_CLASSES

    def forward(self, x):
        return self.module(x)


def build_backbone(name: str, pretrained: bool = False,
                   weights_path: str | Path | None = None) -> Backbone:
    try:
        spec = BACKBONES[name]
    except KeyError:
        raise ConfigError(f"unknown backbone {name!r}; choose from {sorted(BACKBONES)}") from None
    return Backbone(spec, spec.factory(pretrained, weights_path), pretrained)


# --- classifier ------------------------------------------------------------

class Classifier(nn.Module):
    def __init__(self, backbone: Backbone, num_classes: int, dropout_rate: float = 0.3,
                 input_size: int = 224):
        super().__init__()
        if not 0.0 <= dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
        if num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
        self.backbone = backbone
        self.num_classes = num_classes
        self.dropout_rate = dropout_rate
        self.input_size = input_size
        d = backbone.depth
        self.bn = nn.BatchNorm1d(d, eps=BN_EPSILON)
        self.dropout = nn.Dropout(dropout_rate)
        self.fc = nn.Linear(d, num_classes)
        self.phase = "full_finetune"
        set_trainable_phase(self, "head_only")

    def head_parameters(self):
        return [*self.bn.parameters(), *self.fc.parameters()]

    def train(self, mode: bool = True):
        super().train(mode)
        # a frozen trunk keeps its normalization statistics
        if self.phase == "head_only":
            self.backbone.eval()
        return self

    def check_input(self, x: torch.Tensor) -> None:
        expected = (3, self.input_size, self.input_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"expected batch of shape (N, {expected[0]}, {expected[1]}, {expected[2]}), "
                             f"got {tuple(x.shape)}")

    def features(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.backbone(x)

    def head(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.fc(self.dropout(self.bn(pooled)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).mean(dim=(2, 3)))

    def head_params(self) -> "HeadParams":
        t = lambda v: v.detach().cpu().double().numpy().copy()  # noqa: E731
        return HeadParams(
            weight=t(self.fc.weight).T, bias=t(self.fc.bias),
            bn_gain=t(self.bn.weight), bn_shift=t(self.bn.bias),
            bn_running_mean=t(self.bn.running_mean), bn_running_variance=t(self.bn.running_var),
            dropout_rate=self.dropout_rate,
        )

    def describe(self) -> dict:
        return {
            "backbone": self.backbone.name,
            "pretrained": self.backbone.pretrained,
            "num_classes": self.num_classes,
            "depth": self.backbone.depth,
            "dropout_rate": self.dropout_rate,
            "input_size": self.input_size,
            "phase": self.phase,
            "bn_epsilon": BN_EPSILON,
        }


def build_classifier(backbone: str, num_classes: int, dropout_rate: float = 0.3,
                     input_size: int = 224, pretrained: bool = False,
                     weights_path: str | Path | None = None, seed: int | None = None) -> Classifier:
    if seed is not None:
        torch.manual_seed(seed)
    return Classifier(build_backbone(backbone, pretrained, weights_path), num_classes,
                      dropout_rate, input_size)


def set_trainable_phase(classifier: Classifier, phase: str) -> Classifier:
    if phase not in PHASES:
        raise ConfigError(f"phase must be one of {PHASES}, got {phase!r}")
    classifier.phase = phase
    for p in classifier.backbone.parameters():
        p.requires_grad_(phase == "full_finetune")
    for p in classifier.head_parameters():
        p.requires_grad_(True)
    classifier.train(classifier.training)
    return classifier


def backbone_vector(classifier: Classifier) -> torch.Tensor:
    """All backbone parameters and buffers flattened into one vector."""
    state = classifier.backbone.state_dict()
    return torch.cat([v.detach().reshape(-1).double() for v in state.values() if v.is_floating_point()])


def to_batch(batch, input_size: int | None = None) -> torch.Tensor:
    """Convert channel-last numpy images in [0, 1] to an NCHW float32 tensor."""
    if isinstance(batch, torch.Tensor):
        return batch.float()
    arr = np.asarray(batch, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ShapeError(f"expected (N, H, W, 3) images, got shape {arr.shape}")
    if input_size is not None and arr.shape[1:3] != (input_size, input_size):
        raise ShapeError(f"expected {input_size}x{input_size} inputs, got {arr.shape[1]}x{arr.shape[2]}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


@torch.no_grad()
def extract_features(classifier: Classifier, batch) -> np.ndarray:
    """Feature maps ``(N, h, w, d)`` in inference mode."""
    was_training = classifier.training
    classifier.eval()
    try:
        x = to_batch(batch, classifier.input_size)
        return classifier.features(x).permute(0, 2, 3, 1).double().numpy()
    finally:
        classifier.train(was_training)


@torch.no_grad()
def predict(classifier: Classifier, batch, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    was_training = classifier.training
    classifier.eval()
    try:
        x = to_batch(batch, classifier.input_size)
        classifier.check_input(x)
        logits = torch.cat([classifier(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])
    finally:
        classifier.train(was_training)
    probs = softmax(logits.double().numpy())
    # np.argmax returns the first maximum, i.e. the lowest index on ties
    return probs, np.argmax(probs, axis=-1)


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(classifier: Classifier, directory: str | Path, config_hash: str = "") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "checkpoint_best.pt"
    torch.save(classifier.state_dict(), path)
    meta = classifier.describe() | {"config_hash": config_hash}
    (directory / "head_config.json").write_text(json.dumps(meta, indent=1) + "\n")
    return path


def load_checkpoint(directory: str | Path) -> Classifier:
    directory = Path(directory)
    meta = json.loads((directory / "head_config.json").read_text())
    clf = build_classifier(meta["backbone"], meta["num_classes"], meta["dropout_rate"],
                           meta["input_size"], pretrained=False)
    clf.load_state_dict(torch.load(directory / "checkpoint_best.pt", map_location="cpu", weights_only=True))
    set_trainable_phase(clf, meta["phase"])
    return clf.eval()


def config_digest(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


# --- numpy reference head --------------------------------------------------

@dataclass
class HeadParams:
    weight: np.ndarray  # (d, num_classes)
    bias: np.ndarray
    bn_gain: np.ndarray
    bn_shift: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_variance: np.ndarray
    dropout_rate: float = 0.0
    bn_epsilon: float = BN_EPSILON

    def __post_init__(self):
        d, c = np.shape(self.weight)
        for name in ("bn_gain", "bn_shift", "bn_running_mean", "bn_running_variance"):
            if np.shape(getattr(self, name)) != (d,):
                raise ShapeError(f"{name} must have length {d}")
        if np.shape(self.bias) != (c,):
            raise ShapeError(f"bias must have length {c}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if np.any(np.asarray(self.bn_running_variance) <= 0):
            raise ConfigError("bn_running_variance must be positive")

    @property
    def depth(self) -> int:
        return self.weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def identity_bn(cls, weight, bias, dropout_rate: float = 0.0) -> "HeadParams":
        weight = np.asarray(weight, dtype=np.float64)
        d = weight.shape[0]
        return cls(weight, np.asarray(bias, dtype=np.float64), np.ones(d), np.zeros(d),
                   np.zeros(d), np.ones(d), dropout_rate)


def global_average_pool(feature_map) -> np.ndarray:
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim < 3 or min(fm.shape[-3:]) < 1:
        raise ShapeError(f"feature map must be (..., h, w, d), got {fm.shape}")
    return fm.mean(axis=(-3, -2))


def inverted_dropout(x, rate: float, draw: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if rate == 0.0:
        return x.copy()
    keep = draw.random(x.shape) >= rate
    return np.where(keep, x / (1.0 - rate), 0.0)


def head_forward(pooled, head: HeadParams, mode: str = "infer",
                 draw: np.random.Generator | None = None) -> np.ndarray:
    """Logits for a pooled vector ``(d,)`` or batch ``(n, d)``."""
    g = np.asarray(pooled, dtype=np.float64)
    if g.shape[-1] != head.depth:
        raise ShapeError(f"pooled length {g.shape[-1]} does not match head depth {head.depth}")
    if mode == "infer":
        mean, var = head.bn_running_mean, head.bn_running_variance
    elif mode == "train":
        if draw is None:
            raise ConfigError("train mode needs a random generator for dropout")
        batch = np.atleast_2d(g)
        mean, var = batch.mean(axis=0), batch.var(axis=0)
    else:
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = (g - mean) / np.sqrt(var + head.bn_epsilon) * head.bn_gain + head.bn_shift
    if mode == "train":
        x = inverted_dropout(x, head.dropout_rate, draw)
    return x @ head.weight + head.bias


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input contains non-finite values")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
