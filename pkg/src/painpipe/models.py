"""Network builders, softmax inference, and parameter/FLOP accounting.

Three architectures are supported plus a deliberately small test network:

  vgg16            five conv stages (2,2,3,3,3) at widths (64,128,256,512,512),
                   two 4096-d fully connected layers, then the class head
  resnet18         7x7/2 stem, basic residual blocks per stage (2,2,2,2)
  resnet34         same stem, blocks per stage (3,4,6,3)
  reduced_test_net three-conv classifier sized for <1 minute CPU training

`width_multiplier` scales every channel width (and the VGG hidden widths),
which shrinks parameter counts roughly quadratically for desk-scale runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

MODEL_NAMES = ("vgg16", "resnet18", "resnet34", "reduced_test_net")

_VGG_STAGES = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))
_RESNET_BLOCKS = {"resnet18": (2, 2, 2, 2), "resnet34": (3, 4, 6, 3)}
_RESNET_WIDTHS = (64, 128, 256, 512)


@dataclass(frozen=True)
class ModelSpec:
    """Declarative architecture description."""

    name: str
    n_classes: int = 17
    input_size: int = 224
    width_multiplier: float = 1.0

    def __post_init__(self) -> None:
        if self.name not in MODEL_NAMES:
            raise ValueError(f"unknown model name {self.name!r}; expected one of {MODEL_NAMES}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.input_size < 32:
            raise ValueError(f"input_size must be >= 32, got {self.input_size}")
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ValueError(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")


@dataclass(frozen=True)
class CostReport:
    parameter_count: int
    flop_count: int

    def __post_init__(self) -> None:
        if self.parameter_count <= 0 or self.flop_count <= 0:
            raise ValueError("parameter and FLOP counts must be positive")


def _scaled(channels: int, multiplier: float) -> int:
    return max(1, int(round(channels * multiplier)))


class BasicBlock(nn.Module):
    """Two 3x3 convolutions with a shortcut; 1x1 projection when shapes change."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.downsample = None

    @property
    def has_identity_shortcut(self) -> bool:
        return self.downsample is None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class ResNet(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        blocks = _RESNET_BLOCKS[spec.name]
        widths = [_scaled(w, spec.width_multiplier) for w in _RESNET_WIDTHS]

        self.stem = nn.Conv2d(3, widths[0], 7, stride=2, padding=3, bias=False)
        self.stem_bn = nn.BatchNorm2d(widths[0])
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)

        layers = []
        in_channels = widths[0]
        for stage, (n_blocks, out_channels) in enumerate(zip(blocks, widths)):
            for b in range(n_blocks):
                stride = 2 if (stage > 0 and b == 0) else 1
                layers.append(BasicBlock(in_channels, out_channels, stride=stride))
                in_channels = out_channels
        self.blocks = nn.Sequential(*layers)
        self.head_pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(in_channels, spec.n_classes)

    def residual_blocks(self) -> list[BasicBlock]:
        return [m for m in self.blocks if isinstance(m, BasicBlock)]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.pool(F.relu(self.stem_bn(self.stem(x))))
        x = self.blocks(x)
        x = torch.flatten(self.head_pool(x), 1)
        return self.fc(x)


class VGG16(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        features: list[nn.Module] = []
        in_channels = 3
        spatial = spec.input_size
        for n_convs, width in _VGG_STAGES:
            out_channels = _scaled(width, spec.width_multiplier)
            for _ in range(n_convs):
                features.append(nn.Conv2d(in_channels, out_channels, 3, padding=1))
                features.append(nn.ReLU(inplace=True))
                in_channels = out_channels
            features.append(nn.MaxPool2d(2, stride=2))
            spatial //= 2
        self.features = nn.Sequential(*features)
        hidden = _scaled(4096, spec.width_multiplier)
        self.classifier = nn.Sequential(
            nn.Linear(in_channels * spatial * spatial, hidden),
            nn.ReLU(inplace=True),
            nn.Dropout(0.5),
            nn.Linear(hidden, hidden),
            nn.ReLU(inplace=True),
            nn.Dropout(0.5),
            nn.Linear(hidden, spec.n_classes),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.features(x)
        x = torch.flatten(x, 1)
        return self.classifier(x)


class ReducedTestNet(nn.Module):
    """Small three-conv classifier for fast CPU experiments (48-64 px inputs)."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        w1 = _scaled(16, spec.width_multiplier)
        w2 = _scaled(32, spec.width_multiplier)
        w3 = _scaled(64, spec.width_multiplier)
        self.features = nn.Sequential(
            nn.Conv2d(3, w1, 3, padding=1),
            nn.BatchNorm2d(w1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(w1, w2, 3, padding=1),
            nn.BatchNorm2d(w2),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(w2, w3, 3, padding=1),
            nn.BatchNorm2d(w3),
            nn.ReLU(inplace=True),
        )
        self.head_pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(w3, spec.n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.features(x)
        x = torch.flatten(self.head_pool(x), 1)
        return self.fc(x)


def _init_weights(net: nn.Module) -> None:
    for module in net.modules():
        if isinstance(module, nn.Conv2d):
            nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.BatchNorm2d):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, mean=0.0, std=0.01)
            nn.init.zeros_(module.bias)


def build(spec: ModelSpec, seed: int) -> nn.Module:
    """Construct the network for a spec with seeded He-style initialization.

    The global torch RNG state is forked so building a model does not
    disturb unrelated randomness.
    """
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        if spec.name in _RESNET_BLOCKS:
            net: nn.Module = ResNet(spec)
        elif spec.name == "vgg16":
            net = VGG16(spec)
        else:
            net = ReducedTestNet(spec)
        _init_weights(net)
    return net


def predict_proba(net: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    """Run the network in eval mode and return softmax class probabilities.

    The predicted class for each row is the argmax of its probabilities.
    """
    spec: ModelSpec = net.spec
    expected = (batch.shape[0] if batch.ndim == 4 else -1, 3, spec.input_size, spec.input_size)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != expected[1:]:
        raise ValueError(f"expected batch of shape (N, 3, {spec.input_size}, {spec.input_size}), got {tuple(batch.shape)}")
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            probs = torch.softmax(net(batch), dim=1)
    finally:
        net.train(was_training)
    return probs


def count_parameters(net: nn.Module) -> int:
    """Total trainable parameter elements."""
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def count_flops(net: nn.Module, input_size: int) -> int:
    """Forward FLOPs at the given square input size, one multiply-accumulate
    counted as one operation.

    Convolution: out_h * out_w * out_c * (k^2 * in_c / groups).
    Fully connected: in_features * out_features.
    Activations, pooling, and batch normalization are excluded.
    """
    totals: list[int] = []
    hooks = []

    def conv_hook(module: nn.Conv2d, inputs, output) -> None:
        in_c = inputs[0].shape[1]
        _, out_c, out_h, out_w = output.shape
        k = module.kernel_size[0] * module.kernel_size[1]
        totals.append(out_h * out_w * out_c * (k * in_c // module.groups))

    def linear_hook(module: nn.Linear, inputs, output) -> None:
        totals.append(module.in_features * module.out_features)

    for module in net.modules():
        if isinstance(module, nn.Conv2d):
            hooks.append(module.register_forward_hook(conv_hook))
        elif isinstance(module, nn.Linear):
            hooks.append(module.register_forward_hook(linear_hook))
    try:
        was_training = net.training
        net.eval()
        with torch.no_grad():
            net(torch.zeros(1, 3, input_size, input_size))
        net.train(was_training)
    finally:
        for handle in hooks:
            handle.remove()
    return int(sum(totals))


def cost_report(spec: ModelSpec, seed: int = 0) -> CostReport:
    net = build(spec, seed=seed)
    return CostReport(
        parameter_count=count_parameters(net),
        flop_count=count_flops(net, spec.input_size),
    )
