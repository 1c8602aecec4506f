"""Built-in CNN zoo plus the calibration images the export indices point into.

Every factory rebuilds the same network bit-for-bit: weights come from a
fixed torch seed, and BatchNorm affine parameters and running statistics are
drawn as well, because a freshly initialized BatchNorm is an identity map in
eval mode and would make the preBN and postBN hook stages indistinguishable.

The calibration set is a seeded synthetic tensor dataset. The exporter's job
is capture and serialization, not data loading; pass ``data`` with an .npz
file (arrays ``images`` [M, C, H, W] and ``labels`` [M]) to export against
real inputs instead.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ExportError

N_IMAGES = 256


class _Toy2(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1, bias=False)
        self.conv2 = nn.Conv2d(8, 12, 3, padding=1, bias=False)
        self.head = nn.Linear(12, 10)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = F.relu(self.conv2(x))
        x = x.mean(dim=(2, 3))
        return self.head(x)


class _ToyBN(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 6, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(6)
        self.conv2 = nn.Conv2d(6, 10, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(10)
        self.head = nn.Linear(10, 10)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        x = x.mean(dim=(2, 3))
        return self.head(x)


class _ToyRes(nn.Module):
    """Stem plus one residual branch; the sum ties conv1 and conv2 channels."""

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1, bias=False)
        self.conv2 = nn.Conv2d(8, 8, 3, padding=1, bias=False)
        self.conv3 = nn.Conv2d(8, 12, 3, padding=1, bias=False)
        self.head = nn.Linear(12, 10)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = x + F.relu(self.conv2(x))
        x = F.relu(self.conv3(x))
        x = x.mean(dim=(2, 3))
        return self.head(x)


class _ToyDW(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1, bias=False)
        self.dw = nn.Conv2d(8, 8, 3, padding=1, groups=8, bias=False)
        self.pw = nn.Conv2d(8, 12, 1, bias=False)
        self.head = nn.Linear(12, 10)

    def forward(self, x):
        x = F.relu(self.conv1(x))
        x = F.relu(self.dw(x))
        x = F.relu(self.pw(x))
        x = x.mean(dim=(2, 3))
        return self.head(x)


@dataclass(frozen=True)
class ModelSpec:
    build: type
    input_shape: tuple
    n_classes: int
    seed: int


REGISTRY = {
    "toy2": ModelSpec(_Toy2, (3, 16, 16), 10, seed=11),
    "toy_bn": ModelSpec(_ToyBN, (3, 16, 16), 10, seed=12),
    "toy_res": ModelSpec(_ToyRes, (3, 16, 16), 10, seed=13),
    "toy_dw": ModelSpec(_ToyDW, (3, 16, 16), 10, seed=14),
}


def _shake_batchnorm(model, seed):
    gen = torch.Generator().manual_seed(seed + 1)
    for mod in model.modules():
        if isinstance(mod, nn.BatchNorm2d):
            n = mod.num_features
            with torch.no_grad():
                mod.weight.copy_(0.5 + torch.rand(n, generator=gen))
                mod.bias.copy_(0.2 * torch.randn(n, generator=gen))
                mod.running_mean.copy_(0.5 * torch.randn(n, generator=gen))
                mod.running_var.copy_(0.5 + 1.5 * torch.rand(n, generator=gen))


def build_model(name, ckpt=None):
    """Instantiate a registry model in eval mode, optionally from a checkpoint."""
    spec = REGISTRY.get(name)
    if spec is None:
        raise ExportError(f"unknown model '{name}'; available: {', '.join(sorted(REGISTRY))}")
    torch.manual_seed(spec.seed)
    model = spec.build()
    _shake_batchnorm(model, spec.seed)
    if ckpt is not None:
        try:
            state = torch.load(ckpt, map_location="cpu", weights_only=True)
        except (OSError, RuntimeError, ValueError) as exc:
            raise ExportError(f"checkpoint '{ckpt}' does not load: {exc}") from exc
        try:
            model.load_state_dict(state, strict=True)
        except RuntimeError as exc:
            raise ExportError(f"checkpoint '{ckpt}' does not match model '{name}': {exc}") from exc
    model.eval()
    return model, spec


def calibration_source(name, data_path=None):
    """Images [M, C, H, W] float32 and labels [M] int64 for a model.

    The builtin set is deterministic in the registry seed. An .npz override
    must contain arrays named ``images`` and ``labels`` with matching
    leading dimensions.
    """
    spec = REGISTRY.get(name)
    if spec is None:
        raise ExportError(f"unknown model '{name}'; available: {', '.join(sorted(REGISTRY))}")
    if data_path is not None:
        try:
            with np.load(data_path) as npz:
                images = np.asarray(npz["images"], dtype=np.float32)
                labels = np.asarray(npz["labels"], dtype=np.int64)
        except (OSError, KeyError, ValueError) as exc:
            raise ExportError(f"calibration data '{data_path}' does not load: {exc}") from exc
        if images.ndim != 4 or images.shape[1:] != spec.input_shape:
            raise ExportError(
                f"calibration images shaped {images.shape} do not fit model input {spec.input_shape}"
            )
        if labels.shape != (images.shape[0],):
            raise ExportError("calibration labels must be one integer per image")
        return images, labels
    rng = np.random.default_rng(spec.seed)
    images = rng.standard_normal((N_IMAGES, *spec.input_shape), dtype=np.float32)
    labels = rng.integers(0, spec.n_classes, size=N_IMAGES)
    return images, labels
