"""Bi-channel model zoo.

Restoration networks (small U-Net and small RDN) expose their encoder tap
``e(x)``; the residual classifier exposes its globally pooled features
``c(x)``; the transfer branches map both into a shared ``K``-dimensional
embedding space.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, InvalidInput

VARIANTS = ("unet_small", "rdn_small")


@dataclass(frozen=True)
class ArchConfig:
    unet_base: int = 8
    unet_levels: int = 3
    rdn_features: int = 16
    rdn_growth: int = 8
    rdn_blocks: int = 3
    rdn_layers: int = 4
    cls_base: int = 16
    cls_stages: int = 3
    embed_dim: int = 64

    def validate(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{f.name} must be a positive integer, got {value!r}")

    @property
    def downsample_factor(self) -> int:
        return 2 ** max(self.unet_levels, self.cls_stages)

    def unet_channels(self) -> int:
        return self.unet_base * 2 ** self.unet_levels

    def classifier_channels(self) -> int:
        return self.cls_base * 2 ** (self.cls_stages - 1)

    def encoder_channels(self, variant: str) -> int:
        if variant == "unet_small":
            return self.unet_channels()
        if variant == "rdn_small":
            return self.rdn_features
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown architecture keys {sorted(unknown)}")
        return cls(**data)


def init_weights(module: nn.Module):
    """He (fan-in) init for convolutions, Glorot for the affine heads, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
        elif isinstance(m, nn.Linear):
            # no ReLU follows a head; He scaling would start with saturated logits
            nn.init.xavier_uniform_(m.weight)
        else:
            continue
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    return module


def conv3x3(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


def group_norm(channels: int) -> nn.GroupNorm:
    # batch-independent, so train and inference behave identically at batch size 4
    return nn.GroupNorm(min(4, channels), channels)


class DoubleConv(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(conv3x3(cin, cout), group_norm(cout), nn.ReLU(inplace=True),
                         conv3x3(cout, cout), group_norm(cout), nn.ReLU(inplace=True))


class UNetSmall(nn.Module):
    """U-Net with ``levels`` pooled encoder stages and a mirrored decoder.

    The encoder tap is the bottleneck: the deepest feature map before any
    upsampling, with ``base * 2**levels`` channels at ``1/2**levels`` resolution.
    """

    def __init__(self, base: int = 8, levels: int = 3):
        super().__init__()
        chans = [base * 2 ** i for i in range(levels)]
        self.down = nn.ModuleList()
        cin = 1
        for c in chans:
            self.down.append(DoubleConv(cin, c))
            cin = c
        self.bottleneck = DoubleConv(cin, base * 2 ** levels)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        cin = base * 2 ** levels
        for c in reversed(chans):
            self.up.append(nn.ConvTranspose2d(cin, c, 2, stride=2))
            self.dec.append(DoubleConv(2 * c, c))
            cin = c
        self.head = nn.Conv2d(base, 1, 1)
        self.out_channels = base * 2 ** levels

    def encode(self, x):
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        return self.bottleneck(x), skips

    def encode_tap(self, x):
        return self.encode(x)[0]

    def forward(self, x):
        z, skips = self.encode(x)
        y = z
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            y = dec(torch.cat([up(y), skip], dim=1))
        return self.head(y), z


class DenseLayer(nn.Module):
    def __init__(self, cin: int, growth: int):
        super().__init__()
        self.conv = conv3x3(cin, growth)

    def forward(self, x):
        return torch.cat([x, F.relu(self.conv(x))], dim=1)


class ResidualDenseBlock(nn.Module):
    """Densely connected convs, 1x1 local feature fusion and a local residual."""

    def __init__(self, features: int, growth: int, layers: int):
        super().__init__()
        self.layers = nn.Sequential(*[DenseLayer(features + i * growth, growth) for i in range(layers)])
        self.fuse = nn.Conv2d(features + layers * growth, features, 1)

    def forward(self, x):
        return x + self.fuse(self.layers(x))


class RDNSmall(nn.Module):
    """Residual dense network for same-size restoration.

    Shallow features -> cascaded RDBs -> global feature fusion (1x1 then 3x3)
    -> global residual with the first shallow feature map. That fused map is
    the encoder tap; a single conv reconstructs the image from it.
    """

    def __init__(self, features: int = 16, growth: int = 8, blocks: int = 3, layers: int = 4):
        super().__init__()
        self.sfe1 = conv3x3(1, features)
        self.sfe2 = conv3x3(features, features)
        self.blocks = nn.ModuleList([ResidualDenseBlock(features, growth, layers) for _ in range(blocks)])
        self.gff = nn.Sequential(nn.Conv2d(blocks * features, features, 1), conv3x3(features, features))
        self.recon = conv3x3(features, 1)
        self.out_channels = features

    def encode(self, x):
        f1 = self.sfe1(x)
        h = self.sfe2(f1)
        outs = []
        for block in self.blocks:
            h = block(h)
            outs.append(h)
        return self.gff(torch.cat(outs, dim=1)) + f1

    encode_tap = encode

    def forward(self, x):
        z = self.encode(x)
        return self.recon(z), z


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = conv3x3(cin, cout, stride)
        self.norm1 = group_norm(cout)
        self.conv2 = conv3x3(cout, cout)
        self.norm2 = group_norm(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Conv2d(cin, cout, 1, stride=stride)

    def forward(self, x):
        out = self.norm2(self.conv2(F.relu(self.norm1(self.conv1(x)))))
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + identity)


class ResNetEncoder(nn.Module):
    """Stem conv followed by residual stages; every stage halves the resolution."""

    def __init__(self, base: int = 8, stages: int = 3):
        super().__init__()
        self.stem = nn.Sequential(conv3x3(1, base), group_norm(base), nn.ReLU(inplace=True))
        blocks = []
        cin = base
        for i in range(stages):
            cout = base * 2 ** i
            blocks.append(BasicBlock(cin, cout, stride=2))
            cin = cout
        self.stages = nn.Sequential(*blocks)
        self.out_channels = cin

    def forward(self, x):
        return self.stages(self.stem(x))


class ResNetClassifier(nn.Module):
    def __init__(self, base: int = 8, stages: int = 3):
        super().__init__()
        self.encoder = ResNetEncoder(base, stages)
        self.fc = nn.Linear(self.encoder.out_channels, 1)
        self.out_channels = self.encoder.out_channels

    def features(self, x):
        return self.encoder(x).mean(dim=(2, 3))

    def forward(self, x):
        pooled = self.features(x)
        return self.fc(pooled).squeeze(1), pooled


class TransferBranch(nn.Module):
    """``P``: global average pool then affine (spatial maps); ``D``: affine (pooled vectors)."""

    def __init__(self, side: str, in_dim: int, embed_dim: int = 64):
        super().__init__()
        if side not in ("P", "D"):
            raise ConfigError(f"branch side must be 'P' or 'D', got {side!r}")
        self.side = side
        self.in_dim = in_dim
        self.linear = nn.Linear(in_dim, embed_dim)

    def forward(self, feats):
        if self.side == "P":
            if feats.dim() != 4 or feats.shape[1] != self.in_dim:
                raise InvalidInput(f"P expects (N, {self.in_dim}, H, W) features, got {tuple(feats.shape)}")
            feats = feats.mean(dim=(2, 3))
        elif feats.dim() != 2 or feats.shape[1] != self.in_dim:
            raise InvalidInput(f"D expects (N, {self.in_dim}) features, got {tuple(feats.shape)}")
        return self.linear(feats)


class AuxDecoder(nn.Module):
    """Lightweight restoration head on the classifier encoder (fine-tuning and multi-task baselines)."""

    def __init__(self, in_channels: int, stages: int):
        super().__init__()
        layers = []
        c = in_channels
        for _ in range(stages):
            nxt = max(c // 2, 4)
            layers += [nn.ConvTranspose2d(c, nxt, 2, stride=2), nn.ReLU(inplace=True)]
            c = nxt
        layers.append(nn.Conv2d(c, 1, 3, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, z):
        return self.body(z)


class ModelBundle(nn.Module):
    """Restoration network, classifier and the two transfer branches.

    Baselines use the same container with ``restoration`` and branches unset and,
    where needed, an ``aux_decoder`` attached to the classifier encoder.
    """

    def __init__(self, variant, arch: ArchConfig, restoration=None, classifier=None,
                 branch_p=None, branch_d=None, aux_decoder=None):
        super().__init__()
        self.variant = variant
        self.arch = arch
        self.restoration = restoration
        self.classifier = classifier
        self.branch_p = branch_p
        self.branch_d = branch_d
        self.aux_decoder = aux_decoder

    def arch_dict(self) -> dict:
        parts = [name for name in ("restoration", "classifier", "branch_p", "branch_d", "aux_decoder")
                 if getattr(self, name) is not None]
        return {"variant": self.variant, "arch": self.arch.to_dict(), "parts": parts}


def build_restoration(variant: str, arch: ArchConfig) -> nn.Module:
    if variant == "unet_small":
        return UNetSmall(arch.unet_base, arch.unet_levels)
    if variant == "rdn_small":
        return RDNSmall(arch.rdn_features, arch.rdn_growth, arch.rdn_blocks, arch.rdn_layers)
    raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def build_models(variant: str = "unet_small", arch: ArchConfig | None = None, seed: int | None = None) -> ModelBundle:
    """Construct and initialize a full bi-channel bundle.

    With ``seed`` given, initialization uses a private generator so the global
    torch RNG state is left alone.
    """
    arch = arch or ArchConfig()
    arch.validate()
    c_e = arch.encoder_channels(variant)
    with _seeded(seed):
        classifier = _initial_classifier(arch)
        restoration = init_weights(build_restoration(variant, arch))
        branch_p = init_weights(TransferBranch("P", c_e, arch.embed_dim))
        branch_d = init_weights(TransferBranch("D", classifier.out_channels, arch.embed_dim))
        bundle = ModelBundle(variant, arch, restoration, classifier, branch_p, branch_d)
    return bundle


def build_baseline_models(kind: str, arch: ArchConfig | None = None, seed: int | None = None) -> ModelBundle:
    arch = arch or ArchConfig()
    arch.validate()
    if kind not in ("plain", "finetune_ssl", "multitask"):
        raise ConfigError(f"unknown baseline {kind!r}")
    with _seeded(seed):
        classifier = _initial_classifier(arch)
        aux = None
        if kind != "plain":
            aux = init_weights(AuxDecoder(classifier.out_channels, arch.cls_stages))
        bundle = ModelBundle(kind, arch, classifier=classifier, aux_decoder=aux)
    return bundle


def _initial_classifier(arch: ArchConfig) -> "ResNetClassifier":
    # drawn first from the seeded stream so every method starts from the same classifier
    return init_weights(ResNetClassifier(arch.cls_base, arch.cls_stages))


class _seeded:
    def __init__(self, seed):
        self.seed = seed

    def __enter__(self):
        if self.seed is not None:
            self._state = torch.random.get_rng_state()
            torch.manual_seed(self.seed)

    def __exit__(self, *exc):
        if self.seed is not None:
            torch.random.set_rng_state(self._state)


def _check_batch(x, expected_hw_multiple: int | None = None) -> torch.Tensor:
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(x, dtype=torch.float32)
    if x.dim() == 3:
        x = x.unsqueeze(1)
    if x.dim() != 4 or x.shape[1] != 1 or x.shape[0] == 0:
        raise InvalidInput(f"expected a non-empty batch of shape (N, 1, H, W), got {tuple(x.shape)}")
    if expected_hw_multiple and (x.shape[2] % expected_hw_multiple or x.shape[3] % expected_hw_multiple):
        raise InvalidInput(f"image size {tuple(x.shape[2:])} must be divisible by {expected_hw_multiple}")
    return x


def pretext_forward(model: nn.Module, batch) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns ``(restored, encoder_features)``; restored has the input's shape."""
    multiple = 2 ** len(model.down) if isinstance(model, UNetSmall) else None
    x = _check_batch(batch, multiple)
    return model(x)


def classifier_forward(model: ResNetClassifier, batch) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns ``(logits, pooled_features)`` with shapes (N,) and (N, C_c)."""
    return model(_check_batch(batch))


def project(branch: TransferBranch, features) -> torch.Tensor:
    if not isinstance(features, torch.Tensor):
        features = torch.as_tensor(features, dtype=branch.linear.weight.dtype)
    return branch(features)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
