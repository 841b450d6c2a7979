"""Time-domain masking separator: learned encoder, dilated-conv mask
estimator, learned decoder.

The encoder is a strided 1-D convolution replacing the STFT, the separator
is a temporal convolutional network (TCN) of dilated blocks with residual
and skip paths estimating one multiplicative mask per source, and the
decoder is a transposed convolution performing overlap-add reconstruction.

Hyperparameter symbols follow the usual convention for this architecture:

    N: number of encoder filters       L: encoder kernel length (samples)
    B: bottleneck channels             H: conv-block channels
    P: depthwise kernel size           X: blocks per repeat (dilations 1..2^(X-1))
    R: repeats                         C: number of sources
"""

from __future__ import annotations

import io
import json
import re
import zipfile
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import Waveform
from .errors import CheckpointMismatchError, ShapeError, TooShortError

EPS = 1e-8


@dataclass
class SeparatorConfig:
    """All separator hyperparameters.

    ``kernel_len`` must be even (frames overlap by 50%); ``num_sources`` is
    fixed at 2 for two-speaker calls but any C >= 2 builds.
    """

    num_filters: int = 512        # N
    kernel_len: int = 16          # L
    bottleneck_channels: int = 128  # B
    conv_channels: int = 512      # H
    kernel_size: int = 3          # P
    blocks_per_repeat: int = 8    # X
    repeats: int = 3              # R
    num_sources: int = 2          # C
    mask_nonlinearity: str = "sigmoid"  # sigmoid | softmax
    norm_kind: str = "gLN"        # gLN | cLN | none

    def __post_init__(self):
        ints = (
            self.num_filters, self.kernel_len, self.bottleneck_channels,
            self.conv_channels, self.kernel_size, self.blocks_per_repeat, self.repeats,
        )
        if any(v < 1 for v in ints):
            raise ValueError(f"all size hyperparameters must be >= 1, got {self}")
        if self.kernel_len % 2 != 0:
            raise ValueError(f"kernel_len must be even for 50% overlap, got {self.kernel_len}")
        if self.num_sources < 2:
            raise ValueError(f"num_sources must be >= 2, got {self.num_sources}")
        if self.mask_nonlinearity not in ("sigmoid", "softmax"):
            raise ValueError(f"unknown mask_nonlinearity {self.mask_nonlinearity!r}")
        if self.norm_kind not in ("gLN", "cLN", "none"):
            raise ValueError(f"unknown norm_kind {self.norm_kind!r}")

    @property
    def stride(self) -> int:
        return self.kernel_len // 2

    @classmethod
    def full(cls) -> "SeparatorConfig":
        """Reference full-size configuration (~5.1 M parameters)."""
        return cls()

    @classmethod
    def toy(cls) -> "SeparatorConfig":
        """Desk-scale preset for CPU tests and experiments."""
        return cls(
            num_filters=64, kernel_len=16, bottleneck_channels=32,
            conv_channels=64, kernel_size=3, blocks_per_repeat=4, repeats=1,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SeparatorConfig":
        return cls(**d)


def receptive_field_frames(cfg: SeparatorConfig) -> int:
    """Closed-form TCN receptive field, in encoder frames.

    One frame plus (P-1)*dilation per block, dilations 1,2,...,2^(X-1)
    repeated R times.
    """
    per_repeat = sum((cfg.kernel_size - 1) * 2 ** i for i in range(cfg.blocks_per_repeat))
    return 1 + cfg.repeats * per_repeat


def receptive_field_seconds(cfg: SeparatorConfig, sample_rate: int) -> float:
    return receptive_field_frames(cfg) * cfg.stride / sample_rate


class GlobalLayerNorm(nn.Module):
    """Layer norm over both channel and time dimensions (non-causal)."""

    def __init__(self, channels):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(1, channels, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1))

    def forward(self, x):
        mean = x.mean(dim=(1, 2), keepdim=True)
        var = ((x - mean) ** 2).mean(dim=(1, 2), keepdim=True)
        return self.gamma * (x - mean) / torch.sqrt(var + EPS) + self.beta


class CumulativeLayerNorm(nn.Module):
    """Causal variant: statistics over channels and all frames up to t."""

    def __init__(self, channels):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(1, channels, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1))

    def forward(self, x):
        b, c, t = x.shape
        counts = torch.arange(1, t + 1, device=x.device, dtype=x.dtype) * c
        cum_sum = x.sum(dim=1).cumsum(dim=1)            # [B, T]
        cum_sq = (x ** 2).sum(dim=1).cumsum(dim=1)      # [B, T]
        mean = (cum_sum / counts).unsqueeze(1)
        var = (cum_sq / counts).unsqueeze(1) - mean ** 2
        return self.gamma * (x - mean) / torch.sqrt(var.clamp_min(0) + EPS) + self.beta


def _make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "gLN":
        return GlobalLayerNorm(channels)
    if kind == "cLN":
        return CumulativeLayerNorm(channels)
    return nn.Identity()


class ConvBlock(nn.Module):
    """One dilated TCN block with residual and skip outputs."""

    def __init__(self, in_channels, hidden_channels, kernel_size, dilation, norm_kind):
        super().__init__()
        padding = (kernel_size - 1) * dilation // 2
        self.in_conv = nn.Conv1d(in_channels, hidden_channels, 1)
        self.in_prelu = nn.PReLU()
        self.in_norm = _make_norm(norm_kind, hidden_channels)
        self.depthwise = nn.Conv1d(
            hidden_channels, hidden_channels, kernel_size,
            padding=padding, dilation=dilation, groups=hidden_channels,
        )
        self.out_prelu = nn.PReLU()
        self.out_norm = _make_norm(norm_kind, hidden_channels)
        self.residual_conv = nn.Conv1d(hidden_channels, in_channels, 1)
        self.skip_conv = nn.Conv1d(hidden_channels, in_channels, 1)

    def forward(self, x):
        y = self.in_norm(self.in_prelu(self.in_conv(x)))
        y = self.out_norm(self.out_prelu(self.depthwise(y)))
        return x + self.residual_conv(y), self.skip_conv(y)


class MaskEstimator(nn.Module):
    """TCN producing one mask per source from the encoder feature map.

    The mask head consumes the sum of all skip paths; the residual stream
    threads through the blocks.
    """

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.cfg = cfg
        self.input_norm = _make_norm(cfg.norm_kind, cfg.num_filters)
        self.bottleneck = nn.Conv1d(cfg.num_filters, cfg.bottleneck_channels, 1)
        blocks = []
        for _ in range(cfg.repeats):
            for x in range(cfg.blocks_per_repeat):
                blocks.append(
                    ConvBlock(
                        cfg.bottleneck_channels, cfg.conv_channels,
                        cfg.kernel_size, dilation=2 ** x, norm_kind=cfg.norm_kind,
                    )
                )
        self.blocks = nn.ModuleList(blocks)
        self.mask_prelu = nn.PReLU()
        self.mask_conv = nn.Conv1d(
            cfg.bottleneck_channels, cfg.num_sources * cfg.num_filters, 1
        )

    def forward(self, features):
        b, n, k = features.shape
        x = self.bottleneck(self.input_norm(features))
        skip_total = torch.zeros_like(x)
        for block in self.blocks:
            x, skip = block(x)
            skip_total = skip_total + skip
        logits = self.mask_conv(self.mask_prelu(skip_total))
        logits = logits.view(b, self.cfg.num_sources, self.cfg.num_filters, k)
        if self.cfg.mask_nonlinearity == "softmax":
            return torch.softmax(logits, dim=1)
        return torch.sigmoid(logits)


class ConvTasNet(nn.Module):
    """End-to-end separator: encode -> estimate masks -> mask -> decode.

    Encoder and decoder are bias-free so zero input maps to zero output.
    """

    def __init__(self, cfg: SeparatorConfig | None = None):
        super().__init__()
        self.cfg = cfg or SeparatorConfig.full()
        c = self.cfg
        self.encoder = nn.Conv1d(1, c.num_filters, c.kernel_len, stride=c.stride, bias=False)
        self.separator = MaskEstimator(c)
        self.decoder = nn.ConvTranspose1d(
            c.num_filters, 1, c.kernel_len, stride=c.stride, bias=False
        )

    def encode(self, mixture: torch.Tensor) -> torch.Tensor:
        """[B, T] -> [B, N, K] with K = floor((T - L) / (L/2)) + 1."""
        if mixture.dim() == 1:
            mixture = mixture.unsqueeze(0)
        if mixture.shape[-1] < self.cfg.kernel_len:
            raise TooShortError(
                f"input of {mixture.shape[-1]} samples shorter than encoder kernel "
                f"({self.cfg.kernel_len})"
            )
        return self.encoder(mixture.unsqueeze(1))

    def estimate_masks(self, features: torch.Tensor) -> torch.Tensor:
        """[B, N, K] -> [B, C, N, K]."""
        return self.separator(features)

    def decode(self, masked_features: torch.Tensor, length: int | None = None) -> torch.Tensor:
        """[B, C, N, K] -> [B, C, T'] via overlap-add; pad/trim to ``length``."""
        if masked_features.dim() != 4 or masked_features.shape[1] != self.cfg.num_sources:
            raise ShapeError(
                f"expected [B, C={self.cfg.num_sources}, N, K], got {tuple(masked_features.shape)}"
            )
        if masked_features.shape[2] != self.cfg.num_filters:
            raise ShapeError(
                f"expected N={self.cfg.num_filters} filters, got {masked_features.shape[2]}"
            )
        b, c, n, k = masked_features.shape
        out = self.decoder(masked_features.reshape(b * c, n, k)).reshape(b, c, -1)
        if length is not None:
            t = out.shape[-1]
            if t >= length:
                out = out[..., :length]
            else:
                out = F.pad(out, (0, length - t))
        return out

    def forward(self, mixture: torch.Tensor) -> torch.Tensor:
        """Separate a mixture [B, T] (or [T]) into [B, C, T] estimates."""
        squeeze = mixture.dim() == 1
        if squeeze:
            mixture = mixture.unsqueeze(0)
        length = mixture.shape[-1]
        if length < self.cfg.kernel_len:
            raise TooShortError(
                f"input of {length} samples shorter than encoder kernel ({self.cfg.kernel_len})"
            )
        stride = self.cfg.stride
        # Right-pad so the strided encoder covers every sample, then trim back.
        remainder = (length - self.cfg.kernel_len) % stride
        if remainder:
            mixture = F.pad(mixture, (0, stride - remainder))
        features = self.encode(mixture)
        masks = self.estimate_masks(features)
        masked = masks * features.unsqueeze(1)
        out = self.decode(masked, length=length)
        return out.squeeze(0) if squeeze else out


def build_model(cfg: SeparatorConfig, seed: int | None = None) -> ConvTasNet:
    """Construct a model; with a seed the random init is deterministic."""
    if seed is not None:
        torch.manual_seed(seed)
    return ConvTasNet(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def separate(model: ConvTasNet, mixture: Waveform) -> list[Waveform]:
    """Run inference on a waveform and return per-source estimates."""
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(np.asarray(mixture.samples, dtype=np.float32))
        est = model(x)
    return [Waveform(est[i].numpy(), mixture.sample_rate) for i in range(est.shape[0])]


# --------------------------------------------------------------------------
# Checkpoints: a zip archive holding config.json plus one .npy per tensor.
# Mismatches are diagnosed tensor-by-tensor instead of failing opaquely.
# --------------------------------------------------------------------------

def save_checkpoint(path, model: ConvTasNet, extra: dict | None = None) -> None:
    state = model.state_dict()
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        header = {"config": model.cfg.to_dict(), "extra": extra or {}}
        zf.writestr("config.json", json.dumps(header, indent=2))
        for name, tensor in state.items():
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy())
            zf.writestr(f"tensors/{name}.npy", buf.getvalue())


def load_checkpoint(path) -> tuple[SeparatorConfig, dict, dict]:
    """Read a checkpoint; returns (config, state_dict of tensors, extra)."""
    with zipfile.ZipFile(path, "r") as zf:
        header = json.loads(zf.read("config.json"))
        state = {}
        for info in zf.infolist():
            if info.filename.startswith("tensors/") and info.filename.endswith(".npy"):
                name = info.filename[len("tensors/"):-len(".npy")]
                state[name] = torch.from_numpy(np.load(io.BytesIO(zf.read(info.filename))))
    return SeparatorConfig.from_dict(header["config"]), state, header.get("extra", {})


def load_into(model: ConvTasNet, path) -> dict:
    """Load checkpoint tensors into a model, diagnosing incompatibilities.

    Raises CheckpointMismatchError listing every missing, unexpected, or
    shape-mismatched tensor; returns the checkpoint's extra metadata.
    """
    cfg, state, extra = load_checkpoint(path)
    target = model.state_dict()
    problems = []
    for name, tensor in target.items():
        if name not in state:
            problems.append(f"missing: {name}")
        elif tuple(state[name].shape) != tuple(tensor.shape):
            problems.append(
                f"shape: {name} checkpoint {tuple(state[name].shape)} "
                f"vs model {tuple(tensor.shape)}"
            )
    for name in state:
        if name not in target:
            problems.append(f"unexpected: {name}")
    if problems:
        raise CheckpointMismatchError(
            f"checkpoint {path} incompatible with model "
            f"(checkpoint config: {cfg.to_dict()})",
            tensors=problems,
        )
    model.load_state_dict(state)
    return extra


# --------------------------------------------------------------------------
# Import adapter for externally published pretrained checkpoints.
#
# The transfer-learning entry point assumes the public release trained on
# 8 kHz two-speaker mixtures. Its state-dict layout names the encoder and
# decoder "filterbanks" and keeps the TCN under "masker"; the rules below
# rewrite those names onto this model's parameters. The full table is
# reproduced in the README.
# --------------------------------------------------------------------------

EXTERNAL_NAME_RULES: list[tuple[str, str]] = [
    (r"^encoder\.filterbank\._filters$", "encoder.weight"),
    (r"^decoder\.filterbank\._filters$", "decoder.weight"),
    (r"^masker\.bottleneck\.0\.(gamma|beta)$", r"separator.input_norm.\1"),
    (r"^masker\.bottleneck\.1\.(weight|bias)$", r"separator.bottleneck.\1"),
    (r"^masker\.TCN\.(\d+)\.shared_block\.0\.(weight|bias)$", r"separator.blocks.\1.in_conv.\2"),
    (r"^masker\.TCN\.(\d+)\.shared_block\.1\.weight$", r"separator.blocks.\1.in_prelu.weight"),
    (r"^masker\.TCN\.(\d+)\.shared_block\.2\.(gamma|beta)$", r"separator.blocks.\1.in_norm.\2"),
    (r"^masker\.TCN\.(\d+)\.shared_block\.3\.(weight|bias)$", r"separator.blocks.\1.depthwise.\2"),
    (r"^masker\.TCN\.(\d+)\.shared_block\.4\.weight$", r"separator.blocks.\1.out_prelu.weight"),
    (r"^masker\.TCN\.(\d+)\.shared_block\.5\.(gamma|beta)$", r"separator.blocks.\1.out_norm.\2"),
    (r"^masker\.TCN\.(\d+)\.res_conv\.(weight|bias)$", r"separator.blocks.\1.residual_conv.\2"),
    (r"^masker\.TCN\.(\d+)\.skip_conv\.(weight|bias)$", r"separator.blocks.\1.skip_conv.\2"),
    (r"^masker\.mask_net\.0\.weight$", "separator.mask_prelu.weight"),
    (r"^masker\.mask_net\.1\.(weight|bias)$", r"separator.mask_conv.\1"),
]

_NORM_SHAPE_FIX = re.compile(r"\.(gamma|beta)$")


def adapt_external_state_dict(raw: dict) -> dict:
    """Rename an external pretrained state dict onto this model's parameters.

    Unrecognized source names raise CheckpointMismatchError so partial
    imports never pass silently. Norm affine vectors published as [1, C, 1]
    or [C] are reshaped to this model's [1, C, 1] layout.
    """
    compiled = [(re.compile(pat), repl) for pat, repl in EXTERNAL_NAME_RULES]
    mapped = {}
    unknown = []
    for name, value in raw.items():
        for pat, repl in compiled:
            if pat.match(name):
                new = pat.sub(repl, name)
                tensor = torch.as_tensor(np.asarray(value))
                if _NORM_SHAPE_FIX.search(new) and tensor.dim() == 1:
                    tensor = tensor.view(1, -1, 1)
                mapped[new] = tensor
                break
        else:
            unknown.append(name)
    if unknown:
        raise CheckpointMismatchError(
            "external checkpoint contains tensors with no mapping rule",
            tensors=unknown,
        )
    return mapped
