"""U-shaped mask-guided spectral-wise transformer (MST)."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import hsit
from . import tensor as T
from .attention import ConfigError, SpectralMSA
from .mask import MaskGuidance
from .nn import Conv2d, ConvTranspose2d, LayerNorm, Module, _rng
from .optics import DEFAULT_BANDS, DEFAULT_STEP, dispersed_width, shift_mask
from .tensor import DimensionError, Tensor

# Fixed after matching the MST-S/M/L parameter and FLOP budgets (see README).
FFN_RATIO = 5

N_STAGES = 3  # two encoder stages + bottleneck


@dataclass(frozen=True)
class MstConfig:
    dim: int = 28
    n_lambda: int = DEFAULT_BANDS
    d: int = DEFAULT_STEP
    depths: tuple[int, int, int] = (2, 2, 2)
    head_dim: int | None = None  # None -> dim, so stage i gets 2**i heads
    ffn_ratio: int = FFN_RATIO
    use_smsa: bool = True
    use_mm: bool = True
    use_position: bool = True
    input_mode: str = "plain"  # "plain" (H) or "legacy" (H * mask)

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(v) for v in self.depths))
        if len(self.depths) != 3 or min(self.depths) < 1:
            raise ConfigError(f"depths must be three positive ints, got {self.depths}")
        if self.dim < 1 or self.n_lambda < 1 or self.d < 0 or self.ffn_ratio < 1:
            raise ConfigError("dim, n_lambda, ffn_ratio must be positive and d non-negative")
        if self.dim % self.resolved_head_dim:
            raise ConfigError(f"dim {self.dim} not divisible by head_dim {self.resolved_head_dim}")
        if self.input_mode not in ("plain", "legacy"):
            raise ConfigError(f"input_mode must be 'plain' or 'legacy', got {self.input_mode!r}")

    @property
    def resolved_head_dim(self) -> int:
        return self.head_dim or self.dim

    def stage_dim(self, i: int) -> int:
        return self.dim * 2**i

    def stage_heads(self, i: int) -> int:
        return self.stage_dim(i) // self.resolved_head_dim

    def to_dict(self) -> dict:
        out = asdict(self)
        out["depths"] = list(self.depths)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MstConfig":
        data = dict(data)
        if "depths" in data:
            data["depths"] = tuple(data["depths"])
        return cls(**data)


PRESETS: dict[str, MstConfig] = {
    "mst-s": MstConfig(depths=(2, 2, 2)),
    "mst-m": MstConfig(depths=(2, 4, 4)),
    "mst-l": MstConfig(depths=(4, 7, 5)),
    "baseline": MstConfig(depths=(2, 2, 2), use_smsa=False, use_mm=False),
    "mst-s-no-mm": MstConfig(depths=(2, 2, 2), use_mm=False),
    "toy": MstConfig(dim=8, n_lambda=8, depths=(1, 1, 1)),
}


def preset(name: str, **overrides) -> MstConfig:
    try:
        cfg = PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    if "," in raw or raw.startswith("("):
        return tuple(int(v) for v in raw.strip("()").split(",") if v.strip())
    try:
        return int(raw)
    except ValueError:
        return raw


def load_config(path: str | os.PathLike) -> MstConfig:
    """Read ``key = value`` lines; ``preset = mst-s`` may seed the defaults."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            values[key.strip()] = _parse_value(raw)
    base = values.pop("preset", None)
    cfg = preset(base) if base else MstConfig()
    return replace(cfg, **values)


def save_config(cfg: MstConfig, path: str | os.PathLike) -> None:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


class FeedForward(Module):
    """conv1x1 (x r) -> GELU -> depth-wise conv3x3 -> GELU -> conv1x1 back."""

    def __init__(self, dim: int, ratio: int = FFN_RATIO, rng=None):
        hidden = dim * ratio
        self.expand = Conv2d(dim, hidden, 1, rng=rng)
        self.dw = Conv2d(hidden, hidden, 3, groups=hidden, rng=rng)
        self.project = Conv2d(hidden, dim, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.project(T.gelu(self.dw(T.gelu(self.expand(x)))))

    def macs(self, h: int, w: int) -> int:
        return self.expand.macs(h, w) + self.dw.macs(h, w) + self.project.macs(h, w)


class MSAB(Module):
    """``x + attn(ln1(x))`` followed by ``+ ffn(ln2(.))``; attention is optional."""

    def __init__(self, dim: int, heads: int, ffn_ratio: int = FFN_RATIO, use_smsa: bool = True,
                 use_position: bool = True, rng=None):
        rng = _rng(rng)
        self.use_position = use_position
        if use_smsa:
            self.ln1 = LayerNorm(dim)
            self.attn = SpectralMSA(dim, heads, rng=rng)
        else:
            self.ln1 = None
            self.attn = None
        self.ln2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_ratio, rng=rng)

    def forward(self, x: Tensor, mask_attention: Tensor | None = None) -> Tensor:
        if self.attn is not None:
            x = x + self.attn(self.ln1(x), mask_attention, position=self.use_position)
        return x + self.ffn(self.ln2(x))

    def macs(self, h: int, w: int) -> int:
        total = self.ffn.macs(h, w)
        if self.attn is not None:
            total += self.attn.macs(h, w)
            if not self.use_position:
                total -= self.attn.pos1.macs(h, w) + self.attn.pos2.macs(h, w)
        return total


class MST(Module):
    """Encoder (2 stages) -> bottleneck -> decoder (2 stages) with skip fusion.

    ``forward`` takes the shift-back cube as ``N_lambda x H x W`` and the
    physical mask as ``H x W`` and returns ``H_in + R``.
    """

    def __init__(self, cfg: MstConfig | None = None, seed: int = 0):
        cfg = cfg or MstConfig()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c, L = cfg.dim, cfg.n_lambda
        n1, n2, n3 = cfg.depths

        def blocks(stage, n):
            return [MSAB(cfg.stage_dim(stage), cfg.stage_heads(stage), cfg.ffn_ratio,
                         cfg.use_smsa, cfg.use_position, rng=rng) for _ in range(n)]

        self.embed = Conv2d(L, c, 3, bias=True, rng=rng)
        self.enc0 = blocks(0, n1)
        self.down0 = Conv2d(c, 2 * c, 4, stride=2, pad=1, rng=rng)
        self.enc1 = blocks(1, n2)
        self.down1 = Conv2d(2 * c, 4 * c, 4, stride=2, pad=1, rng=rng)
        self.bottleneck = blocks(2, n3)
        self.up1 = ConvTranspose2d(4 * c, 2 * c, rng=rng)
        self.fuse1 = Conv2d(4 * c, 2 * c, 1, rng=rng)
        self.dec1 = blocks(1, n2)
        self.up0 = ConvTranspose2d(2 * c, c, rng=rng)
        self.fuse0 = Conv2d(2 * c, c, 1, rng=rng)
        self.dec0 = blocks(0, n1)
        self.head = Conv2d(c, L, 3, bias=True, rng=rng)
        if cfg.use_mm and cfg.use_smsa:
            self.guides = [MaskGuidance(L, c, i, rng=rng) for i in range(N_STAGES)]
        else:
            self.guides = []

    # -- forward ---------------------------------------------------------------
    def mask_attentions(self, mask: np.ndarray, width: int) -> list[Tensor | None]:
        if not self.guides:
            return [None] * N_STAGES
        cfg = self.cfg
        ms = shift_mask(np.asarray(mask), cfg.d, cfg.n_lambda).transpose(2, 0, 1)
        ms = Tensor(ms, dtype=self._dtype())
        return [g(ms, cfg.d, width) for g in self.guides]

    def _dtype(self):
        return self.embed.weight.dtype

    def forward(self, h: Tensor, mask: np.ndarray, return_features: bool = False):
        cfg = self.cfg
        if h.ndim != 3 or h.shape[0] != cfg.n_lambda:
            raise DimensionError(f"expected {cfg.n_lambda} x H x W input, got {h.shape}")
        _, hh, ww = h.shape
        if hh % 4 or ww % 4:
            raise DimensionError(f"spatial extents {hh}x{ww} must be multiples of 4")
        mask = np.asarray(mask)
        if mask.shape != (hh, ww):
            raise DimensionError(f"mask {mask.shape} does not match input extents {(hh, ww)}")
        if cfg.input_mode == "legacy":
            h = h * Tensor(mask[None], dtype=h.dtype)
        maps = self.mask_attentions(mask, ww)
        feats = {}

        x = self.embed(h)
        for blk in self.enc0:
            x = blk(x, maps[0])
        feats["enc0"] = skip0 = x
        x = self.down0(x)
        for blk in self.enc1:
            x = blk(x, maps[1])
        feats["enc1"] = skip1 = x
        x = self.down1(x)
        for blk in self.bottleneck:
            x = blk(x, maps[2])
        feats["bottleneck"] = x
        x = self.fuse1(T.concat([self.up1(x), skip1], axis=0))
        for blk in self.dec1:
            x = blk(x, maps[1])
        feats["dec1"] = x
        x = self.fuse0(T.concat([self.up0(x), skip0], axis=0))
        for blk in self.dec0:
            x = blk(x, maps[0])
        feats["dec0"] = x
        out = h + self.head(x)
        return (out, feats) if return_features else out

    def reconstruct(self, cube: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Numpy convenience: ``H x W x N`` shift-back cube in, ``H x W x N`` estimate out."""
        with T.no_grad():
            x = Tensor(np.asarray(cube).transpose(2, 0, 1), dtype=self._dtype())
            return self.forward(x, mask).data.transpose(1, 2, 0).copy()

    # -- weights -----------------------------------------------------------------
    def save_weights(self, path: str | os.PathLike) -> None:
        save_weights(self, path)

    def load_weights(self, path: str | os.PathLike) -> None:
        load_weights(self, path)


def save_weights(model: MST, path: str | os.PathLike) -> None:
    hsit.save_bundle(path, model.state_dict())


def load_weights(model: MST, path: str | os.PathLike) -> None:
    """Replace every parameter from a bundle; nothing changes unless all tensors match."""
    arrays = hsit.load_bundle(path)
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise hsit.IntegrityError(f"weight names differ: missing={missing[:5]} unexpected={extra[:5]}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise hsit.IntegrityError(f"tensor {name!r}: shape {arrays[name].shape} != {p.shape}")
    for name, p in params.items():
        p.data = arrays[name].astype(p.dtype)
        p.grad = None


def measurement_width(cfg: MstConfig, width: int) -> int:
    return dispersed_width(width, cfg.d, cfg.n_lambda)
