"""Single-view 2D encoder-decoder segmentation network and its Dice loss.

The network is a small U-shaped CNN: ``pool_stages`` encoder levels of 3x3
convs + ReLU with 2x2 max pooling between them, a bottleneck block, and a
mirrored decoder using nearest-neighbor 2x upsampling with skip concatenation,
closed by a 1x1 conv to ``num_classes`` and a softmax. Under the default
configuration this is exactly 16 conv layers.

The loss (and its analytic gradient, used directly for training) lives here
as plain numpy so it can be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigurationError, ContractError, FormatError

# Parameter count reported for the original network this architecture
# follows. It cannot be reconciled with the documented layer/width layout,
# whose enumeration gives 2,841,154; reporting tools print both counts with
# a discrepancy note instead of silently preferring either.
REPORTED_REFERENCE_PARAM_COUNT = 4_641_209

DEFAULT_INPUT_SIZE = (180, 180)
DEFAULT_WIDTHS = (64, 128, 256)

# Sheet voxels occupy roughly 1% of a slice. Starting the head at p=0.5 lets
# batch Dice race to all-background and freeze (the softmax saturates before
# foreground features form), so the foreground logit starts at this prior.
HEAD_FOREGROUND_PRIOR = 0.01


@dataclass
class ModelConfig:
    input_size: tuple[int, int] = DEFAULT_INPUT_SIZE
    in_channels: int = 1
    num_classes: int = 2
    pool_stages: int = 2
    convs_per_block: int = 3
    channel_widths: tuple[int, ...] = DEFAULT_WIDTHS
    seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.channel_widths = tuple(int(w) for w in self.channel_widths)
        if len(self.input_size) != 2 or any(v < 1 for v in self.input_size):
            raise ConfigurationError(f"input_size must be two positive ints, got {self.input_size}")
        if self.pool_stages < 1 or self.convs_per_block < 1:
            raise ConfigurationError("pool_stages and convs_per_block must be >= 1")
        if self.in_channels < 1 or self.num_classes < 2:
            raise ConfigurationError("need in_channels >= 1 and num_classes >= 2")
        if len(self.channel_widths) != self.pool_stages + 1:
            raise ConfigurationError(
                f"channel_widths must list {self.pool_stages + 1} widths "
                f"(one per encoder level plus bottleneck), got {self.channel_widths}"
            )
        if any(w < 1 for w in self.channel_widths):
            raise ConfigurationError("channel widths must be positive")
        div = 2**self.pool_stages
        h, w = self.input_size
        if h % div or w % div:
            raise ConfigurationError(
                f"input size {self.input_size} not divisible by 2^{self.pool_stages}"
            )

    @property
    def conv_layer_count(self) -> int:
        # encoder + bottleneck + decoder blocks, plus the final 1x1
        return (2 * self.pool_stages + 1) * self.convs_per_block + 1

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _block_plan(cfg: ModelConfig) -> list[tuple[str, int, int, int]]:
    """(name, in_ch, out_ch, kernel) for every conv, in creation order."""
    widths = cfg.channel_widths
    plan = []
    prev = cfg.in_channels
    for level in range(cfg.pool_stages):
        w = widths[level]
        for i in range(cfg.convs_per_block):
            plan.append((f"enc{level + 1}_conv{i + 1}", prev, w, 3))
            prev = w
    w = widths[cfg.pool_stages]
    for i in range(cfg.convs_per_block):
        plan.append((f"bott_conv{i + 1}", prev, w, 3))
        prev = w
    for level in reversed(range(cfg.pool_stages)):
        # after upsampling, the skip from the matching encoder level is concatenated
        w_in = prev + widths[level]
        w_out = widths[level]
        for i in range(cfg.convs_per_block):
            plan.append((f"dec{level + 1}_conv{i + 1}", w_in if i == 0 else w_out, w_out, 3))
        prev = w_out
    plan.append(("head", prev, cfg.num_classes, 1))
    return plan


class _Net(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.convs = nn.ModuleDict()
        for name, cin, cout, k in _block_plan(cfg):
            self.convs[name] = nn.Conv2d(cin, cout, k, padding=k // 2)

    def _run_block(self, prefix: str, x: torch.Tensor) -> torch.Tensor:
        for i in range(self.cfg.convs_per_block):
            x = F.relu(self.convs[f"{prefix}_conv{i + 1}"](x))
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for level in range(self.cfg.pool_stages):
            x = self._run_block(f"enc{level + 1}", x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self._run_block("bott", x)
        for level in reversed(range(self.cfg.pool_stages)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = torch.cat([x, skips[level]], dim=1)
            x = self._run_block(f"dec{level + 1}", x)
        return torch.softmax(self.convs["head"](x), dim=1)


@dataclass
class TrainedModel:
    config: ModelConfig
    net: _Net
    param_count: int
    view: str | None = None

    @property
    def weights(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self.net.state_dict().items()}


def _he_init(net: _Net, seed: int):
    rng = np.random.default_rng(seed)
    for name, cin, cout, k in _block_plan(net.cfg):
        conv = net.convs[name]
        std = np.sqrt(2.0 / (cin * k * k))
        w = rng.normal(0.0, std, size=(cout, cin, k, k)).astype(np.float32)
        with torch.no_grad():
            conv.weight.copy_(torch.from_numpy(w))
            conv.bias.zero_()
    prior = HEAD_FOREGROUND_PRIOR
    with torch.no_grad():
        net.convs["head"].bias[-1] = float(np.log(prior / (1.0 - prior)))


def build_model(cfg: ModelConfig, view: str | None = None) -> TrainedModel:
    """Construct the network with seeded He fan-in initialization."""
    net = _Net(cfg)
    _he_init(net, cfg.seed)
    net.eval()
    count = sum(p.numel() for p in net.parameters())
    return TrainedModel(config=cfg, net=net, param_count=count, view=view)


def param_count_report(m: TrainedModel) -> str:
    """Human-readable parameter count, flagging the known reference mismatch."""
    lines = [f"trainable parameters: {m.param_count:,}"]
    if m.config == ModelConfig():
        lines.append(
            f"reference count reported for this architecture: "
            f"{REPORTED_REFERENCE_PARAM_COUNT:,} (discrepancy of "
            f"{REPORTED_REFERENCE_PARAM_COUNT - m.param_count:,}; "
            "no width assignment consistent with the documented layout "
            "reproduces it, so both values are shown)"
        )
    return "\n".join(lines)


def forward(m: TrainedModel, batch: np.ndarray) -> np.ndarray:
    """Run a stack of 2D slices through the network.

    batch: (N, H, W) float array. Returns (N, H, W, num_classes) float32
    per-pixel class probabilities.
    """
    batch = np.asarray(batch)
    h, w = m.config.input_size
    if batch.ndim != 3 or batch.shape[1:] != (h, w):
        raise ContractError(
            f"batch must be (N, {h}, {w}), got {batch.shape}"
        )
    x = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32)).unsqueeze(1)
    with torch.no_grad():
        probs = m.net(x)
    return probs.permute(0, 2, 3, 1).numpy()


def _check_loss_args(pred_fg: np.ndarray, gt: np.ndarray, s: float):
    if pred_fg.shape != gt.shape:
        raise ContractError(f"shape mismatch: pred {pred_fg.shape} vs gt {gt.shape}")
    if s <= 0:
        raise ContractError(f"smoothing s must be > 0, got {s}")
    if pred_fg.size and (pred_fg.min() < 0 or pred_fg.max() > 1):
        raise ContractError("predictions must lie in [0, 1]")


def dice_loss(pred_fg, gt, s: float = 1.0) -> float:
    """DL = -(2 sum(p*g) + s) / (sum(p) + sum(g) + s), over the whole batch."""
    p = np.asarray(pred_fg, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    _check_loss_args(p, g, s)
    num = 2.0 * float((p * g).sum()) + s
    den = float(p.sum()) + float(g.sum()) + s
    return -num / den


def dice_loss_grad(pred_fg, gt, s: float = 1.0) -> np.ndarray:
    """Analytic gradient of dice_loss w.r.t. each prediction entry.

    With A = sum(p*g) and B = sum(p) + sum(g):
    d DL / d p_i = ((2A + s) - 2 g_i (B + s)) / (B + s)^2
    """
    p = np.asarray(pred_fg, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    _check_loss_args(p, g, s)
    a = float((p * g).sum())
    b = float(p.sum()) + float(g.sum())
    return ((2.0 * a + s) - 2.0 * g * (b + s)) / (b + s) ** 2


def save_checkpoint(m: TrainedModel, path):
    """Single-file archive: named weight tensors plus config/metadata JSON."""
    meta = {
        "config": m.config.to_json_dict(),
        "view": m.view,
        "param_count": m.param_count,
    }
    arrays = {f"weights/{k}": v for k, v in m.weights.items()}
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)


def load_checkpoint(path) -> TrainedModel:
    with np.load(path, allow_pickle=False) as archive:
        if "meta" not in archive:
            raise FormatError(f"{path}: not a model checkpoint (missing meta entry)")
        meta = json.loads(str(archive["meta"]))
        cfg = ModelConfig.from_json_dict(meta["config"])
        m = build_model(cfg, view=meta.get("view"))
        state = {}
        loaded_count = 0
        for key in archive.files:
            if not key.startswith("weights/"):
                continue
            arr = archive[key]
            state[key[len("weights/"):]] = torch.from_numpy(arr.copy())
            loaded_count += arr.size
    if loaded_count != meta["param_count"]:
        raise FormatError(
            f"{path}: checkpoint declares {meta['param_count']} parameters "
            f"but stores {loaded_count}"
        )
    if loaded_count != m.param_count:
        raise FormatError(
            f"{path}: checkpoint has {loaded_count} parameters but its config "
            f"builds a model with {m.param_count}"
        )
    try:
        m.net.load_state_dict(state)
    except RuntimeError as e:
        raise FormatError(f"{path}: weight names/shapes do not match config: {e}") from e
    m.net.eval()
    return m
