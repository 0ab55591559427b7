"""Trainable 1-D convolutional residual transforms and their alternating training.

A transform maps a standardized window ``(channels, samples)`` to a window of
the same length. It is built as ``x + g(x)`` where the last convolution of
``g`` starts at zero, so an untrained network is the exact identity.
"""

from __future__ import annotations

import copy
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .correlation import DEFAULT_RIDGE, LagEstimate, cca_all_lags, windowed_lag_estimates, zscore
from .segmentation import WindowGrid, WindowUnavailable, extract_window_pair
from .signal import Signal

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class NoCorrelatedContent(RuntimeError):
    pass


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel: int, slope: float):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, kernel, padding="same")
        self.conv2 = nn.Conv1d(channels, channels, kernel, padding="same")
        self.act = nn.LeakyReLU(slope)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class TransformNet(nn.Module):
    """Input conv, ``n_blocks`` residual blocks, ``n_out`` output convs.

    All convolutions use stride 1 and same padding, without dilation or pooling.
    """

    def __init__(self, in_channels: int, out_channels: Optional[int] = None, hidden: int = 16,
                 n_blocks: int = 15, n_out: int = 3, kernel: int = 11, slope: float = 0.01):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        if n_out < 1:
            raise ValueError("need at least one output convolution")
        self.arch = dict(in_channels=in_channels, out_channels=out_channels, hidden=hidden,
                         n_blocks=n_blocks, n_out=n_out, kernel=kernel, slope=slope)
        self.inp = nn.Conv1d(in_channels, hidden, kernel, padding="same")
        self.act = nn.LeakyReLU(slope)
        self.blocks = nn.ModuleList(ResBlock(hidden, kernel, slope) for _ in range(n_blocks))
        outs = [nn.Conv1d(hidden, hidden, kernel, padding="same") for _ in range(n_out - 1)]
        outs.append(nn.Conv1d(hidden, out_channels, kernel, padding="same"))
        self.out = nn.ModuleList(outs)
        nn.init.zeros_(self.out[-1].weight)
        nn.init.zeros_(self.out[-1].bias)
        # maps the output back onto the input channels for the area loss
        self.decoder = nn.Conv1d(out_channels, in_channels, 1) if out_channels != in_channels else None

    @property
    def n_conv(self) -> int:
        return 1 + 2 * len(self.blocks) + len(self.out)

    @property
    def receptive_field(self) -> int:
        return self.n_conv * (self.arch["kernel"] - 1) + 1

    def residual(self, x: torch.Tensor) -> torch.Tensor:
        h = self.act(self.inp(x))
        for b in self.blocks:
            h = b(h)
        for conv in self.out[:-1]:
            h = self.act(conv(h))
        return self.out[-1](h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        g = self.residual(x)
        return x + g if self.decoder is None else g

    def reconstruct(self, y: torch.Tensor) -> torch.Tensor:
        return y if self.decoder is None else self.decoder(y)

    @property
    def dtype(self) -> torch.dtype:
        return self.inp.weight.dtype


def build_net(in_channels: int, seed: int = 0, dtype=torch.float32, **arch) -> TransformNet:
    """Seeded construction that leaves the global torch RNG untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = TransformNet(in_channels, **arch)
    return net.to(dtype)


def _as_tensor(block: np.ndarray, net: TransformNet) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(block), dtype=net.dtype)[None]


def forward(p: TransformNet, segment: np.ndarray) -> np.ndarray:
    """Apply ``p`` to one ``(channels, samples)`` block, returning float64."""
    seg = np.atleast_2d(np.asarray(segment, dtype=np.float64))
    if seg.shape[0] != p.arch["in_channels"]:
        raise ValueError(f"network expects {p.arch['in_channels']} channels, got {seg.shape[0]}")
    with torch.no_grad():
        g = p.residual(_as_tensor(seg, p))[0].double().numpy()
    return seg + g if p.decoder is None else g


def as_transform(p: Optional[TransformNet]):
    if p is None:
        return None
    return lambda seg: forward(p, seg)


class _NuclearNorm(torch.autograd.Function):
    """Sum of singular values; the gradient is ``U V^T`` of the thin SVD."""

    @staticmethod
    def forward(ctx, t):
        try:
            U, S, Vh = torch.linalg.svd(t, full_matrices=False)
        except RuntimeError as exc:  # LinAlgError subclasses RuntimeError
            raise torch.linalg.LinAlgError(f"SVD did not converge: {exc}") from None
        ctx.save_for_backward(U, Vh)
        return S.sum()

    @staticmethod
    def backward(ctx, grad):
        U, Vh = ctx.saved_tensors
        return grad * (U @ Vh)


def _slices(fx: torch.Tensor, fy: torch.Tensor, lag: int):
    n = fx.shape[-1]
    if lag >= 0:
        return fx[:, :n - lag], fy[:, lag:]
    return fx[:, -lag:], fy[:, :n + lag]


def lag_correlation(fx: torch.Tensor, fy: torch.Tensor, lag: int,
                    ridge_factor: float = DEFAULT_RIDGE) -> torch.Tensor:
    """Differentiable CCA correlation of two transformed windows at one lag.

    Whitening uses Cholesky factors of the ridge-regularized covariances; the
    univariate case returns the signed correlation.
    """
    a, b = _slices(fx, fy, lag)
    a = a - a.mean(dim=1, keepdim=True)
    b = b - b.mean(dim=1, keepdim=True)
    s11, s22, s12 = a @ a.T, b @ b.T, a @ b.T
    l1, l2 = s11.shape[0], s22.shape[0]
    s11 = s11 + (ridge_factor * torch.trace(s11) / l1) * torch.eye(l1, dtype=s11.dtype)
    s22 = s22 + (ridge_factor * torch.trace(s22) / l2) * torch.eye(l2, dtype=s22.dtype)
    if l1 == 1 and l2 == 1:
        return s12[0, 0] / torch.sqrt(s11[0, 0] * s22[0, 0])
    L1 = torch.linalg.cholesky(s11)
    L2 = torch.linalg.cholesky(s22)
    t = torch.linalg.solve_triangular(L1, s12, upper=False)
    t = torch.linalg.solve_triangular(L2, t.T, upper=False).T
    return _NuclearNorm.apply(t)


def _best_lag(fx: np.ndarray, fy: np.ndarray, max_lag: int, ridge_factor: float) -> int:
    return cca_all_lags(fx, fy, max_lag, ridge_factor).argmax_lag


def window_loss(p1: TransformNet, p2: TransformNet, x: np.ndarray, y: np.ndarray, beta: float,
                ridge_factor: float = DEFAULT_RIDGE, trainable: int = 1,
                lag: Optional[int] = None, max_lag: Optional[int] = None,
                fixed_out: Optional[np.ndarray] = None):
    """Combined loss of one window pair as a differentiable tensor.

    Returns ``(loss, lag)``. ``x`` and ``y`` are already standardized; the
    correlation term is taken at ``lag`` or, if omitted, at the lag with the
    highest correlation between the current outputs.
    """
    if trainable not in (1, 2):
        raise ValueError("trainable must be 1 or 2")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    train, fixed = (p1, p2) if trainable == 1 else (p2, p1)
    src = x if trainable == 1 else y
    other = y if trainable == 1 else x
    inp = _as_tensor(src, train)
    out = train(inp)[0].double()
    if fixed_out is None:
        with torch.no_grad():
            fixed_out = forward(fixed, other)
    fo = torch.as_tensor(fixed_out, dtype=torch.float64)
    fx, fy = (out, fo) if trainable == 1 else (fo, out)
    if lag is None:
        n = src.shape[-1]
        ml = n // 2 if max_lag is None else max_lag
        lag = _best_lag(fx.detach().numpy(), fy.detach().numpy(), ml, ridge_factor)
    corr = lag_correlation(fx, fy, lag, ridge_factor)
    recon = train.reconstruct(out[None].to(train.dtype))[0].double()
    area = torch.mean((recon - inp[0].double()) ** 2)
    loss = (1.0 - beta) * (-corr) + beta * area
    return loss, lag


def loss_and_grad(p1: TransformNet, p2: TransformNet, x: np.ndarray, y: np.ndarray, beta: float,
                  ridge_factor: float = DEFAULT_RIDGE, trainable: int = 1,
                  lag: Optional[int] = None, max_lag: Optional[int] = None, window_id=None):
    """Loss value and gradients (one array per parameter) of the trainable net."""
    net = p1 if trainable == 1 else p2
    net.zero_grad(set_to_none=True)
    try:
        loss, lag = window_loss(p1, p2, x, y, beta, ridge_factor, trainable, lag, max_lag)
        loss.backward()
    except torch.linalg.LinAlgError as exc:
        raise torch.linalg.LinAlgError(f"window {window_id}: {exc}") from None
    grads = [torch.zeros_like(q) if q.grad is None else q.grad.detach().clone() for q in net.parameters()]
    return float(loss.detach()), [g.numpy() for g in grads], lag


@dataclass
class TrainConfig:
    beta: float = 0.1
    lr: float = 4e-4
    epochs: int = 25
    outer_iterations: int = 1
    threshold: float = 0.3
    seed: int = 0
    ridge: float = DEFAULT_RIDGE
    batch_size: int = 8
    hidden: int = 16
    n_blocks: int = 15
    n_out: int = 3
    kernel: int = 11
    early_stop: float = 1e-5
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.epochs < 0 or self.outer_iterations < 1:
            raise ValueError("epochs must be >= 0 and outer_iterations >= 1")

    def arch(self) -> dict:
        return dict(hidden=self.hidden, n_blocks=self.n_blocks, n_out=self.n_out, kernel=self.kernel)


@dataclass
class TrainResult:
    p1: TransformNet
    p2: TransformNet
    estimates: list[LagEstimate]
    history: list[dict] = field(default_factory=list)


def _train_side(net, fixed, windows, active, side, cfg, rng, history, outer):
    """Adam over the active windows; the fixed side's outputs are cached."""
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    cache = {}
    for i in active:
        x, y, _ = windows[i]
        cache[i] = forward(fixed, y if side == 1 else x)
    prev = None
    for epoch in range(cfg.epochs):
        order = list(active)
        rng.shuffle(order)
        total = 0.0
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b:b + cfg.batch_size]
            opt.zero_grad(set_to_none=True)
            losses = []
            for i in batch:
                x, y, ml = windows[i]
                try:
                    loss, _ = window_loss(net if side == 1 else fixed, fixed if side == 1 else net,
                                          x, y, cfg.beta, cfg.ridge, side, None, ml, cache[i])
                except torch.linalg.LinAlgError as exc:
                    raise torch.linalg.LinAlgError(f"window {i}: {exc}") from None
                losses.append(loss)
            batch_loss = torch.stack(losses).mean()
            batch_loss.backward()
            opt.step()
            total += float(batch_loss.detach()) * len(batch)
        epoch_loss = total / max(len(order), 1)
        history.append(dict(outer=outer, side=side, epoch=epoch, loss=epoch_loss))
        log.debug("outer %d side %d epoch %d loss %.6f", outer, side, epoch, epoch_loss)
        if prev is not None and abs(prev - epoch_loss) < cfg.early_stop * max(abs(prev), 1e-12):
            break
        prev = epoch_loss


def train_alternating(s1: Signal, s2: Signal, grid: WindowGrid, config: TrainConfig,
                      mode: str = "dcca", init: Optional[tuple] = None,
                      base_shift_ms: float | Sequence[float] = 0.0,
                      windows: Optional[Sequence[tuple]] = None) -> TrainResult:
    """Alternately train the transforms, filtering weakly correlated windows.

    ``mode`` is ``"dcca"`` (only the sensor-1 network learns) or ``"bdcca"``.
    ``init`` optionally supplies starting networks, e.g. from :func:`pretrain_init`.
    """
    if mode not in ("dcca", "bdcca"):
        raise ValueError(f"unknown training mode {mode!r}")
    todo = list(grid.windows()) if windows is None else list(windows)
    shift = (lambda k: float(base_shift_ms)) if np.ndim(base_shift_ms) == 0 else (lambda k: float(base_shift_ms[k]))
    data = []
    for k, j in todo:
        try:
            pair = extract_window_pair(s1, s2, grid, k, j, shift(k))
        except WindowUnavailable:
            data.append(None)
            continue
        ml = min(grid.max_lag, int(np.floor(grid.lam * pair.x.shape[1])))
        data.append((zscore(pair.x), zscore(pair.y), ml))
    arch = config.arch()
    if init is not None:
        p1, p2 = pretrain_init(init[0]), pretrain_init(init[1])
    else:
        p1 = build_net(s1.n_channels, config.seed, **arch)
        p2 = build_net(s2.n_channels, config.seed + 1, **arch)
    rng = np.random.default_rng(config.seed)
    history: list[dict] = []

    def estimate():
        return windowed_lag_estimates(
            s1, s2, grid, as_transform(p1), as_transform(p2) if mode == "bdcca" else None,
            config.threshold, config.ridge, base_shift_ms, todo, threads=config.threads)

    active = [i for i, d in enumerate(data) if d is not None]
    estimates = None
    sides = (1,) if mode == "dcca" else (1, 2)
    for outer in range(config.outer_iterations):
        for side in sides:
            net, fixed = (p1, p2) if side == 1 else (p2, p1)
            if mode == "dcca":
                fixed = _Identity(s2.n_channels)
            net.train()
            _train_side(net, fixed, data, active, side, config, rng, history, outer)
            net.eval()
            estimates = estimate()
            active = [i for i, e in enumerate(estimates) if e.valid]
            if not active:
                raise NoCorrelatedContent("no correlated content: every window fell below the threshold")
    return TrainResult(p1, p2, estimates, history)


class _Identity(TransformNet):
    """Stand-in for the fixed identity side in DCCA mode."""

    def __init__(self, channels: int):
        super().__init__(channels, n_blocks=0, n_out=1, hidden=1, kernel=1)
        for q in self.parameters():
            q.requires_grad_(False)


def pretrain_init(source: TransformNet, like: Optional[dict] = None) -> TransformNet:
    """Independent copy of ``source`` to start a new alignment from."""
    if like is not None and {**source.arch, **like} != source.arch:
        raise ValueError(f"architecture mismatch: {like} vs {source.arch}")
    return copy.deepcopy(source)


def save_checkpoint(path, nets: dict[str, TransformNet]) -> None:
    """Write networks to an ``.npz`` container with a JSON architecture header."""
    header = dict(version=CHECKPOINT_VERSION,
                  nets={name: dict(arch=n.arch, dtype=str(n.dtype).replace("torch.", "")) for name, n in nets.items()})
    arrays = {"__header__": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for name, net in nets.items():
        for key, val in net.state_dict().items():
            arrays[f"{name}/{key}"] = val.detach().numpy()
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> dict[str, TransformNet]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        nets = {}
        for name, spec in header["nets"].items():
            arch = dict(spec["arch"])
            in_ch = arch.pop("in_channels")
            net = TransformNet(in_ch, **arch).to(getattr(torch, spec["dtype"]))
            state = {k.split("/", 1)[1]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith(name + "/")}
            net.load_state_dict(state)
            nets[name] = net
    return nets
