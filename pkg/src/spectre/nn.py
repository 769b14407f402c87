"""Model definition: CNN patch embedder, CyRoPE transformer encoder and heads.

Everything trainable lives in :class:`SpectreModel`; parameter names from
``named_parameters()`` are the stable checkpoint keys. The functional
helpers (``rmsnorm``, ``swiglu_ffn``, ``attention`` ...) hold the exact
forward semantics and are what the modules call.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .cyrope import build_table
from .errors import (
    BadMagicError,
    ConfigError,
    HashMismatchError,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)

RMS_EPS = 1e-6
INIT_STD = 0.02
PE_TYPES = ("cyrope", "absolute")
MASK_STYLES = ("bert", "mae")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    layers: int = 4
    heads: int = 4
    patch_len: int = 100
    channels: int = 12
    segment_len: int = 2000
    k: int = 32
    dof: int = 5
    mask_ratio: float = 0.3
    dropout: float = 0.0
    pe_type: str = "cyrope"
    mask_style: str = "bert"
    temporal_base: float = 1e4
    preset: str = "desk"

    # fields that change parameter shapes or forward semantics
    ARCH_FIELDS = ("d", "layers", "heads", "patch_len", "channels", "segment_len", "k",
                   "dof", "pe_type", "mask_style", "temporal_base")

    def validate(self):
        if self.d <= 0 or self.heads <= 0 or self.layers < 0:
            raise ConfigError("d and heads must be positive, layers non-negative")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if (self.d // self.heads) % 4:
            raise ConfigError(f"head dim {self.d // self.heads} must be a multiple of 4")
        if self.segment_len % self.patch_len:
            raise ConfigError(f"segment_len {self.segment_len} is not a multiple of patch_len {self.patch_len}")
        if self.channels < 2 or self.k < 2 or self.dof < 1:
            raise ConfigError("need channels >= 2, k >= 2, dof >= 1")
        if not 0 <= self.mask_ratio < 1:
            raise ConfigError("mask_ratio must lie in [0, 1)")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.pe_type not in PE_TYPES:
            raise ConfigError(f"pe_type must be one of {PE_TYPES}")
        if self.mask_style not in MASK_STYLES:
            raise ConfigError(f"mask_style must be one of {MASK_STYLES}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def time_patches(self) -> int:
        return self.segment_len // self.patch_len

    @property
    def n_tokens(self) -> int:
        return self.channels * self.time_patches

    @property
    def d_ff(self) -> int:
        return 8 * round(8 * self.d / 3 / 8)

    def config_hash(self) -> str:
        arch = {f: getattr(self, f) for f in self.ARCH_FIELDS}
        blob = json.dumps(arch, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "paper": ModelConfig(d=256, layers=18, heads=4, patch_len=100, k=500, dof=5,
                         mask_ratio=0.3, preset="paper"),
    "desk": ModelConfig(d=64, layers=4, heads=4, patch_len=100, k=32, dof=5,
                        mask_ratio=0.3, preset="desk"),
}


def model_config(preset: str = "desk", **overrides) -> ModelConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    known = {f.name for f in fields(ModelConfig)}
    bad = set(overrides) - known
    if bad:
        raise ConfigError(f"unknown model fields: {sorted(bad)}")
    return replace(PRESETS[preset], **overrides).validate()


@dataclass
class TokenGrid:
    """Patch embeddings [N, d] with their (channel, time-patch) coordinates."""

    embeddings: np.ndarray
    coords: np.ndarray
    mask: np.ndarray

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]


def token_coords(channels: int, time_patches: int) -> np.ndarray:
    """[N, 2] (c, t) for channel-major token order."""
    c, t = np.divmod(np.arange(channels * time_patches), time_patches)
    return np.stack([c, t], axis=1)


# -- functional forward definitions -------------------------------------------

def rmsnorm(x, gain, eps: float = RMS_EPS):
    return x * gain / torch.sqrt(x.pow(2).mean(-1, keepdim=True) + eps)


def swiglu_ffn(x, w1, w3, w2):
    """w2 (silu(w1 x) * (w3 x)); weights in torch Linear layout [out, in]."""
    return F.linear(F.silu(F.linear(x, w1)) * F.linear(x, w3), w2)


def rotate_pairs(x, cos, sin):
    """Rotate adjacent pairs of the last axis; cos/sin have d_h/2 entries."""
    a, b = x[..., 0::2], x[..., 1::2]
    return torch.stack((a * cos - b * sin, a * sin + b * cos), dim=-1).flatten(-2)


def attention(x, w_qkv, w_out, heads: int, cos, sin, return_probs: bool = False):
    """Multi-head self-attention with rotary q/k. x: [B, N, d]; cos/sin: [B or 1, N, d_h/2]."""
    bsz, n, d = x.shape
    dh = d // heads
    q, k, v = F.linear(x, w_qkv).view(bsz, n, 3, heads, dh).permute(2, 0, 3, 1, 4)
    cos, sin = cos.unsqueeze(1), sin.unsqueeze(1)
    q, k = rotate_pairs(q, cos, sin), rotate_pairs(k, cos, sin)
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    probs = torch.softmax(scores, dim=-1)
    out = (probs @ v).transpose(1, 2).reshape(bsz, n, d)
    out = F.linear(out, w_out)
    return (out, probs) if return_probs else out


def _dropout(x, p: float, gen, training: bool):
    if not training or p == 0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= p
    return x * keep / (1 - p)


# -- modules -------------------------------------------------------------------

class RMSNorm(nn.Module):
    def __init__(self, d):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))

    def forward(self, x):
        return rmsnorm(x, self.gain)


class ConvEmbed(nn.Module):
    """Shared per-patch CNN: [M, P] -> [M, d]."""

    def __init__(self, d):
        super().__init__()
        self.layer1 = nn.Conv1d(1, 32, 7, stride=2, padding=3)
        self.layer2 = nn.Conv1d(32, 96, 5, stride=1, padding=2)
        self.layer3 = nn.Conv1d(96, d, 3, stride=1, padding=1)

    def forward(self, patches):
        h = patches.unsqueeze(1)
        h = F.max_pool1d(F.gelu(self.layer1(h)), 3, 3)
        h = F.max_pool1d(F.gelu(self.layer2(h)), 3, 3)
        h = F.gelu(self.layer3(h))
        return h.mean(-1)


class Attention(nn.Module):
    def __init__(self, d, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(d, 3 * d, bias=False)
        self.out = nn.Linear(d, d, bias=False)

    def forward(self, x, cos, sin, return_probs=False):
        return attention(x, self.qkv.weight, self.out.weight, self.heads, cos, sin, return_probs)


class SwiGLU(nn.Module):
    def __init__(self, d, d_ff):
        super().__init__()
        self.w1 = nn.Linear(d, d_ff, bias=False)
        self.w3 = nn.Linear(d, d_ff, bias=False)
        self.w2 = nn.Linear(d_ff, d, bias=False)

    def forward(self, x):
        return swiglu_ffn(x, self.w1.weight, self.w3.weight, self.w2.weight)


class Block(nn.Module):
    """Pre-norm residual block: x + MHA(norm(x)), then x + FFN(norm(x))."""

    def __init__(self, d, heads, d_ff, dropout=0.0):
        super().__init__()
        self.norm1 = RMSNorm(d)
        self.attn = Attention(d, heads)
        self.norm2 = RMSNorm(d)
        self.ffn = SwiGLU(d, d_ff)
        self.dropout = dropout
        self.gen = None

    def forward(self, x, cos, sin):
        x = x + _dropout(self.attn(self.norm1(x), cos, sin), self.dropout, self.gen, self.training)
        return x + _dropout(self.ffn(self.norm2(x)), self.dropout, self.gen, self.training)


class KinHead(nn.Module):
    def __init__(self, d, dof):
        super().__init__()
        self.fc1 = nn.Linear(d, d)
        self.fc2 = nn.Linear(d, dof)

    def forward(self, h):
        return self.fc2(F.gelu(self.fc1(h)))


class SpectreModel(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.d
        self.cnn = ConvEmbed(d)
        self.blocks = nn.ModuleList(Block(d, cfg.heads, cfg.d_ff, cfg.dropout) for _ in range(cfg.layers))
        self.final_norm = RMSNorm(d)
        self.mask_token = nn.Parameter(torch.zeros(d))
        self.kin_token = nn.Parameter(torch.zeros(d))
        self.ssl_head = nn.Linear(d, cfg.k)
        self.kin_head = KinHead(d, cfg.dof)
        if cfg.pe_type == "absolute":
            self.abs_pe = nn.Parameter(torch.zeros(cfg.n_tokens, d))
        if cfg.mask_style == "mae":
            self.decoder = Block(d, cfg.heads, cfg.d_ff, cfg.dropout)
            self.decoder_norm = RMSNorm(d)

        coords = token_coords(cfg.channels, cfg.time_patches)
        self.table = build_table(cfg.head_dim, cfg.channels, cfg.temporal_base)
        if cfg.pe_type == "cyrope":
            cos, sin = self.table.cos_sin(coords[:, 1], coords[:, 0])
        else:
            cos = np.ones((cfg.n_tokens, cfg.head_dim // 2))
            sin = np.zeros((cfg.n_tokens, cfg.head_dim // 2))
        self.register_buffer("rope_cos", torch.tensor(cos, dtype=torch.float32), persistent=False)
        self.register_buffer("rope_sin", torch.tensor(sin, dtype=torch.float32), persistent=False)
        self.reset_parameters(seed)

    @torch.no_grad()
    def reset_parameters(self, seed: int = 0):
        gen = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if name.startswith("cnn.") and name.endswith("weight"):
                nn.init.kaiming_uniform_(p, a=math.sqrt(5), generator=gen)
            elif name.endswith("bias"):
                p.zero_()
            elif name.endswith("gain"):
                p.fill_(1.0)
            else:
                nn.init.trunc_normal_(p, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD, generator=gen)

    def set_dropout_seed(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, Block):
                m.gen = gen

    # -- pieces ---------------------------------------------------------------

    def embed(self, x):
        """[B, C, L] -> [B, N, d] patch embeddings, channel-major token order."""
        bsz, c, length = x.shape
        if length % self.cfg.patch_len:
            raise ConfigError(f"length {length} is not a multiple of patch_len {self.cfg.patch_len}")
        patches = x.reshape(bsz * c * (length // self.cfg.patch_len), self.cfg.patch_len)
        return self.cnn(patches).view(bsz, -1, self.cfg.d)

    def add_position(self, z, idx=None):
        if self.cfg.pe_type != "absolute":
            return z
        pe = self.abs_pe if idx is None else self.abs_pe[idx]
        return z + pe

    def encode(self, z, cos, sin):
        for blk in self.blocks:
            z = blk(z, cos, sin)
        return self.final_norm(z)

    def rope(self, idx=None):
        if idx is None:
            return self.rope_cos.unsqueeze(0), self.rope_sin.unsqueeze(0)
        return self.rope_cos[idx], self.rope_sin[idx]

    # -- task forwards --------------------------------------------------------

    def ssl_logits(self, x, masked):
        """Logits [B, M, K] at the masked token indices ``masked`` [B, M]."""
        z = self.embed(x)
        bsz, n, d = z.shape
        if self.cfg.mask_style == "bert":
            flags = torch.zeros(bsz, n, dtype=torch.bool)
            flags.scatter_(1, masked, True)
            z = torch.where(flags.unsqueeze(-1), self.mask_token.expand_as(z), z)
            h = self.encode(self.add_position(z), *self.rope())
        else:
            keep = torch.ones(bsz, n, dtype=torch.bool)
            keep.scatter_(1, masked, False)
            visible = torch.nonzero(keep)[:, 1].view(bsz, -1)
            zv = torch.gather(self.add_position(z), 1, visible.unsqueeze(-1).expand(-1, -1, d))
            hv = self.encode(zv, *self.rope(visible))
            full = self.add_position(self.mask_token.expand(bsz, n, d))
            full = full.scatter(1, visible.unsqueeze(-1).expand(-1, -1, d), hv)
            h = self.decoder_norm(self.decoder(full, *self.rope()))
        hm = torch.gather(h, 1, masked.unsqueeze(-1).expand(-1, -1, d))
        return self.ssl_head(hm)

    def kinematics(self, x):
        """[B, C, L] -> [B, DoF] through the prepended, rotation-free kinematics token."""
        z = self.add_position(self.embed(x))
        bsz = z.shape[0]
        z = torch.cat([self.kin_token.expand(bsz, 1, -1), z], dim=1)
        cos, sin = self.rope()
        # the special token gets an identity rotation
        cos = torch.cat([torch.ones_like(cos[:, :1]), cos], dim=1)
        sin = torch.cat([torch.zeros_like(sin[:, :1]), sin], dim=1)
        h = self.encode(z, cos, sin)
        return self.kin_head(h[:, 0])

    def forward(self, x, masked=None):
        """SSL logits when ``masked`` indices are given, kinematics otherwise."""
        return self.kinematics(x) if masked is None else self.ssl_logits(x, masked)

    def config_hash(self) -> str:
        return self.cfg.config_hash()


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def cnn_embed(x: np.ndarray, model: SpectreModel) -> TokenGrid:
    """Embed one [C, L] segment into a TokenGrid."""
    with torch.no_grad():
        z = model.embed(torch.as_tensor(np.asarray(x)[None], dtype=next(model.parameters()).dtype))[0]
    coords = token_coords(x.shape[0], x.shape[1] // model.cfg.patch_len)
    return TokenGrid(z.numpy(), coords, np.zeros(len(coords), dtype=bool))


# -- gradient check ---------------------------------------------------------------

def finite_difference_check(fn, params: dict, seed: int = 0, step: float = 1e-4,
                            max_entries: int = 24, kink_tol: float = 1e-5,
                            return_skipped: bool = False):
    """Compare autograd against central differences for every tensor in ``params``.

    ``fn(params)`` returns a tensor; a scalar probe loss is formed as
    ``sum(out * R)`` with a fixed random R unless ``out`` is already scalar.
    Up to ``max_entries`` coordinates per tensor are probed (all of them for
    small tensors). A probe whose difference quotient at ``step`` disagrees
    with the one at ``step / 2`` by more than ``kink_tol`` (relative) straddles
    a max-pool switch; it is discarded and another coordinate is drawn.

    Returns {name: max relative error}, plus {name: discarded probes} when
    ``return_skipped`` is set.
    """
    params = {k: v.detach().clone().double().requires_grad_(True) for k, v in params.items()}
    gen = torch.Generator().manual_seed(seed)
    out = fn(params)
    weights = None if out.dim() == 0 else torch.randn(out.shape, generator=gen, dtype=out.dtype)

    def loss_of(p):
        o = fn(p)
        return o if weights is None else (o * weights).sum()

    loss = loss_of(params)
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    rng = np.random.default_rng(seed)
    errors, skipped = {}, {}

    def quotient(flat, i, h):
        orig = flat[i].item()
        flat[i] = orig + h
        up = loss_of(params).item()
        flat[i] = orig - h
        down = loss_of(params).item()
        flat[i] = orig
        return (up - down) / (2 * h)

    for (name, p), g in zip(params.items(), grads):
        g = torch.zeros_like(p) if g is None else g
        flat = p.data.view(-1)
        order = rng.permutation(flat.numel())
        worst, accepted, dropped = 0.0, 0, 0
        with torch.no_grad():
            for i in order:
                if accepted >= max_entries:
                    break
                num = quotient(flat, i, step)
                half = quotient(flat, i, step / 2)
                if abs(num - half) > kink_tol * max(abs(num), abs(half), 1e-8):
                    dropped += 1
                    continue
                ana = g.view(-1)[i].item()
                worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
                accepted += 1
        errors[name] = worst
        skipped[name] = dropped
    return (errors, skipped) if return_skipped else errors


def _grad_check_setup(op_name: str, seed: int, cfg: ModelConfig | None):
    """Build (fn, params) in float64 for a named operation."""
    gen = torch.Generator().manual_seed(seed)
    cfg = cfg or PRESETS["desk"]
    d = cfg.d

    def rnd(*shape, scale=1.0):
        return torch.randn(*shape, generator=gen, dtype=torch.float64) * scale

    if op_name == "linear":
        x = rnd(5, d)
        return (lambda p: F.linear(x, p["weight"], p["bias"])), {"weight": rnd(7, d, scale=0.3), "bias": rnd(7)}
    if op_name == "rmsnorm":
        x = rnd(5, d)
        return (lambda p: rmsnorm(p["x"], p["gain"])), {"x": x, "gain": 1 + rnd(d, scale=0.1)}
    if op_name == "swiglu":
        x = rnd(5, d)
        dff = cfg.d_ff
        return (lambda p: swiglu_ffn(x, p["w1"], p["w3"], p["w2"])), {
            "w1": rnd(dff, d, scale=0.2), "w3": rnd(dff, d, scale=0.2), "w2": rnd(d, dff, scale=0.2)}
    if op_name == "mha":
        n = 10
        x = rnd(2, n, d)
        table = build_table(d // cfg.heads, cfg.channels, cfg.temporal_base)
        cos, sin = table.cos_sin(np.arange(n) % 5, np.arange(n) // 5)
        cos = torch.tensor(cos)[None]
        sin = torch.tensor(sin)[None]
        return (lambda p: attention(x, p["qkv"], p["out"], cfg.heads, cos, sin)), {
            "qkv": rnd(3 * d, d, scale=0.2), "out": rnd(d, d, scale=0.2)}

    small = replace(cfg, segment_len=4 * cfg.patch_len, channels=3)
    model = SpectreModel(small, seed=seed).double()
    x = rnd(2, small.channels, small.segment_len)

    if op_name == "cnn":
        sub = model.cnn
        patches = x.reshape(-1, small.patch_len)[:6]
        return (lambda p: torch.func.functional_call(sub, p, (patches,))), dict(sub.named_parameters())
    if op_name == "kin_head":
        h = rnd(4, d)
        sub = model.kin_head
        return (lambda p: torch.func.functional_call(sub, p, (h,))), dict(sub.named_parameters())
    if op_name == "ssl_head":
        h = rnd(4, d)
        sub = model.ssl_head
        return (lambda p: torch.func.functional_call(sub, p, (h,))), dict(sub.named_parameters())
    if op_name == "block":
        sub = model.blocks[0] if model.blocks else Block(d, cfg.heads, cfg.d_ff).double()
        z = rnd(2, small.n_tokens, d)
        cos, sin = model.rope()
        return (lambda p: torch.func.functional_call(sub, p, (z, cos, sin))), dict(sub.named_parameters())
    if op_name in ("model_ssl", "model_finetune"):
        masked = torch.tensor(np.stack([
            np.sort(np.random.default_rng([seed, b]).choice(small.n_tokens, 4, replace=False))
            for b in range(2)]))
        labels = torch.randint(0, small.k, (2, 4), generator=gen)
        targets = torch.rand(2, small.dof, generator=gen, dtype=torch.float64)
        if op_name == "model_ssl":
            def fn(p):
                logits = torch.func.functional_call(model, p, (x, masked))
                return F.cross_entropy(logits.reshape(-1, small.k), labels.reshape(-1))
        else:
            def fn(p):
                pred = torch.func.functional_call(model, p, (x,))
                return ((pred - targets) ** 2).mean()
        return fn, dict(model.named_parameters())
    raise ConfigError(f"unknown grad-check op {op_name!r}")


GRAD_CHECK_OPS = ("linear", "rmsnorm", "swiglu", "mha", "cnn", "kin_head", "ssl_head",
                  "block", "model_ssl", "model_finetune")


def grad_check(op_name: str, params: dict | None = None, input=None, seed: int = 0,
               cfg: ModelConfig | None = None, max_entries: int = 24) -> float:
    """Max relative error between autograd and central differences for ``op_name``.

    ``params`` overrides the generated parameter tensors; ``input`` is
    accepted for ops whose input is a free tensor (linear, rmsnorm, swiglu).
    """
    fn, default_params = _grad_check_setup(op_name, seed, cfg)
    if params is not None:
        default_params = {**default_params, **params}
    if input is not None:
        x = torch.as_tensor(input, dtype=torch.float64)
        if op_name == "rmsnorm":
            default_params["x"] = x
        elif op_name == "linear":
            fn = lambda p: F.linear(x, p["weight"], p["bias"])  # noqa: E731
        elif op_name == "swiglu":
            fn = lambda p: swiglu_ffn(x, p["w1"], p["w3"], p["w2"])  # noqa: E731
        else:
            raise ConfigError(f"op {op_name!r} does not take an explicit input")
    errs = finite_difference_check(fn, default_params, seed=seed, max_entries=max_entries)
    return max(errs.values())


# -- checkpoint file ------------------------------------------------------------

CHECKPOINT_MAGIC = b"SPCK"
CHECKPOINT_VERSION = 1


def write_checkpoint(path, model: SpectreModel) -> None:
    """SPCK file: header, config hash, then name-sorted f32 tensor records."""
    state = {k: v.detach().cpu().numpy() for k, v in model.named_parameters()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h = model.config_hash().encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(h)))
        fh.write(h)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f4")
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)) + nb)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path) -> tuple[str, dict]:
    """Return (config hash, {name: float32 array})."""
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(buf):
            raise TruncatedPayloadError("checkpoint is truncated")
        vals = struct.unpack_from(fmt, buf, off)
        off += size
        return vals

    _, version, hlen = take("<4sII")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (h,) = take(f"<{hlen}s")
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = take("<I")
        (name,) = take(f"<{nlen}s")
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        if off + 4 * n > len(buf):
            raise TruncatedPayloadError("checkpoint is truncated")
        tensors[name.decode()] = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(shape).copy()
        off += 4 * n
    if off != len(buf):
        raise ShapeMismatchError("checkpoint has trailing bytes")
    return h.decode(), tensors


def load_checkpoint(path, model: SpectreModel, strict_hash: bool = True) -> None:
    h, tensors = read_checkpoint(path)
    if strict_hash and h != model.config_hash():
        raise HashMismatchError(
            f"checkpoint {path} has config hash {h}, current config hashes to {model.config_hash()}")
    own = dict(model.named_parameters())
    if set(own) != set(tensors):
        raise ShapeMismatchError("checkpoint parameter names do not match the model")
    with torch.no_grad():
        for name, p in own.items():
            if tuple(p.shape) != tensors[name].shape:
                raise ShapeMismatchError(f"shape mismatch for {name}")
            p.copy_(torch.from_numpy(tensors[name]))
