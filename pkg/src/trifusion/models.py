"""Model architectures: CNN autoencoder baseline and the tri-modal fusion AE.

Parameters are plain numpy arrays inside dataclasses, so snapshots are
immutable-by-convention and thread-shareable.  Forward functions accept
either a parameter dataclass (wrapped as constants, e.g. for attacks that
only need input gradients) or the namespace produced by watch_params()
(leaf tensors on a tape, for training).

Layer schedule (paper gives channel counts, not kernel tables):
  lidar encoder   4 -> 8 -> 4 -> 1 channels, strides 2,2,1  (H/4 latent grid)
  lidar decoder   1 -> 4 -> 8 -> 4 channels, strides 1,2,2
  depth module    3 -> 8 -> 8 -> 8 -> 1, two stride-2 downs, two stride-2 ups
LiDAR values live in [-255, 255]; a fixed 1/255 input scale and 255 output
scale keep conv activations at unit magnitude.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import rng
from .errors import ConfigError, ContractError, DimensionError, InputError, NumericalError
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    concat_rows,
    conv2d,
    conv2d_transpose,
    matmul,
    mse_loss,
    relu,
    reshape,
    scale,
    softmax_lastdim,
    transpose,
)

IO_SCALE = 255.0
ENCODER_TOTAL_STRIDE = 4
DEPTH_TOTAL_STRIDE = 4
LAMBDA_DEPTH = 0.5
LAMBDA_TEXT = 0.5


@dataclass
class ModelConfig:
    """Shared dimensions for models, scenes and the harness."""

    lidar_channels: int = 4
    lidar_h: int = 32
    lidar_w: int = 32
    n_views: int = 6
    view_h: int = 64
    view_w: int = 64
    embed_dim: int = 256
    heads: int = 4
    text_dim: int = 512
    depth_patch: int = 16
    text_single_token: bool = True

    def validate(self):
        if self.lidar_h % ENCODER_TOTAL_STRIDE or self.lidar_w % ENCODER_TOTAL_STRIDE:
            raise DimensionError(
                f"lidar dims {self.lidar_h}x{self.lidar_w} must be divisible by {ENCODER_TOTAL_STRIDE}"
            )
        if self.view_h % DEPTH_TOTAL_STRIDE or self.view_w % DEPTH_TOTAL_STRIDE:
            raise DimensionError(
                f"view dims {self.view_h}x{self.view_w} must be divisible by {DEPTH_TOTAL_STRIDE}"
            )
        if self.view_h % self.depth_patch or self.view_w % self.depth_patch:
            raise DimensionError(
                f"view dims {self.view_h}x{self.view_w} must be divisible by patch {self.depth_patch}"
            )
        if self.embed_dim % self.heads:
            raise ConfigError(f"heads {self.heads} must divide embed dim {self.embed_dim}")
        if self.n_views < 1:
            raise ConfigError("need at least one camera view")
        return self

    @property
    def latent_hw(self):
        return self.lidar_h // ENCODER_TOTAL_STRIDE, self.lidar_w // ENCODER_TOTAL_STRIDE

    @property
    def lidar_tokens(self):
        lh, lw = self.latent_hw
        return lh * lw

    @property
    def tokens_per_view(self):
        return (self.view_h // self.depth_patch) * (self.view_w // self.depth_patch)

    @property
    def depth_tokens(self):
        return self.n_views * self.tokens_per_view

    @property
    def text_tokens(self):
        return 1 if self.text_single_token else self.text_dim


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class CnnAeParams:
    enc1: np.ndarray  # (8, C, 4, 4) stride 2
    enc2: np.ndarray  # (4, 8, 4, 4) stride 2
    enc3: np.ndarray  # (1, 4, 3, 3) stride 1
    dec1: np.ndarray  # (1, 4, 3, 3) transpose, stride 1
    dec2: np.ndarray  # (4, 8, 4, 4) transpose, stride 2
    dec3: np.ndarray  # (8, C, 4, 4) transpose, stride 2


@dataclass
class DepthParams:
    down1: np.ndarray  # (8, 3, 4, 4) stride 2
    down2: np.ndarray  # (8, 8, 4, 4) stride 2
    up1: np.ndarray  # (8, 8, 4, 4) transpose, stride 2
    up2: np.ndarray  # (8, 1, 4, 4) transpose, stride 2


@dataclass
class EmbedParams:
    lidar_proj: np.ndarray  # (1, d)
    depth_proj: np.ndarray  # (patch*patch, d)
    text_proj: np.ndarray  # (text_dim, d) or (1, d) in per-scalar mode
    pos_lidar: np.ndarray  # (lidar_tokens, d)
    pos_depth: np.ndarray  # (depth_tokens, d)
    pos_text: np.ndarray  # (text_tokens, d)


@dataclass
class FusionParams:
    heads: int
    w_q: list  # shared lidar query projections, one (d, d/h) per head
    w_k_depth: list
    w_v_depth: list
    w_k_text: list
    w_v_text: list
    w_o: list  # per-head output projections (d/h, d), summed
    lambda_depth: float = LAMBDA_DEPTH
    lambda_text: float = LAMBDA_TEXT


@dataclass
class TriFusionParams:
    cnn: CnnAeParams
    depth: DepthParams
    embed: EmbedParams
    fusion: FusionParams
    stage1: np.ndarray  # (d, 1) token-wise linear decoder


# ---------------------------------------------------------------------------
# initialisation


def _uniform_init(seed, name, shape, fan_in):
    s = rng.stream(seed, "init:" + name)
    bound = 1.0 / math.sqrt(fan_in)
    return s.uniform(int(np.prod(shape)), -bound, bound).reshape(shape)


def _pos_init(seed, name, shape):
    s = rng.stream(seed, "init:" + name)
    return (s.normal(int(np.prod(shape))) * np.float32(0.02)).reshape(shape)


def init_cnn_ae(cfg: ModelConfig, seed: int) -> CnnAeParams:
    c = cfg.lidar_channels
    return CnnAeParams(
        enc1=_uniform_init(seed, "cnn.enc1", (8, c, 4, 4), c * 16),
        enc2=_uniform_init(seed, "cnn.enc2", (4, 8, 4, 4), 8 * 16),
        enc3=_uniform_init(seed, "cnn.enc3", (1, 4, 3, 3), 4 * 9),
        dec1=_uniform_init(seed, "cnn.dec1", (1, 4, 3, 3), 1 * 9),
        dec2=_uniform_init(seed, "cnn.dec2", (4, 8, 4, 4), 4 * 16),
        dec3=_uniform_init(seed, "cnn.dec3", (8, c, 4, 4), 8 * 16),
    )


def init_depth(cfg: ModelConfig, seed: int) -> DepthParams:
    return DepthParams(
        down1=_uniform_init(seed, "depth.down1", (8, 3, 4, 4), 3 * 16),
        down2=_uniform_init(seed, "depth.down2", (8, 8, 4, 4), 8 * 16),
        up1=_uniform_init(seed, "depth.up1", (8, 8, 4, 4), 8 * 16),
        up2=_uniform_init(seed, "depth.up2", (8, 1, 4, 4), 8 * 16),
    )


def init_embed(cfg: ModelConfig, seed: int) -> EmbedParams:
    d = cfg.embed_dim
    p2 = cfg.depth_patch * cfg.depth_patch
    text_in = cfg.text_dim if cfg.text_single_token else 1
    return EmbedParams(
        lidar_proj=_uniform_init(seed, "embed.lidar_proj", (1, d), 1),
        depth_proj=_uniform_init(seed, "embed.depth_proj", (p2, d), p2),
        text_proj=_uniform_init(seed, "embed.text_proj", (text_in, d), text_in),
        pos_lidar=_pos_init(seed, "embed.pos_lidar", (cfg.lidar_tokens, d)),
        pos_depth=_pos_init(seed, "embed.pos_depth", (cfg.depth_tokens, d)),
        pos_text=_pos_init(seed, "embed.pos_text", (cfg.text_tokens, d)),
    )


def init_fusion(cfg: ModelConfig, seed: int) -> FusionParams:
    d, h = cfg.embed_dim, cfg.heads
    dh = d // h

    def heads_of(label, shape, fan_in):
        return [_uniform_init(seed, f"fusion.{label}.{i}", shape, fan_in) for i in range(h)]

    return FusionParams(
        heads=h,
        w_q=heads_of("w_q", (d, dh), d),
        w_k_depth=heads_of("w_k_depth", (d, dh), d),
        w_v_depth=heads_of("w_v_depth", (d, dh), d),
        w_k_text=heads_of("w_k_text", (d, dh), d),
        w_v_text=heads_of("w_v_text", (d, dh), d),
        w_o=heads_of("w_o", (dh, d), dh),
    )


def init_trifusion(cfg: ModelConfig, seed: int) -> TriFusionParams:
    cfg.validate()
    return TriFusionParams(
        cnn=init_cnn_ae(cfg, seed),
        depth=init_depth(cfg, seed),
        embed=init_embed(cfg, seed),
        fusion=init_fusion(cfg, seed),
        stage1=_uniform_init(seed, "stage1", (cfg.embed_dim, 1), cfg.embed_dim),
    )


# ---------------------------------------------------------------------------
# parameter plumbing


def named_arrays(params, prefix: str = ""):
    """Yield (stable name, array) for every learnable array, depth-first."""
    for f in dataclasses.fields(params):
        val = getattr(params, f.name)
        name = prefix + f.name
        if isinstance(val, np.ndarray):
            yield name, val
        elif isinstance(val, list):
            for i, arr in enumerate(val):
                yield f"{name}.{i}", arr
        elif dataclasses.is_dataclass(val):
            yield from named_arrays(val, name + ".")


def watch_params(params, tape: Tape | None = None):
    """Mirror a parameter dataclass as tensors.

    With a tape, every array becomes a gradient-tracked leaf; without one,
    constants.  Returns (namespace, {name: leaf tensor}).
    """
    leaves = {}

    def build(obj, prefix):
        ns = SimpleNamespace()
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            name = prefix + f.name
            if isinstance(val, np.ndarray):
                t = Tensor(val, tape=tape, requires_grad=tape is not None)
                leaves[name] = t
                setattr(ns, f.name, t)
            elif isinstance(val, list):
                ts = []
                for i, arr in enumerate(val):
                    t = Tensor(arr, tape=tape, requires_grad=tape is not None)
                    leaves[f"{name}.{i}"] = t
                    ts.append(t)
                setattr(ns, f.name, ts)
            elif dataclasses.is_dataclass(val):
                setattr(ns, f.name, build(val, name + "."))
            else:
                setattr(ns, f.name, val)
        return ns

    return build(params, ""), leaves


def _tensors(params):
    """Accept a dataclass (wrap as constants) or an existing namespace."""
    if isinstance(params, SimpleNamespace):
        return params
    return watch_params(params, None)[0]


def load_arrays(params, mapping: dict):
    """Copy checkpoint arrays into a parameter dataclass, by name."""
    for name, arr in named_arrays(params):
        if name not in mapping:
            raise ContractError(f"checkpoint is missing parameter {name!r}")
        src = mapping[name]
        if src.shape != arr.shape:
            raise ContractError(f"checkpoint {name!r}: shape {src.shape} != expected {arr.shape}")
        arr[...] = src
    return params


# ---------------------------------------------------------------------------
# forwards


def cnn_encode(p, x: Tensor) -> Tensor:
    p = _tensors(p)
    h = scale(x, 1.0 / IO_SCALE)
    h = relu(conv2d(h, p.enc1, stride=2, padding=1))
    h = relu(conv2d(h, p.enc2, stride=2, padding=1))
    return conv2d(h, p.enc3, stride=1, padding=1)


def cnn_decode(p, z: Tensor) -> Tensor:
    p = _tensors(p)
    h = relu(conv2d_transpose(z, p.dec1, stride=1, padding=1))
    h = relu(conv2d_transpose(h, p.dec2, stride=2, padding=1))
    h = conv2d_transpose(h, p.dec3, stride=2, padding=1)
    return scale(h, IO_SCALE)


def cnn_ae_forward(p, x: Tensor):
    """(latent, reconstruction) of a (C, H, W) range image."""
    _, h, w = x.shape
    if h % ENCODER_TOTAL_STRIDE or w % ENCODER_TOTAL_STRIDE:
        raise DimensionError(f"input {h}x{w} not divisible by encoder stride {ENCODER_TOTAL_STRIDE}")
    p = _tensors(p)
    latent = cnn_encode(p, x)
    return latent, cnn_decode(p, latent)


def depth_forward(p, img: Tensor) -> Tensor:
    """(3, H, W) image -> (1, H, W) depth map."""
    _, h, w = img.shape
    if h % DEPTH_TOTAL_STRIDE or w % DEPTH_TOTAL_STRIDE:
        raise DimensionError(f"view {h}x{w} not divisible by depth stride {DEPTH_TOTAL_STRIDE}")
    p = _tensors(p)
    z = relu(conv2d(img, p.down1, stride=2, padding=1))
    z = relu(conv2d(z, p.down2, stride=2, padding=1))
    z = relu(conv2d_transpose(z, p.up1, stride=2, padding=1))
    return conv2d_transpose(z, p.up2, stride=2, padding=1)


def _patchify(x: Tensor, patch: int) -> Tensor:
    """(1, H, W) -> (H/p * W/p, p*p) row-major patch rows."""
    _, h, w = x.shape
    if h % patch or w % patch:
        raise DimensionError(f"map {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    t = reshape(x, (gh, patch, gw, patch))
    t = transpose(t, (0, 2, 1, 3))
    return reshape(t, (gh * gw, patch * patch))


def tokenize(modality: str, x, embed, cfg: ModelConfig) -> Tensor:
    """Project one modality into (n_tokens, d) and add positional rows.

    depth_map accepts a single (1,H,W) map or a list of per-view maps in
    fixed camera order; the positional table length must equal the total
    token count.
    """
    embed = embed if isinstance(embed, SimpleNamespace) else _tensors(embed)
    if modality == "lidar_latent":
        _, h, w = x.shape
        tok = matmul(reshape(x, (h * w, 1)), embed.lidar_proj)
        pos = embed.pos_lidar
    elif modality == "depth_map":
        maps = x if isinstance(x, (list, tuple)) else [x]
        blocks = [matmul(_patchify(m, cfg.depth_patch), embed.depth_proj) for m in maps]
        tok = blocks[0] if len(blocks) == 1 else concat_rows(blocks)
        pos = embed.pos_depth
    elif modality == "text_embedding":
        if x.size != cfg.text_dim:
            raise DimensionError(f"text embedding has {x.size} values, expected {cfg.text_dim}")
        if cfg.text_single_token:
            tok = matmul(reshape(x, (1, cfg.text_dim)), embed.text_proj)
        else:
            tok = matmul(reshape(x, (cfg.text_dim, 1)), embed.text_proj)
        pos = embed.pos_text
    else:
        raise ConfigError(f"unknown modality {modality!r}")
    if tok.shape[0] != pos.shape[0]:
        raise DimensionError(
            f"{modality}: {tok.shape[0]} tokens but positional table has {pos.shape[0]} rows"
        )
    return add(tok, pos)


def attention_rows(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d_head)) v for already-projected rows."""
    d_head = q.shape[1]
    scores = scale(matmul(q, transpose(k, (1, 0))), 1.0 / math.sqrt(d_head))
    return matmul(softmax_lastdim(scores), v)


def cross_attention(q_tokens: Tensor, kv_tokens: Tensor, fp, stream: str) -> Tensor:
    """Multi-head cross-attention; queries from LiDAR tokens.

    Per-head outputs go through per-head output projections and are summed,
    which equals concatenating heads and applying one (d, d) projection.
    """
    fp = fp if isinstance(fp, SimpleNamespace) else _tensors(fp)
    if stream == "depth":
        w_k, w_v = fp.w_k_depth, fp.w_v_depth
    elif stream == "text":
        w_k, w_v = fp.w_k_text, fp.w_v_text
    else:
        raise ConfigError(f"unknown attention stream {stream!r}")
    d = q_tokens.shape[1]
    if d % fp.heads:
        raise ConfigError(f"head count {fp.heads} does not divide token dim {d}")
    out = None
    for i in range(fp.heads):
        qh = matmul(q_tokens, fp.w_q[i])
        kh = matmul(kv_tokens, w_k[i])
        vh = matmul(kv_tokens, w_v[i])
        oh = matmul(attention_rows(qh, kh, vh), fp.w_o[i])
        out = oh if out is None else add(out, oh)
    return out


def fuse(attn_depth: Tensor, attn_text: Tensor) -> Tensor:
    """Equal-weight average of the two attention outputs."""
    return add(scale(attn_depth, LAMBDA_DEPTH), scale(attn_text, LAMBDA_TEXT))


def trifusion_forward(p, sample, cfg: ModelConfig, lidar: Tensor | None = None) -> Tensor:
    """Full pipeline; returns the (C, H, W) reconstruction.

    Pass lidar= a watched Tensor to obtain input gradients (attacks);
    otherwise the sample's own LiDAR image is used as a constant.
    """
    p = _tensors(p)
    x = lidar if lidar is not None else Tensor(sample.lidar)
    latent = cnn_encode(p.cnn, x)
    q = tokenize("lidar_latent", latent, p.embed, cfg)
    dmaps = [depth_forward(p.depth, Tensor(np.asarray(v, dtype=np.float32))) for v in sample.views]
    kd = tokenize("depth_map", dmaps, p.embed, cfg)
    kt = tokenize("text_embedding", Tensor(sample.text_emb), p.embed, cfg)
    fused = fuse(
        cross_attention(q, kd, p.fusion, "depth"),
        cross_attention(q, kt, p.fusion, "text"),
    )
    lh, lw = cfg.latent_hw
    z = reshape(matmul(fused, p.stage1), (1, lh, lw))
    return cnn_decode(p.cnn, z)


# ---------------------------------------------------------------------------
# optimisation


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.m = {name: np.zeros_like(arr) for name, arr in named_arrays(params)}
        self.v = {name: np.zeros_like(arr) for name, arr in named_arrays(params)}
        self.t = 0


def adam_step(params, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One in-place Adam update with bias correction."""
    state.t += 1
    t = state.t
    c1 = np.float32(1.0 - beta1 ** t)
    c2 = np.float32(1.0 - beta2 ** t)
    for name, arr in named_arrays(params):
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != arr.shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, parameter {arr.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= np.float32(beta1)
        m += np.float32(1.0 - beta1) * g
        v *= np.float32(beta2)
        v += np.float32(1.0 - beta2) * np.square(g)
        arr -= np.float32(lr) * (m / c1) / (np.sqrt(v / c2) + np.float32(eps))
    return params


def train(model: str, dataset, epochs: int, lr: float, seed: int,
          cfg: ModelConfig | None = None, batch_size: int = 4,
          beta1: float = 0.9, beta2: float = 0.999, adam_eps: float = 1e-8):
    """Train on clean reconstruction loss; returns (params, per-epoch losses).

    No adversarial training: inputs and targets are the clean LiDAR images.
    Deterministic given (model, dataset, seed).
    """
    dataset = list(dataset)
    if not dataset:
        raise InputError("training set is empty")
    cfg = (cfg or ModelConfig()).validate()
    if model == "cnn_ae":
        params = init_cnn_ae(cfg, seed)

        def recon_of(ns, s, x):
            return cnn_ae_forward(ns, x)[1]

    elif model == "trifusion":
        params = init_trifusion(cfg, seed)

        def recon_of(ns, s, x):
            return trifusion_forward(ns, s, cfg, lidar=x)

    else:
        raise ConfigError(f"unknown model {model!r}")

    state = AdamState(params)
    losses = []
    for epoch in range(epochs):
        order = rng.stream(seed, "train:shuffle", epoch).shuffled_indices(len(dataset))
        epoch_losses = []
        for start in range(0, len(dataset), batch_size):
            batch = [dataset[int(i)] for i in order[start : start + batch_size]]
            sums: dict = {}
            for s in batch:
                tape = Tape()
                ns, leaves = watch_params(params, tape)
                x = Tensor(s.lidar)
                loss = mse_loss(recon_of(ns, s, x), x)
                val = loss.item()
                if not math.isfinite(val):
                    raise NumericalError(f"non-finite training loss at epoch {epoch}")
                epoch_losses.append(val)
                backward(loss)
                for name, leaf in leaves.items():
                    if leaf.grad is None:
                        continue
                    if name in sums:
                        sums[name] += leaf.grad
                    else:
                        sums[name] = leaf.grad.copy()
            inv = np.float32(1.0 / len(batch))
            grads = {name: g * inv for name, g in sums.items()}
            adam_step(params, grads, state, lr, beta1, beta2, adam_eps)
        losses.append(float(np.mean(epoch_losses)))
    return params, losses
