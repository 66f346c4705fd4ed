"""Full classification network: conv stem, gate-shift-fuse block, feature
tokenizer, transformer encoder, linear softmax head.

All stage functions accept a single sample or a batch (leading axis). Ablation
flags on ModelConfig disable individual stages; the remaining pipeline rewires
itself and the feature width follows (see feature_geometry).
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .gsf import GSFParams, gsf_forward, init_gsf_params
from .tensor import (
    DEFAULT_DTYPE,
    ShapeError,
    Tensor,
    add,
    concat,
    conv2d,
    conv3d,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    narrow,
    relu,
    reshape,
    softmax,
    transpose,
)


@dataclass
class ModelConfig:
    num_classes: int
    patch_size: int = 13
    pca_bands: int = 30
    conv3d_out: int = 8
    conv2d_out: int = 64
    tokens: int = 4
    heads: int = 4
    te_depth: int = 1
    mlp_hidden: int = 0          # 0 = default 4x feature width
    gsf_enabled: bool = True
    te_enabled: bool = True
    conv2d_enabled: bool = True
    conv3d_enabled: bool = True
    gsf_position: str = "post3d"

    def __post_init__(self):
        if self.patch_size % 2 == 0:
            raise ValueError(f"patch size must be odd, got {self.patch_size}")
        if self.tokens < 1:
            raise ValueError(f"token count must be at least 1, got {self.tokens}")
        if self.gsf_position not in ("post3d", "post2d-reshaped"):
            raise ValueError(f"unknown gsf position {self.gsf_position!r}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        n, z = feature_geometry(self)
        if z % self.heads != 0:
            raise ValueError(
                f"head count {self.heads} must divide the feature width {z} "
                f"(this configuration's token width)")
        if self.mlp_hidden == 0:
            self.mlp_hidden = 4 * z
        if self.gsf_enabled:
            if not self.conv2d_enabled and not self.conv3d_enabled:
                raise ValueError(
                    "the gate-shift-fuse block needs a convolution stage; "
                    "disable it as well for the flat-spectra pipeline")
            c = self.conv3d_out
            if c % 2 != 0:
                raise ValueError(f"gate-shift-fuse needs an even channel count, got {c}")
            if self._gsf_effective_position() == "post2d-reshaped" and self.conv2d_out % c != 0:
                raise ValueError(
                    f"channel-grouped reshape needs {c} to divide {self.conv2d_out}")

    def _gsf_effective_position(self):
        if not self.conv3d_enabled:
            return "post2d-reshaped"
        return self.gsf_position

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def feature_geometry(config):
    """(N, z) of the tokenizer input X for this configuration.

    Full pipeline: N=(s-4)^2, z=conv2d_out. Without the 2-D conv the merged
    3-D features feed the tokenizer directly (z = conv3d_out*(b-2)); without
    the 3-D conv the 2-D conv consumes raw bands (N=(s-2)^2); with neither,
    pixels feed the tokenizer as raw spectra (N=s^2, z=b).
    """
    s, b = config.patch_size, config.pca_bands
    if config.conv3d_enabled and config.conv2d_enabled:
        return (s - 4) ** 2, config.conv2d_out
    if config.conv3d_enabled:
        return (s - 2) ** 2, config.conv3d_out * (b - 2)
    if config.conv2d_enabled:
        return (s - 2) ** 2, config.conv2d_out
    return s * s, b


def config_hash(config):
    """64-bit FNV-1a over the canonical (sorted-key) JSON of the config."""
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    h = 0xCBF29CE484222325
    for byte in blob.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _xavier(rng, shape, fan_in, fan_out, dtype):
    std = float(np.sqrt(2.0 / (fan_in + fan_out)))
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, dtype=dtype)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def _ones(shape, dtype):
    return Tensor(np.ones(shape), requires_grad=True, dtype=dtype)


@dataclass
class TELayerParams:
    ln1_gain: Tensor
    ln1_shift: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor


@dataclass
class ModelParams:
    config: ModelConfig
    conv3d_kernel: Tensor = None
    conv3d_bias: Tensor = None
    gsf: GSFParams = None
    conv2d_kernel: Tensor = None
    conv2d_bias: Tensor = None
    tokenizer_wa: Tensor = None
    cls_token: Tensor = None
    pos_embed: Tensor = None
    te_layers: list = field(default_factory=list)
    head_weight: Tensor = None
    head_bias: Tensor = None

    def named_tensors(self):
        """Ordered (name, Tensor) pairs for every parameter present."""
        out = []
        if self.conv3d_kernel is not None:
            out += [("conv3d.kernel", self.conv3d_kernel), ("conv3d.bias", self.conv3d_bias)]
        if self.gsf is not None:
            for g in range(2):
                out += [(f"gsf.gate.{g}.kernel", self.gsf.gate_kernels[g]),
                        (f"gsf.gate.{g}.bias", self.gsf.gate_biases[g]),
                        (f"gsf.fuse.{g}.kernel", self.gsf.fuse_kernels[g]),
                        (f"gsf.fuse.{g}.bias", self.gsf.fuse_biases[g])]
        if self.conv2d_kernel is not None:
            out += [("conv2d.kernel", self.conv2d_kernel), ("conv2d.bias", self.conv2d_bias)]
        out.append(("tokenizer.wa", self.tokenizer_wa))
        if self.config.te_enabled:
            out += [("cls_token", self.cls_token), ("pos_embed", self.pos_embed)]
            for i, layer in enumerate(self.te_layers):
                out += [(f"te.{i}.ln1.gain", layer.ln1_gain), (f"te.{i}.ln1.shift", layer.ln1_shift),
                        (f"te.{i}.attn.wq", layer.wq), (f"te.{i}.attn.wk", layer.wk),
                        (f"te.{i}.attn.wv", layer.wv), (f"te.{i}.attn.wo", layer.wo),
                        (f"te.{i}.ln2.gain", layer.ln2_gain), (f"te.{i}.ln2.shift", layer.ln2_shift),
                        (f"te.{i}.mlp.w1", layer.mlp_w1), (f"te.{i}.mlp.b1", layer.mlp_b1),
                        (f"te.{i}.mlp.w2", layer.mlp_w2), (f"te.{i}.mlp.b2", layer.mlp_b2)]
        out += [("head.weight", self.head_weight), ("head.bias", self.head_bias)]
        return out

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def zero_grads(self):
        for t in self.tensors():
            t.grad = None


def init_params(config, seed, dtype=DEFAULT_DTYPE):
    """Draw all parameters from one seeded generator in a fixed order.

    Weight matrices and kernels are Xavier-normal, biases and the cls token
    zero, position embeddings N(0, 0.02^2), layer-norm gains one.
    """
    rng = np.random.default_rng(seed)
    n_pos, z = feature_geometry(config)
    p = ModelParams(config=config)
    b = config.pca_bands
    if config.conv3d_enabled:
        c3 = config.conv3d_out
        p.conv3d_kernel = _xavier(rng, (c3, 1, 3, 3, 3), 27, c3 * 27, dtype)
        p.conv3d_bias = _zeros((c3,), dtype)
    if config.gsf_enabled:
        p.gsf = init_gsf_params(config.conv3d_out // 2, rng, dtype)
    if config.conv2d_enabled:
        cin = config.conv3d_out * (b - 2) if config.conv3d_enabled else b
        z2 = config.conv2d_out
        p.conv2d_kernel = _xavier(rng, (z2, cin, 3, 3), cin * 9, z2 * 9, dtype)
        p.conv2d_bias = _zeros((z2,), dtype)
    p.tokenizer_wa = _xavier(rng, (z, config.tokens), z, config.tokens, dtype)
    if config.te_enabled:
        p.cls_token = _zeros((1, z), dtype)
        p.pos_embed = Tensor(rng.normal(0.0, 0.02, size=(config.tokens + 1, z)),
                             requires_grad=True, dtype=dtype)
        hidden = config.mlp_hidden
        for _ in range(config.te_depth):
            p.te_layers.append(TELayerParams(
                ln1_gain=_ones((z,), dtype), ln1_shift=_zeros((z,), dtype),
                wq=_xavier(rng, (z, z), z, z, dtype),
                wk=_xavier(rng, (z, z), z, z, dtype),
                wv=_xavier(rng, (z, z), z, z, dtype),
                wo=_xavier(rng, (z, z), z, z, dtype),
                ln2_gain=_ones((z,), dtype), ln2_shift=_zeros((z,), dtype),
                mlp_w1=_xavier(rng, (z, hidden), z, hidden, dtype),
                mlp_b1=_zeros((hidden,), dtype),
                mlp_w2=_xavier(rng, (hidden, z), hidden, z, dtype),
                mlp_b2=_zeros((z,), dtype)))
    p.head_weight = _xavier(rng, (z, config.num_classes), z, config.num_classes, dtype)
    p.head_bias = _zeros((config.num_classes,), dtype)
    return p


def _lift(x, rank):
    """Add a singleton batch axis when x is a single sample of given rank."""
    if x.ndim == rank:
        return reshape(x, (1,) + x.shape), False
    if x.ndim == rank + 1:
        return x, True
    raise ShapeError(f"expected rank {rank} or {rank + 1}, got shape {x.shape}")


def _apply_gsf_grouped(x, params, config, trace):
    """Reshape (B, z, H, W) into channel groups, run the block, flatten back."""
    bsz, z2, h, w = x.shape
    c = config.conv3d_out
    grouped = reshape(x, (bsz, c, z2 // c, h, w))
    grouped = gsf_forward(grouped, params.gsf)
    if trace is not None:
        trace["gsf"] = grouped.shape[1:]
    return reshape(grouped, (bsz, z2, h, w))


def stem_forward(patch, params, config, trace=None):
    """Patch (b, s, s) or (B, b, s, s) -> feature matrix X (N, z) or (B, N, z)."""
    x, batched = _lift(patch, 3)
    bsz = x.shape[0]
    expected = (config.pca_bands, config.patch_size, config.patch_size)
    if x.shape[1:] != expected:
        raise ShapeError(f"patch shape {x.shape[1:]} does not match config {expected}")
    if config.conv3d_enabled:
        cube = reshape(x, (bsz, 1) + expected)
        cube = relu(conv3d(cube, params.conv3d_kernel, params.conv3d_bias))
        if trace is not None:
            trace["conv3d"] = cube.shape[1:]
        if config.gsf_enabled and config._gsf_effective_position() == "post3d":
            cube = gsf_forward(cube, params.gsf)
            if trace is not None:
                trace["gsf"] = cube.shape[1:]
        c3, t, hh, ww = cube.shape[1:]
        x = reshape(cube, (bsz, c3 * t, hh, ww))    # channel-major, spectral within
        if trace is not None:
            trace["merge"] = x.shape[1:]
    if config.conv2d_enabled:
        x = relu(conv2d(x, params.conv2d_kernel, params.conv2d_bias))
        if trace is not None:
            trace["conv2d"] = x.shape[1:]
        if config.gsf_enabled and config._gsf_effective_position() == "post2d-reshaped":
            x = _apply_gsf_grouped(x, params, config, trace)
    ch, hh, ww = x.shape[1:]
    features = transpose(reshape(x, (bsz, ch, hh * ww)), (0, 2, 1))
    if trace is not None:
        trace["features"] = features.shape[1:]
    return features if batched else reshape(features, features.shape[1:])


def tokenize(x, wa, trace=None):
    """X (N, z) or (B, N, z) with Wa (z, w) -> tokens (w, z) or (B, w, z).

    Attention A = softmax over the N spatial positions of X.Wa, so each token
    is a convex combination of pixel features.
    """
    xb, batched = _lift(x, 2)
    if xb.shape[-1] != wa.shape[0]:
        raise ShapeError(f"feature width {xb.shape[-1]} does not match Wa rows {wa.shape[0]}")
    scores = matmul(xb, wa)                     # (B, N, w)
    attention = softmax(scores, axis=-2)        # columns sum to 1 over N
    if trace is not None:
        trace["attention"] = attention.shape[1:]
    tokens = matmul(transpose(attention, (0, 2, 1)), xb)
    if trace is not None:
        trace["tokens"] = tokens.shape[1:]
    return tokens if batched else reshape(tokens, tokens.shape[1:])


def _attention(x, layer, heads):
    """Pre-norm multi-head self-attention over (B, S, z)."""
    bsz, s, z = x.shape
    dk = z // heads
    q = matmul(x, layer.wq)
    k = matmul(x, layer.wk)
    v = matmul(x, layer.wv)

    def split(t):
        return transpose(reshape(t, (bsz, s, heads, dk)), (0, 2, 1, 3))

    q, k, v = split(q), split(k), split(v)
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / float(np.sqrt(dk)))
    weights = softmax(scores, axis=-1)
    per_head = matmul(weights, v)               # (B, h, S, dk)
    merged = reshape(transpose(per_head, (0, 2, 1, 3)), (bsz, s, z))
    return matmul(merged, layer.wo)


def transformer_encode(tokens, params, config, trace=None):
    """Tokens (w, z) or (B, w, z) -> encoded sequence ((w+1), z) or (B, w+1, z).

    Prepends the learnable cls token, adds position embeddings, then applies
    te_depth pre-norm blocks: x += MSA(LN(x)); x += MLP(LN(x)).
    """
    x, batched = _lift(tokens, 2)
    bsz, w, z = x.shape
    cls_row = add(Tensor(np.zeros((bsz, 1, z), dtype=x.data.dtype)), params.cls_token)
    x = concat([cls_row, x], axis=1)
    x = add(x, params.pos_embed)
    if trace is not None:
        trace["te_in"] = x.shape[1:]
    for layer in params.te_layers:
        normed = layer_norm(x, layer.ln1_gain, layer.ln1_shift)
        x = add(x, _attention(normed, layer, config.heads))
        normed = layer_norm(x, layer.ln2_gain, layer.ln2_shift)
        hidden = gelu(add(matmul(normed, layer.mlp_w1), layer.mlp_b1))
        x = add(x, add(matmul(hidden, layer.mlp_w2), layer.mlp_b2))
    if trace is not None:
        trace["te_out"] = x.shape[1:]
    return x if batched else reshape(x, x.shape[1:])


def classify_head(t0, params):
    """Feature row(s) (z,), (1, z) or (B, z) -> class probabilities."""
    return softmax(_head_logits(t0, params), axis=-1)


def _head_logits(t0, params):
    if t0.ndim == 1:
        t0 = reshape(t0, (1,) + t0.shape)
    return add(matmul(t0, params.head_weight), params.head_bias)


def model_logits(patch_batch, params, config, trace=None):
    """Composition up to the linear head, returning (B, C) logits.

    A single (b, s, s) patch is treated as a batch of one, yielding (1, C).
    """
    x, _ = _lift(patch_batch, 3)
    features = stem_forward(x, params, config, trace)
    tokens = tokenize(features, params.tokenizer_wa, trace)
    if config.te_enabled:
        encoded = transformer_encode(tokens, params, config, trace)
        pooled = reshape(narrow(encoded, 1, 0, 1), (x.shape[0], encoded.shape[-1]))
    else:
        pooled = mean(tokens, axis=1)           # no encoder: average the tokens
    logits = _head_logits(pooled, params)
    if trace is not None:
        trace["logits"] = logits.shape
    return logits


def model_forward(patch_batch, params, config, trace=None):
    """Patches -> (B, C) class probabilities (softmax of model_logits)."""
    return softmax(model_logits(patch_batch, params, config, trace), axis=-1)
