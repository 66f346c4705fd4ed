"""Gate-shift-fuse block over channel-grouped spectral feature cubes.

Input (C, T, H, W) splits into two channel groups. Each group is gated by a
tanh-calibrated single-kernel 3-D convolution, the gated stream is shifted one
spectral slice (group 1 forward, group 2 backward, zero fill), both streams
are spatially pooled to (C/2, T) planes, and a sigmoid-calibrated 2-D
convolution over the stacked planes produces per-(channel, slice) fusion
weights blending the shifted stream with the residual.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    add,
    concat,
    conv2d,
    conv3d,
    mean,
    mul,
    reshape,
    shift_axis,
    sigmoid_act,
    stack,
    sub,
    tanh_act,
)


@dataclass
class GSFParams:
    """Two gate kernels (one per channel group) and two fuse kernels.

    gate_kernels[g]: (1, C/2, 3, 3, 3) with bias (1,);
    fuse_kernels[g]: (1, 2, 3, 3) with bias (1,), applied on the pooled
    (C/2, T) plane.
    """
    gate_kernels: list
    gate_biases: list
    fuse_kernels: list
    fuse_biases: list

    def tensors(self):
        out = []
        for g in range(2):
            out += [self.gate_kernels[g], self.gate_biases[g],
                    self.fuse_kernels[g], self.fuse_biases[g]]
        return out


def init_gsf_params(half_channels, rng, dtype=np.float32):
    """Xavier-normal kernels, zero biases, for groups of `half_channels`."""
    gate_k, gate_b, fuse_k, fuse_b = [], [], [], []
    for _ in range(2):
        fan_in = half_channels * 27
        std = float(np.sqrt(2.0 / (fan_in + 27)))
        gate_k.append(Tensor(rng.normal(0.0, std, size=(1, half_channels, 3, 3, 3)),
                             requires_grad=True, dtype=dtype))
        gate_b.append(Tensor(np.zeros(1), requires_grad=True, dtype=dtype))
        std = float(np.sqrt(2.0 / (2 * 9 + 9)))
        fuse_k.append(Tensor(rng.normal(0.0, std, size=(1, 2, 3, 3)),
                             requires_grad=True, dtype=dtype))
        fuse_b.append(Tensor(np.zeros(1), requires_grad=True, dtype=dtype))
    return GSFParams(gate_k, gate_b, fuse_k, fuse_b)


def spectral_shift(x, direction):
    """Move slices one step along the spectral axis, zero at the vacated edge.

    Accepts (C', T, H, W) or batched (B, C', T, H, W); 'forward' sends slice t
    to t+1, 'backward' sends t to t-1.
    """
    axis = 2 if x.ndim == 5 else 1
    return shift_axis(x, axis, direction)


def gsf_forward(x, params, gate_override=None, fuse_override=None):
    """Apply the block; shape in == shape out.

    x: (C, T, H, W) or batched (B, C, T, H, W). The override hooks replace the
    calibrated gate / fusion maps with constants for reduction tests.
    """
    batched = x.ndim == 5
    c = x.shape[1] if batched else x.shape[0]
    if c % 2 != 0:
        raise ValueError(f"channel count must be even, got {c}")
    t_extent = x.shape[2] if batched else x.shape[1]
    if t_extent < 1:
        raise ValueError("spectral extent must be at least 1")
    half = c // 2
    channel_axis = 1 if batched else 0
    outputs = []
    for g in range(2):
        xg = _narrow_channels(x, channel_axis, g * half, half)
        if gate_override is None:
            gate = tanh_act(conv3d(xg, params.gate_kernels[g], params.gate_biases[g], padding=1))
        else:
            shape = ((x.shape[0], 1) if batched else (1,)) + xg.shape[channel_axis + 1:]
            gate = Tensor(np.full(shape, gate_override, dtype=x.data.dtype))
        gated = mul(gate, xg)                  # gate broadcasts over channels
        residual = sub(xg, gated)
        shifted = spectral_shift(gated, "forward" if g == 0 else "backward")
        # pool H and W away, keep (C/2, T) planes per stream
        pooled = stack([_pool_hw(shifted), _pool_hw(residual)], axis=channel_axis)
        if fuse_override is None:
            weights = sigmoid_act(conv2d(pooled, params.fuse_kernels[g],
                                         params.fuse_biases[g], padding=1))
        else:
            wshape = ((x.shape[0], 1) if batched else (1,)) + (half, t_extent)
            weights = Tensor(np.full(wshape, fuse_override, dtype=x.data.dtype))
        # (1, C/2, T) -> (C/2, T, 1, 1) to broadcast over H, W
        wflat = reshape(weights, ((x.shape[0], half, t_extent, 1, 1) if batched
                                  else (half, t_extent, 1, 1)))
        one_minus = sub(1.0, wflat)
        outputs.append(add(mul(wflat, shifted), mul(one_minus, residual)))
    return concat(outputs, axis=channel_axis)


def _narrow_channels(x, axis, start, length):
    from .tensor import narrow
    return narrow(x, axis, start, length)


def _pool_hw(x):
    """Average over the trailing two spatial axes: (..., C', T, H, W) -> (..., C', T)."""
    return mean(mean(x, axis=-1), axis=-1)
