"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written as straight-line loops or direct
formula transcription, sharing no code with the package under test.
"""

import numpy as np


def conv2d_loop(x, kernels, bias, pad=0):
    """Nested-loop 2-D cross-correlation. x (B,Ci,H,W), kernels (Co,Ci,kh,kw)."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    batch, ci, h, w = x.shape
    co, _, kh, kw = kernels.shape
    xp = np.zeros((batch, ci, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + w] = x
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    y = np.zeros((batch, co, ho, wo))
    for bi in range(batch):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = bias[o]
                    for c in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[bi, c, i + u, j + v] * kernels[o, c, u, v]
                    y[bi, o, i, j] = acc
    return y


def conv3d_loop(x, kernels, bias, pad=0):
    """Nested-loop 3-D cross-correlation. x (B,Ci,D,H,W), kernels (Co,Ci,kd,kh,kw)."""
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    batch, ci, d, h, w = x.shape
    co, _, kd, kh, kw = kernels.shape
    xp = np.zeros((batch, ci, d + 2 * pad, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:pad + d, pad:pad + h, pad:pad + w] = x
    do, ho, wo = d + 2 * pad - kd + 1, h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    y = np.zeros((batch, co, do, ho, wo))
    for bi in range(batch):
        for o in range(co):
            for t in range(do):
                for i in range(ho):
                    for j in range(wo):
                        acc = bias[o]
                        for c in range(ci):
                            for e in range(kd):
                                for u in range(kh):
                                    for v in range(kw):
                                        acc += (xp[bi, c, t + e, i + u, j + v]
                                                * kernels[o, c, e, u, v])
                        y[bi, o, t, i, j] = acc
    return y


def gsf_scripted(x, gate_kernels, gate_biases, fuse_kernels, fuse_biases):
    """Step-by-step evaluation of the gate-shift-fuse pipeline on one sample.

    x: (C, T, H, W); gate_kernels[g]: (1, C/2, 3, 3, 3); fuse_kernels[g]:
    (1, 2, 3, 3). Group 0 shifts forward, group 1 backward.
    """
    x = np.asarray(x, dtype=np.float64)
    c = x.shape[0]
    half = c // 2
    outputs = []
    for g in range(2):
        xg = x[g * half:(g + 1) * half]
        gate = np.tanh(conv3d_loop(xg[None], gate_kernels[g], gate_biases[g], pad=1)[0])
        gated = gate * xg                       # gate (1,T,H,W) broadcasts
        residual = xg - gated
        shifted = np.zeros_like(gated)
        if g == 0:
            shifted[:, 1:] = gated[:, :-1]
        else:
            shifted[:, :-1] = gated[:, 1:]
        pooled = np.stack([shifted.mean(axis=(2, 3)), residual.mean(axis=(2, 3))])
        raw = conv2d_loop(pooled[None], fuse_kernels[g], fuse_biases[g], pad=1)[0, 0]
        weights = 1.0 / (1.0 + np.exp(-raw))    # (C/2, T)
        w4 = weights[:, :, None, None]
        outputs.append(w4 * shifted + (1.0 - w4) * residual)
    return np.concatenate(outputs, axis=0)


def metrics_formulas(m):
    """Direct transcription of the OA / AA / kappa definitions."""
    m = np.asarray(m, dtype=np.float64)
    total = m.sum()
    po = np.trace(m) / total
    rows = m.sum(axis=1)
    cols = m.sum(axis=0)
    accs = [m[i, i] / rows[i] * 100.0 for i in range(m.shape[0]) if rows[i] > 0]
    aa = sum(accs) / len(accs)
    pe = sum(rows[i] * cols[i] for i in range(m.shape[0])) / (total * total)
    if pe >= 1.0:
        kappa = 1.0 if po >= 1.0 else 0.0
    else:
        kappa = (po - pe) / (1.0 - pe)
    return 100.0 * po, aa, 100.0 * kappa


def softmax_rows(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
