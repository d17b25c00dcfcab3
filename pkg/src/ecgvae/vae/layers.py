"""Array primitives with hand-written backward passes.

All tensors are channel-last (N, H, W, C). Convolution weights are stored as
(kh, kw, c_in, c_out). Each forward returns ``(out, cache)``; the matching
backward consumes the cache and the upstream gradient.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def conv2d_forward(x, w, b, stride=(1, 1)):
    """Zero-padded 'same'-style cross-correlation via im2col.

    Padding is ``kernel // 2`` on each axis, so stride 1 preserves the
    spatial shape and stride 2 halves it (for even sizes).
    """
    n, h, wd, c = x.shape
    kh, kw, _, cout = w.shape
    sh, sw = stride
    ph, pw = kh // 2, kw // 2
    ho = conv_out_size(h, kh, sh, ph)
    wo = conv_out_size(wd, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    s0, s1, s2, s3 = xp.strides
    cols = as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(s0, sh * s1, sw * s2, s1, s2, s3),
        writeable=False,
    ).reshape(n * ho * wo, kh * kw * c)
    out = cols @ w.reshape(kh * kw * c, cout)
    out += b
    return out.reshape(n, ho, wo, cout), (cols, x.shape, w, stride)


def conv2d_backward(dout, cache, need_dx=True):
    cols, xshape, w, (sh, sw) = cache
    n, h, wd, c = xshape
    kh, kw, _, cout = w.shape
    ph, pw = kh // 2, kw // 2
    _, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    if sh == 1 and sw == 1:
        # stride 1: the input gradient is a same-padded correlation of dout
        # with the spatially flipped, channel-swapped kernel
        w_flip = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
        dx, _ = conv2d_forward(dout, w_flip, np.zeros(c, dtype=dout.dtype))
        return dx, dw, db
    dcols = (d2 @ w.reshape(kh * kw * c, cout).T).reshape(n, ho, wo, kh, kw, c)
    dxp = np.zeros((n, h + 2 * ph, wd + 2 * pw, c), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw, :] += dcols[:, :, :, i, j, :]
    return dxp[:, ph:ph + h, pw:pw + wd, :], dw, db


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out > 0


def relu_backward(dout, mask):
    return dout * mask


def upsample_forward(x, factor):
    """Nearest-neighbour upsampling by integer factors (fh, fw)."""
    fh, fw = factor
    out = x
    if fh > 1:
        out = out.repeat(fh, axis=1)
    if fw > 1:
        out = out.repeat(fw, axis=2)
    return out


def upsample_backward(dout, factor):
    fh, fw = factor
    n, h, w, c = dout.shape
    return dout.reshape(n, h // fh, fh, w // fw, fw, c).sum(axis=(2, 4))


def dense_forward(x, w, b):
    return x @ w + b


def dense_backward(dout, x, w, need_dx=True):
    dw = x.T @ dout
    db = dout.sum(axis=0)
    dx = dout @ w.T if need_dx else None
    return dx, dw, db


def _phase_taps(kernel, factor):
    """For each output phase and kernel tap, the low-resolution offset it
    reads after nearest upsampling by ``factor`` (zero-centred kernel)."""
    half = kernel // 2
    return [[(a + d) // factor for d in range(-half, half + 1)] for a in range(factor)]


def _upconv_weight_map(w_shape, factor):
    """Index triples (dst_h, dst_w, phase, src_h, src_w) mapping a (kh, kw)
    kernel applied after upsampling onto a low-resolution kernel."""
    kh, kw = w_shape[:2]
    fh, fw = factor
    th, tw = _phase_taps(kh, fh), _phase_taps(kw, fw)
    rh = max(abs(o) for row in th for o in row)
    rw = max(abs(o) for row in tw for o in row)
    entries = []
    for a in range(fh):
        for b in range(fw):
            for i, oh in enumerate(th[a]):
                for j, ow in enumerate(tw[b]):
                    entries.append((oh + rh, ow + rw, a * fw + b, i, j))
    return np.array(entries), (2 * rh + 1, 2 * rw + 1)


def upconv_forward(x, w, b, factor):
    """Nearest upsampling by ``factor`` followed by a same-padded conv,
    evaluated at low resolution.

    Every output phase (a, b) of the upsampled grid is a plain conv of the
    low-resolution input with a folded kernel, so all phases come out of one
    stride-1 conv with ``fh*fw*c_out`` channels and are then interleaved.
    Equal to ``conv2d_forward(upsample_forward(x, factor), w, b)``.
    """
    fh, fw = factor
    cin, cout = w.shape[2:]
    idx, (eh, ew) = _upconv_weight_map(w.shape, factor)
    w_eff = np.zeros((eh, ew, cin, fh * fw, cout), dtype=w.dtype)
    np.add.at(w_eff, (idx[:, 0], idx[:, 1], slice(None), idx[:, 2]), w[idx[:, 3], idx[:, 4]])
    w_eff = w_eff.reshape(eh, ew, cin, fh * fw * cout)
    out, cache = conv2d_forward(x, w_eff, np.tile(b, fh * fw))
    n, h, wd, _ = out.shape
    out = out.reshape(n, h, wd, fh, fw, cout).transpose(0, 1, 3, 2, 4, 5).reshape(n, h * fh, wd * fw, cout)
    return out, (cache, w.shape, factor)


def upconv_backward(dout, cache, need_dx=True):
    conv_cache, w_shape, (fh, fw) = cache
    n, hh, ww, cout = dout.shape
    h, wd = hh // fh, ww // fw
    d = dout.reshape(n, h, fh, wd, fw, cout).transpose(0, 1, 3, 2, 4, 5).reshape(n, h, wd, fh * fw * cout)
    dx, dw_eff, db_eff = conv2d_backward(np.ascontiguousarray(d), conv_cache, need_dx)
    idx, (eh, ew) = _upconv_weight_map(w_shape, (fh, fw))
    cin = w_shape[2]
    dw_eff = dw_eff.reshape(eh, ew, cin, fh * fw, cout)
    dw = np.zeros(w_shape, dtype=dw_eff.dtype)
    np.add.at(dw, (idx[:, 3], idx[:, 4]), dw_eff[idx[:, 0], idx[:, 1], :, idx[:, 2]])
    db = db_eff.reshape(fh * fw, cout).sum(axis=0)
    return dx, dw, db
