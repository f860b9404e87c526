"""Learned-layer plumbing: parameter initialization and apply helpers.

Parameters live in a flat :class:`~cassirecon.autodiff.ParamStore` under
dotted names; each ``init_*`` registers the tensors a layer needs and each
``apply`` fetches them by the same prefix.  Initialization is
Glorot-uniform for weights and uniform +-1/sqrt(fan_in) for biases (nonzero
biases keep layer-norm variances away from zero on the exactly-zero patches
a binary mask produces), or all-zero when ``zero_init`` is set (zero weights
make every residual block an identity).
"""

import numpy as np

from . import autodiff as ad


def glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def bias_init(rng, size, fan_in):
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=size)


def init_conv(store, name, kh, kw, cin, cout, rng, zero_init=False, scale=1.0):
    if zero_init:
        w = np.zeros((kh, kw, cin, cout))
        b = np.zeros(cout)
    else:
        w = scale * glorot(rng, (kh, kw, cin, cout), kh * kw * cin, kh * kw * cout)
        b = scale * bias_init(rng, cout, kh * kw * cin)
    store.add(name + ".w", w)
    store.add(name + ".b", b)


def conv(store, name, x, stride=1):
    return ad.conv2d(x, store[name + ".w"], store[name + ".b"], stride=stride)


def init_linear(store, name, cin, cout, rng, zero_init=False, bias=True):
    if zero_init:
        w = np.zeros((cin, cout))
    else:
        w = glorot(rng, (cin, cout), cin, cout)
    store.add(name + ".w", w)
    if bias:
        b = np.zeros(cout) if zero_init else bias_init(rng, cout, cin)
        store.add(name + ".b", b)


def linear(store, name, x):
    out = ad.matmul(x, store[name + ".w"])
    bname = name + ".b"
    if bname in store:
        out = out + store[bname]
    return out
