# Copyright 2026 The randgrasp authors
# See LICENSE file for licensing details.

"""Forward and backward passes of the tensor layers used by the controller.

Layers are stateless functions: forward returns an output plus a cache, backward consumes
the cache. Images are NHWC.
"""

from typing import NamedTuple, Optional, Tuple

import numpy as np


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class ConvCache(NamedTuple):
    input_shape: Tuple[int, ...]
    padded_shape: Tuple[int, ...]
    columns: np.ndarray
    weight: np.ndarray
    stride: int
    padding: int


def conv2d_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int, padding: int
) -> Tuple[np.ndarray, ConvCache]:
    """Convolution of (N, H, W, C) by a (k, k, C, O) kernel via an im2col matrix product."""
    n, h, w, c = x.shape
    k, _, cin, out_channels = weight.shape
    if cin != c:
        raise ValueError(f"kernel expects {cin} input channels, got {c}")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x
    cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
    s = stride
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i : i + s * ho : s, j : j + s * wo : s, :]
    cols = cols.reshape(n * ho * wo, k * k * c)
    out = cols @ weight.reshape(k * k * c, out_channels) + bias
    cache = ConvCache(x.shape, xp.shape, cols, weight, stride, padding)
    return out.reshape(n, ho, wo, out_channels), cache


def conv2d_backward(
    dout: np.ndarray, cache: ConvCache, need_input_grad: bool = True
) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    n, ho, wo, out_channels = dout.shape
    k, _, c, _ = cache.weight.shape
    flat = dout.reshape(-1, out_channels)
    dweight = (cache.columns.T @ flat).reshape(cache.weight.shape)
    dbias = flat.sum(axis=0)
    if not need_input_grad:
        return None, dweight, dbias
    dcols = (flat @ cache.weight.reshape(-1, out_channels).T).reshape(n, ho, wo, k, k, c)
    dxp = np.zeros(cache.padded_shape, dtype=dout.dtype)
    s = cache.stride
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += dcols[:, :, :, i, j, :]
    p = cache.padding
    if p:
        _, h, w, _ = cache.input_shape
        dxp = dxp[:, p : p + h, p : p + w, :]
    return dxp, dweight, dbias


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return x @ weight + bias


def dense_backward(
    dout: np.ndarray, x: np.ndarray, weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return dout @ weight.T, x.T @ dout, dout.sum(axis=0)


class LstmCache(NamedTuple):
    inputs: np.ndarray  # (T, B, D + H) concatenated [x_t, h_{t-1}]
    gates: np.ndarray  # (T, B, 4H) activated i, f, o, g
    cells: np.ndarray  # (T + 1, B, H), cells[0] is the initial cell
    weight: np.ndarray


def lstm_forward(
    xs: np.ndarray, weight: np.ndarray, bias: np.ndarray, h0: np.ndarray, c0: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, LstmCache]:
    """Run an LSTM over (T, B, D) inputs; returns hidden states, cell states and the cache.

    Gate order in the weight columns is input, forget, output, candidate.
    """
    steps, batch, dims = xs.shape
    hidden = h0.shape[1]
    inputs = np.empty((steps, batch, dims + hidden))
    gates = np.empty((steps, batch, 4 * hidden))
    cells = np.empty((steps + 1, batch, hidden))
    hs = np.empty((steps, batch, hidden))
    cells[0] = c0
    h = h0
    for t in range(steps):
        inputs[t, :, :dims] = xs[t]
        inputs[t, :, dims:] = h
        z = inputs[t] @ weight + bias
        gates[t, :, : 3 * hidden] = sigmoid(z[:, : 3 * hidden])
        gates[t, :, 3 * hidden :] = np.tanh(z[:, 3 * hidden :])
        i, f, o, g = np.split(gates[t], 4, axis=1)
        cells[t + 1] = f * cells[t] + i * g
        h = o * np.tanh(cells[t + 1])
        hs[t] = h
    return hs, cells[1:], LstmCache(inputs, gates, cells, weight)


def lstm_backward(
    dhs: np.ndarray, cache: LstmCache
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Backpropagation through time; returns dxs, dweight, dbias, dh0, dc0."""
    steps, batch, hidden = dhs.shape
    dims = cache.inputs.shape[2] - hidden
    dweight = np.zeros_like(cache.weight)
    dbias = np.zeros(4 * hidden)
    dxs = np.empty((steps, batch, dims))
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    for t in reversed(range(steps)):
        i, f, o, g = np.split(cache.gates[t], 4, axis=1)
        c = cache.cells[t + 1]
        tc = np.tanh(c)
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * cache.cells[t] * f * (1.0 - f),
                dh * tc * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ],
            axis=1,
        )
        dweight += cache.inputs[t].T @ dz
        dbias += dz.sum(axis=0)
        dinputs = dz @ cache.weight.T
        dxs[t] = dinputs[:, :dims]
        dh_next = dinputs[:, dims:]
        dc_next = dc * f
    return dxs, dweight, dbias, dh_next, dc_next


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
