"""Forward and backward passes of the individual network layers.

Arrays are batched: feature maps are ``(N, channels, length)``, dense
activations ``(N, width)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core import BMIError

LOG_CLAMP = 1e-12


class KernelTooLong(BMIError):
    pass


class DimensionMismatch(BMIError):
    pass


def conv1d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid-mode cross-correlation summed over input maps, plus bias.

    ``x`` is ``(N, M_in, T)`` (or ``(M_in, T)`` for one example), ``kernels``
    is ``(M_out, M_in, K)`` and the result ``(N, M_out, T - K + 1)``.
    """
    single = x.ndim == 2
    if single:
        x = x[None]
    m_out, m_in, k = kernels.shape
    if x.shape[1] != m_in:
        raise DimensionMismatch(f"input has {x.shape[1]} maps, kernels expect {m_in}")
    if x.shape[2] < k:
        raise KernelTooLong(f"kernel length {k} exceeds input length {x.shape[2]}")
    win = sliding_window_view(x, k, axis=2)  # (N, M_in, T', K)
    z = np.einsum("nitk,jik->njt", win, kernels, optimize=True) + bias[None, :, None]
    return z[0] if single else z


def conv1d_backward(dz: np.ndarray, x: np.ndarray, kernels: np.ndarray, need_dx: bool = False):
    """Gradients of a conv layer: ``(dkernels, dbias, dx or None)``."""
    k = kernels.shape[2]
    win = sliding_window_view(x, k, axis=2)
    dk = np.einsum("njt,nitk->jik", dz, win, optimize=True)
    db = dz.sum(axis=(0, 2))
    dx = None
    if need_dx:
        dx = np.zeros_like(x, dtype=float)
        for u in range(k):
            dx[:, :, u:u + dz.shape[2]] += np.einsum("njt,ji->nit", dz, kernels[:, :, u])
    return dk, db, dx


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def relu_backward(dx: np.ndarray, z: np.ndarray) -> np.ndarray:
    return dx * (z > 0)


def maxpool(x: np.ndarray, pool: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pooling along the last axis.

    A trailing partial window is pooled as it is. Returns the pooled maps and
    the argmax position inside each window (first position on ties).
    """
    if pool < 1:
        raise ValueError("pool must be >= 1")
    t = x.shape[-1]
    p = -(-t // pool)
    pad = p * pool - t
    if pad:
        widths = [(0, 0)] * (x.ndim - 1) + [(0, pad)]
        x = np.pad(x, widths, constant_values=-np.inf)
    blocks = x.reshape(x.shape[:-1] + (p, pool))
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool_backward(dy: np.ndarray, arg: np.ndarray, pool: int, length: int) -> np.ndarray:
    p = dy.shape[-1]
    dblocks = np.zeros(dy.shape + (pool,))
    np.put_along_axis(dblocks, arg[..., None], dy[..., None], axis=-1)
    dx = dblocks.reshape(dy.shape[:-1] + (p * pool,))
    return dx[..., :length]


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(targets: np.ndarray, probs: np.ndarray) -> float:
    """Summed categorical cross-entropy, probabilities clamped before the log."""
    return float(-np.sum(targets * np.log(np.maximum(probs, LOG_CLAMP))))
