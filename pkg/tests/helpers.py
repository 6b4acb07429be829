"""Shared test utilities."""

import numpy as np


def jitter_params(params, rng, scale=0.2):
    """Shift params off their init values so no relu pre-activation sits
    exactly on its kink (zero biases + zero first displacement would put it
    there deterministically)."""
    for p in params:
        p.value.data = p.value.data + rng.uniform(-scale, scale, p.value.data.shape)


def lstm_step_reference(w_x, w_h, b, h, m, x):
    """Straight-line numpy LSTM step, independent of the tape ops."""
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    gates = x @ w_x.T + h @ w_h.T + b
    hd = w_h.shape[1]
    i = sig(gates[:, :hd])
    f = sig(gates[:, hd:2 * hd])
    g = np.tanh(gates[:, 2 * hd:3 * hd])
    o = sig(gates[:, 3 * hd:])
    m_new = f * m + i * g
    return o * np.tanh(m_new), m_new
