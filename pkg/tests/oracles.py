"""Reference computations that do not go through the package code."""

import math

import numpy as np


def butterworth_bandstop_magnitude(freq_hz, rate_hz, low_hz, high_hz, order):
    """Independent oracle: analog prototype magnitude at the prewarped frequency.

    The bilinear transform maps digital frequency w to analog
    W = 2 fs tan(w / 2); with prewarped edges the digital magnitude equals
    the analog band-stop magnitude at W exactly.
    """
    warp = lambda f: 2.0 * rate_hz * math.tan(math.pi * f / rate_hz)
    w, wl, wh = warp(freq_hz), warp(low_hz), warp(high_hz)
    denom = wl * wh - w * w
    if denom == 0:
        return 0.0
    ratio = w * (wh - wl) / denom
    return 1.0 / math.sqrt(1.0 + ratio ** (2 * order))


def sos_response(sos, freq_hz, rate_hz):
    z = np.exp(1j * 2 * np.pi * freq_hz / rate_hz)
    h = 1.0 + 0j
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
    return abs(h)
