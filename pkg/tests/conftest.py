import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from sesqa.audio import AudioFrame  # noqa: E402


def speechlike(seed=0, seconds=1.5, rate=48000) -> AudioFrame:
    """Harmonic + modulated test signal; enough structure for the
    spectral measures and the silence gate."""
    r = np.random.default_rng(seed)
    t = np.arange(int(seconds * rate)) / rate
    f0 = r.uniform(100, 220)
    x = np.zeros_like(t)
    for h in range(1, 7):
        x += r.uniform(0.3, 1.0) / h * np.sin(2 * np.pi * h * f0 * t)
    x *= 0.6 + 0.4 * np.sin(2 * np.pi * 3.0 * t)
    x += 0.005 * r.normal(size=len(t))
    return AudioFrame((x / np.max(np.abs(x))).astype(np.float32), rate)


@pytest.fixture
def clean_frame():
    return speechlike(seed=1, seconds=1.0)
