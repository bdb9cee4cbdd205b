import numpy as np
import pytest

from sesqa.audio import (AudioFormatError, AudioFrame, DegenerateInputError,
                         FrameSlice, extract_slice, is_usable, peak_normalize,
                         read_wav, write_wav)

from conftest import speechlike


def test_frame_is_immutable_and_mono():
    f = AudioFrame(np.zeros(100, dtype=np.float32) + 0.5, 48000)
    with pytest.raises(ValueError):
        f.samples[0] = 1.0
    with pytest.raises(ValueError):
        AudioFrame(np.zeros((2, 100)), 48000)
    with pytest.raises(ValueError):
        AudioFrame(np.array([np.nan]), 48000)


@pytest.mark.parametrize("depth", ["32f", 16, 24])
def test_wav_roundtrip(tmp_path, depth):
    f = speechlike(seed=3, seconds=0.25)
    path = tmp_path / "x.wav"
    write_wav(f, path, bit_depth=depth)
    back = read_wav(path)
    assert back.sample_rate == f.sample_rate
    assert len(back) == len(f)
    if depth == "32f":
        np.testing.assert_array_equal(back.samples, f.samples)
    else:
        bits = int(depth)
        tol = 1.5 / 2.0 ** (bits - 1)
        assert np.max(np.abs(back.samples - f.samples)) < tol


def test_wav_multichannel_downmix(tmp_path):
    # hand-build a 2-channel 16-bit file: L = 0.5, R = -0.5 -> mean 0
    import struct
    rate, n = 48000, 64
    lr = np.empty(2 * n, dtype="<i2")
    lr[0::2] = int(0.5 * 2 ** 15)
    lr[1::2] = -int(0.5 * 2 ** 15)
    payload = lr.tobytes()
    fmt = struct.pack("<HHIIHH", 1, 2, rate, rate * 4, 4, 16)
    body = (b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(payload)) + payload)
    path = tmp_path / "stereo.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    f = read_wav(path)
    assert len(f) == n
    assert np.max(np.abs(f.samples)) < 1e-4


def test_read_wav_rejects_garbage(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"not audio at all")
    with pytest.raises(AudioFormatError):
        read_wav(p)


def test_write_wav_int_requires_normalized(tmp_path):
    f = AudioFrame(np.array([2.0, -2.0], dtype=np.float32), 48000)
    with pytest.raises(ValueError):
        write_wav(f, tmp_path / "x.wav", bit_depth=16)


def test_peak_normalize():
    f = AudioFrame(np.array([0.1, -0.25, 0.2], dtype=np.float32), 48000)
    g = peak_normalize(f)
    assert np.isclose(np.max(np.abs(g.samples)), 1.0)
    with pytest.raises(DegenerateInputError):
        peak_normalize(AudioFrame(np.zeros(10), 48000))


def test_extract_slice_bounds():
    f = AudioFrame(np.arange(100, dtype=np.float32), 48000)
    cut = extract_slice(f, FrameSlice(10, 20))
    np.testing.assert_array_equal(cut.samples, np.arange(10, 30))
    with pytest.raises(IndexError):
        extract_slice(f, FrameSlice(90, 20))


def test_silence_gate():
    rate = 48000
    loud = speechlike(seed=5, seconds=1.0)
    assert is_usable(loud.samples, rate)
    assert not is_usable(np.zeros(rate, dtype=np.float32), rate)
    # mostly silent with a short burst: below the 50% active threshold
    x = np.zeros(rate, dtype=np.float32)
    x[:rate // 10] = 0.5
    assert not is_usable(x, rate)
