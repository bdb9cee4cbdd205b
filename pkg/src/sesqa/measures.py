"""Reference-based objective quality measures.

These supply the regression targets for the measure-estimation head. All
functions take a clean reference and a degraded signal of equal length at
48 kHz and return a scalar. Windowing conventions are fixed here:

* SSNR / LLR / WSSD: 30 ms frames, 75% overlap, Hann window, at 48 kHz.
* STOI: resampled to 10 kHz internally, 15 one-third-octave bands starting
  at 150 Hz, 384 ms analysis segments, -15 dB clipping.
* MCD / LMBD: 40 mel bands, 25 ms frames with 10 ms hop; MCD uses cepstra
  1..13 (c0 excluded).

PESQ and its derived composites (CSIG, CBAK, COVL) are registered but
unavailable: they raise instead of being approximated, so their values can
never silently corrupt training targets. Bit-exact agreement with any
external implementation is a non-goal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import resample_poly

from .audio import AudioFrame, DegenerateInputError

MEASURE_NAMES = ("ssnr", "llr", "wssd", "stoi", "sisdr", "mcd", "lmbd")
UNAVAILABLE_MEASURES = ("pesq", "csig", "cbak", "covl")

SSNR_MIN_DB = -10.0
SSNR_MAX_DB = 35.0
SISDR_CAP_DB = 60.0
LPC_ORDER = 16

_EPS = 1e-12


class MeasureUnavailableError(RuntimeError):
    """The requested measure has no implementation in this build."""


def _as_samples(x) -> np.ndarray:
    if isinstance(x, AudioFrame):
        x = x.samples
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("measures expect 1-D signals")
    return x


def _check_pair(reference, degraded) -> tuple[np.ndarray, np.ndarray]:
    r = _as_samples(reference)
    d = _as_samples(degraded)
    if len(r) != len(d):
        raise ValueError("reference and degraded lengths differ: %d vs %d"
                         % (len(r), len(d)))
    if len(r) == 0 or not np.any(r):
        raise DegenerateInputError("silent reference signal")
    return r, d


def _frame(x: np.ndarray, size: int, hop: int, window=None) -> np.ndarray:
    """Stack overlapping frames as rows; trailing partial frame dropped."""
    if len(x) < size:
        raise DegenerateInputError("signal shorter than one analysis frame")
    n = 1 + (len(x) - size) // hop
    idx = hop * np.arange(n)[:, None] + np.arange(size)
    frames = x[idx]
    if window is not None:
        frames = frames * window
    return frames


# ------------------------------------------------------------------ SSNR

def ssnr(reference, degraded, sample_rate=48000) -> float:
    """Segmental SNR, mean over 30 ms frames, each clamped to [-10, 35] dB."""
    r, d = _check_pair(reference, degraded)
    size = int(round(0.030 * sample_rate))
    hop = size // 4
    rf = _frame(r, size, hop)
    df = _frame(d, size, hop)
    sig = np.sum(rf ** 2, axis=1)
    noise = np.sum((rf - df) ** 2, axis=1)
    keep = sig > 0
    if not np.any(keep):
        raise DegenerateInputError("no active reference frames")
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(sig[keep] / np.maximum(noise[keep], _EPS))
    return float(np.mean(np.clip(snr, SSNR_MIN_DB, SSNR_MAX_DB)))


# ------------------------------------------------------------------- LLR

def _levinson(r: np.ndarray, order: int) -> np.ndarray:
    """Levinson-Durbin recursion; returns LPC coefficients [1, a1..ap]."""
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0]
    for i in range(1, order + 1):
        if err <= _EPS:  # perfectly predictable: stop early
            break
        acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
        k = -acc / err
        a[1:i + 1] += k * a[i - 1::-1][:i]
        err *= 1.0 - k * k
    return a


def _autocorr(x: np.ndarray, order: int) -> np.ndarray:
    n = len(x)
    spec = np.abs(np.fft.rfft(x, 2 * n)) ** 2
    ac = np.fft.irfft(spec)[:order + 1]
    return ac


def _lpc_quadform(a: np.ndarray, r: np.ndarray) -> float:
    """a^T R a for the Toeplitz matrix R built from autocorrelation r."""
    p = len(a) - 1
    acc = r[0] * np.dot(a, a)
    for m in range(1, p + 1):
        acc += 2.0 * r[m] * np.dot(a[:-m], a[m:])
    return float(acc)


def llr(reference, degraded, sample_rate=48000, order=LPC_ORDER) -> float:
    """Log-likelihood ratio between LPC fits, mean over 30 ms frames."""
    r, d = _check_pair(reference, degraded)
    size = int(round(0.030 * sample_rate))
    hop = size // 4
    win = np.hanning(size)
    rf = _frame(r, size, hop, win)
    df = _frame(d, size, hop, win)
    vals = []
    for fr, fd in zip(rf, df):
        ac_r = _autocorr(fr, order)
        if ac_r[0] <= _EPS:
            continue
        ac_d = _autocorr(fd, order)
        a_r = _levinson(ac_r, order)
        a_d = _levinson(ac_d, order)
        num = _lpc_quadform(a_d, ac_r)
        den = _lpc_quadform(a_r, ac_r)
        if den <= _EPS or not (np.isfinite(num) and np.isfinite(den)):
            continue
        vals.append(np.log(max(num / den, _EPS)))
    if not vals:
        raise DegenerateInputError("no analyzable frames for LLR")
    return float(np.mean(vals))


# ------------------------------------------------------------------ WSSD

# Critical-band centers and bandwidths (Hz) for the weighted spectral
# slope distance, following the classic 25-band layout.
_WSS_CF = np.array([
    50.0, 120.0, 190.0, 260.0, 330.0, 400.0, 470.0, 540.0, 617.372,
    703.378, 798.717, 904.128, 1020.38, 1148.30, 1288.72, 1442.54,
    1610.70, 1794.16, 1993.93, 2211.08, 2446.71, 2701.97, 2978.04,
    3276.17, 3597.63])
_WSS_BW = np.array([
    70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 70.0, 77.3724, 86.0056, 95.3398,
    105.411, 116.256, 127.914, 140.423, 153.823, 168.154, 183.457,
    199.776, 217.153, 235.631, 255.255, 276.072, 298.126, 321.465,
    346.136])
_WSS_KMAX = 20.0
_WSS_KLOCMAX = 1.0


def _wss_band_db(frames: np.ndarray, sample_rate: int) -> np.ndarray:
    """Per-frame critical-band energies in dB, shape (n_frames, 25)."""
    nfft = 1
    while nfft < frames.shape[1]:
        nfft *= 2
    spec = np.abs(rfft(frames, nfft, axis=1)) ** 2
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    filt = np.exp(-11.0 * ((freqs[None, :] - _WSS_CF[:, None])
                           / _WSS_BW[:, None]) ** 2)
    bands = spec @ filt.T
    return 10.0 * np.log10(np.maximum(bands, _EPS))


def wssd(reference, degraded, sample_rate=48000) -> float:
    """Weighted spectral slope distance over 30 ms frames."""
    r, d = _check_pair(reference, degraded)
    size = int(round(0.030 * sample_rate))
    hop = size // 4
    win = np.hanning(size)
    db_r = _wss_band_db(_frame(r, size, hop, win), sample_rate)
    db_d = _wss_band_db(_frame(d, size, hop, win), sample_rate)

    slope_r = np.diff(db_r, axis=1)
    slope_d = np.diff(db_d, axis=1)

    # locate, per band, the nearest spectral peak in slope direction
    n_frames, n_bands = db_r.shape
    vals = np.empty(n_frames)
    for t in range(n_frames):
        db = db_r[t]
        sl = slope_r[t]
        loc_peak = np.empty(n_bands - 1)
        for j in range(n_bands - 1):
            if sl[j] > 0:  # rising: walk up to the next local maximum
                k = j
                while k < n_bands - 1 and db[k + 1] > db[k]:
                    k += 1
                loc_peak[j] = db[k]
            else:  # falling: nearest peak is behind
                k = j
                while k > 0 and db[k - 1] > db[k]:
                    k -= 1
                loc_peak[j] = db[k]
        db_max = db.max()
        w_glob = _WSS_KMAX / (_WSS_KMAX + db_max - db[:-1])
        w_loc = _WSS_KLOCMAX / (_WSS_KLOCMAX + loc_peak - db[:-1])
        w = w_glob * w_loc
        vals[t] = np.sum(w * (sl - slope_d[t]) ** 2) / np.sum(w)
    return float(np.mean(vals))


# ------------------------------------------------------------------ STOI

_STOI_RATE = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_NBANDS = 15
_STOI_FIRST_CF = 150.0
_STOI_SEG = 30          # frames per 384 ms analysis segment
_STOI_CLIP_DB = -15.0
_STOI_VAD_RANGE_DB = 40.0


def _third_octave_matrix() -> np.ndarray:
    """Boolean band matrix (15, nfft//2+1) of one-third-octave bands."""
    freqs = np.fft.rfftfreq(_STOI_NFFT, 1.0 / _STOI_RATE)
    cf = _STOI_FIRST_CF * 2.0 ** (np.arange(_STOI_NBANDS) / 3.0)
    lo = cf * 2.0 ** (-1.0 / 6.0)
    hi = cf * 2.0 ** (1.0 / 6.0)
    return ((freqs[None, :] >= lo[:, None])
            & (freqs[None, :] < hi[:, None])).astype(np.float64)


def stoi(reference, degraded, sample_rate=48000) -> float:
    """Short-time objective intelligibility (correlation based, in [-1, 1])."""
    r, d = _check_pair(reference, degraded)
    if sample_rate != _STOI_RATE:
        if sample_rate % 2000:
            raise ValueError("unsupported sample rate for STOI: %d"
                             % sample_rate)
        r = resample_poly(r, _STOI_RATE, sample_rate)
        d = resample_poly(d, _STOI_RATE, sample_rate)

    win = np.hanning(_STOI_FRAME)
    rf = _frame(r, _STOI_FRAME, _STOI_HOP, win)
    df = _frame(d, _STOI_FRAME, _STOI_HOP, win)

    # energy VAD on the reference; drop frames 40 dB below the loudest
    energy = 20.0 * np.log10(np.linalg.norm(rf, axis=1) + _EPS)
    keep = energy > energy.max() - _STOI_VAD_RANGE_DB
    rf, df = rf[keep], df[keep]
    if len(rf) < _STOI_SEG:
        raise DegenerateInputError("too few active frames for STOI")

    band = _third_octave_matrix()
    xr = np.sqrt((np.abs(rfft(rf, _STOI_NFFT, axis=1)) ** 2) @ band.T)
    xd = np.sqrt((np.abs(rfft(df, _STOI_NFFT, axis=1)) ** 2) @ band.T)

    clip_gain = 10.0 ** (-_STOI_CLIP_DB / 20.0)
    corrs = []
    for m in range(_STOI_SEG, len(xr) + 1):
        X = xr[m - _STOI_SEG:m]  # (30, 15)
        Y = xd[m - _STOI_SEG:m]
        alpha = np.sqrt(np.sum(X ** 2, axis=0)
                        / np.maximum(np.sum(Y ** 2, axis=0), _EPS))
        Yc = np.minimum(Y * alpha, X * clip_gain)
        Xc = X - X.mean(axis=0)
        Yc = Yc - Yc.mean(axis=0)
        denom = (np.linalg.norm(Xc, axis=0) * np.linalg.norm(Yc, axis=0))
        corrs.append(np.sum(Xc * Yc, axis=0) / np.maximum(denom, _EPS))
    return float(np.mean(corrs))


# ----------------------------------------------------------------- SISDR

def sisdr(reference, degraded) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +/-60."""
    r, d = _check_pair(reference, degraded)
    scale = np.dot(d, r) / np.dot(r, r)
    target = scale * r
    err = d - target
    num = np.dot(target, target)
    den = np.dot(err, err)
    if den <= _EPS * max(num, 1.0):
        return SISDR_CAP_DB
    if num <= 0.0:
        return -SISDR_CAP_DB
    val = 10.0 * np.log10(num / den)
    return float(np.clip(val, -SISDR_CAP_DB, SISDR_CAP_DB))


# ------------------------------------------------------------- MCD, LMBD

_MEL_NBANDS = 40
_MEL_NCEP = 13


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def _mel_filterbank(sample_rate: int, nfft: int) -> np.ndarray:
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0),
                                   _MEL_NBANDS + 2))
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    fb = np.zeros((_MEL_NBANDS, len(freqs)))
    for i in range(_MEL_NBANDS):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(mid - lo, _EPS)
        down = (hi - freqs) / max(hi - mid, _EPS)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _log_mel(x: np.ndarray, sample_rate: int) -> np.ndarray:
    size = int(round(0.025 * sample_rate))
    hop = int(round(0.010 * sample_rate))
    win = np.hanning(size)
    frames = _frame(x, size, hop, win)
    nfft = 1
    while nfft < size:
        nfft *= 2
    spec = np.abs(rfft(frames, nfft, axis=1)) ** 2
    mel = spec @ _mel_filterbank(sample_rate, nfft).T
    return np.log(np.maximum(mel, _EPS))


def mcd(reference, degraded, sample_rate=48000) -> float:
    """Mel-cepstral distortion in dB over cepstra 1..13 (c0 excluded)."""
    r, d = _check_pair(reference, degraded)
    cep_r = dct(_log_mel(r, sample_rate), type=2, norm="ortho", axis=1)
    cep_d = dct(_log_mel(d, sample_rate), type=2, norm="ortho", axis=1)
    diff = cep_r[:, 1:_MEL_NCEP + 1] - cep_d[:, 1:_MEL_NCEP + 1]
    per_frame = np.sqrt(np.sum(diff ** 2, axis=1))
    return float(10.0 * np.sqrt(2.0) / np.log(10.0) * np.mean(per_frame))


def lmbd(reference, degraded, sample_rate=48000) -> float:
    """Log-mel-band distortion: mean absolute log-energy difference in dB."""
    r, d = _check_pair(reference, degraded)
    lm_r = _log_mel(r, sample_rate)
    lm_d = _log_mel(d, sample_rate)
    return float(np.mean(np.abs(lm_r - lm_d)) * 10.0 / np.log(10.0))


# ----------------------------------------------------------- registry

def _unavailable_factory(name):
    def fn(reference, degraded, sample_rate=48000):
        raise MeasureUnavailableError(
            "%s is not implemented in this build" % name.upper())
    return fn


_REGISTRY = {
    "ssnr": ssnr,
    "llr": llr,
    "wssd": wssd,
    "stoi": stoi,
    "sisdr": lambda reference, degraded, sample_rate=48000:
        sisdr(reference, degraded),
    "mcd": mcd,
    "lmbd": lmbd,
}
for _name in UNAVAILABLE_MEASURES:
    _REGISTRY[_name] = _unavailable_factory(_name)


def compute_measure(kind: str, reference, degraded, sample_rate=48000) -> float:
    """Dispatch a single measure by name (case-insensitive)."""
    key = kind.lower()
    if key not in _REGISTRY:
        raise KeyError("unknown measure %r" % kind)
    return _REGISTRY[key](reference, degraded, sample_rate=sample_rate)


@dataclass
class MeasureVector:
    """Measure values for one (reference, degraded) pair.

    `values` holds the computed measures; anything requested but not
    computable (unavailable or degenerate) is listed in `masked`.
    """

    values: dict = field(default_factory=dict)
    masked: tuple = ()

    @property
    def available(self) -> tuple:
        return tuple(sorted(self.values))


def compute_measure_vector(reference, degraded, sample_rate=48000,
                           names=MEASURE_NAMES) -> MeasureVector:
    values = {}
    masked = []
    for name in names:
        try:
            values[name] = compute_measure(name, reference, degraded,
                                           sample_rate=sample_rate)
        except (MeasureUnavailableError, DegenerateInputError):
            masked.append(name)
    return MeasureVector(values=values, masked=tuple(masked))


@dataclass(frozen=True)
class MeasureNormalizer:
    """Per-measure affine map fitted so training values get zero mean and
    unit variance."""

    means: dict
    stds: dict

    def apply(self, vec: MeasureVector) -> MeasureVector:
        out = {}
        for name, v in vec.values.items():
            if name in self.means:
                out[name] = (v - self.means[name]) / self.stds[name]
            else:
                out[name] = v
        return MeasureVector(values=out, masked=vec.masked)

    def apply_value(self, name: str, value: float) -> float:
        return (value - self.means[name]) / self.stds[name]

    def to_dict(self) -> dict:
        return {"means": dict(self.means), "stds": dict(self.stds)}

    @classmethod
    def from_dict(cls, d) -> "MeasureNormalizer":
        return cls(means={k: float(v) for k, v in d["means"].items()},
                   stds={k: float(v) for k, v in d["stds"].items()})


def fit_normalizer(corpus) -> MeasureNormalizer:
    """Fit per-measure mean/std over a list of MeasureVector.

    Only measures present in at least two vectors are fitted; a measure
    with zero variance raises, naming the offender.
    """
    corpus = list(corpus)
    if len(corpus) < 2:
        raise ValueError("normalizer needs at least 2 measure vectors")
    pooled = {}
    for vec in corpus:
        for name, v in vec.values.items():
            pooled.setdefault(name, []).append(v)
    means, stds = {}, {}
    for name, vals in pooled.items():
        if len(vals) < 2:
            continue
        arr = np.asarray(vals, dtype=np.float64)
        m = float(arr.mean())
        s = float(arr.std())
        if s <= 0.0:
            raise ValueError("measure %r has zero variance; cannot "
                             "normalize" % name)
        means[name] = m
        stds[name] = s
    if not means:
        raise ValueError("no measure occurs often enough to normalize")
    return MeasureNormalizer(means=means, stds=stds)


# -------------------------------------------------------------- caching

def write_measure_cache(path, entries) -> None:
    """entries: iterable of (pair_id, MeasureVector); JSON-lines output."""
    with open(path, "w") as f:
        for pair_id, vec in entries:
            f.write(json.dumps({"pair_id": pair_id,
                                "values": vec.values,
                                "masked": list(vec.masked)}) + "\n")


def read_measure_cache(path) -> dict:
    """Return {pair_id: MeasureVector}."""
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out[rec["pair_id"]] = MeasureVector(
                values={k: float(v) for k, v in rec["values"].items()},
                masked=tuple(rec.get("masked", ())))
    return out
