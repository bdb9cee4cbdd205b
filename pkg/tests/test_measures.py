import numpy as np
import pytest

from sesqa.measures import (MEASURE_NAMES, UNAVAILABLE_MEASURES,
                            MeasureNormalizer, MeasureUnavailableError,
                            compute_measure, compute_measure_vector,
                            fit_normalizer, read_measure_cache,
                            write_measure_cache)

from conftest import speechlike

RATE = 48000

IDENTITY_OPTIMA = {"ssnr": 35.0, "llr": 0.0, "wssd": 0.0, "stoi": 1.0,
                   "sisdr": 60.0, "mcd": 0.0, "lmbd": 0.0}


@pytest.fixture(scope="module")
def clean():
    return speechlike(seed=0, seconds=1.5).samples


def _at_snr(x, noise, snr_db):
    g = np.sqrt(np.sum(x ** 2) / (np.sum(noise ** 2) * 10 ** (snr_db / 10)))
    return (x + g * noise).astype(np.float32)


def test_identity_optima(clean):
    for name, best in IDENTITY_OPTIMA.items():
        v = compute_measure(name, clean, clean)
        assert np.isclose(v, best, atol=1e-6), (name, v)


def test_unavailable_measures_raise(clean):
    assert set(UNAVAILABLE_MEASURES) == {"pesq", "csig", "cbak", "covl"}
    for name in UNAVAILABLE_MEASURES:
        with pytest.raises(MeasureUnavailableError):
            compute_measure(name, clean, clean)


def test_unknown_measure_raises(clean):
    with pytest.raises(KeyError):
        compute_measure("nonsense", clean, clean)


@pytest.mark.parametrize("name", ["ssnr", "sisdr"])
def test_snr_measures_monotone(clean, name):
    noise = np.random.default_rng(1).normal(size=len(clean)).astype(np.float32)
    vals = [compute_measure(name, clean, _at_snr(clean, noise, s))
            for s in (30.0, 20.0, 10.0, 0.0)]
    assert all(a > b for a, b in zip(vals, vals[1:])), vals


def test_sisdr_scale_invariant(clean):
    noise = np.random.default_rng(2).normal(size=len(clean)).astype(np.float32)
    y = _at_snr(clean, noise, 12.0)
    v0 = compute_measure("sisdr", clean, y)
    v1 = compute_measure("sisdr", clean * 3.0, y * 3.0)
    assert np.isclose(v0, v1, atol=1e-6)


def test_vector_contents(clean):
    noise = np.random.default_rng(3).normal(size=len(clean)).astype(np.float32)
    vec = compute_measure_vector(clean, _at_snr(clean, noise, 15.0))
    assert set(vec.values) == set(MEASURE_NAMES)
    assert all(np.isfinite(v) for v in vec.values.values())
    sub = compute_measure_vector(clean, clean, names=("ssnr", "mcd"))
    assert set(sub.values) == {"ssnr", "mcd"}


def test_normalizer_fit_and_apply(clean):
    rng = np.random.default_rng(4)
    noise = rng.normal(size=len(clean)).astype(np.float32)
    vecs = [compute_measure_vector(clean, _at_snr(clean, noise, s))
            for s in (25.0, 15.0, 5.0)]
    norm = fit_normalizer(vecs)
    for name in MEASURE_NAMES:
        vals = np.array([norm.apply_value(name, v.values[name])
                         for v in vecs])
        assert np.isclose(vals.mean(), 0.0, atol=1e-5)
        assert np.isclose(vals.std(), 1.0, atol=1e-4)
    back = MeasureNormalizer.from_dict(norm.to_dict())
    assert back.means == norm.means and back.stds == norm.stds


def test_normalizer_failure_modes(clean):
    one = [compute_measure_vector(clean, clean)]
    with pytest.raises(ValueError):
        fit_normalizer(one)
    # identical vectors: zero variance everywhere
    with pytest.raises(ValueError):
        fit_normalizer(one * 3)


def test_measure_cache_roundtrip(tmp_path, clean):
    rng = np.random.default_rng(5)
    noise = rng.normal(size=len(clean)).astype(np.float32)
    lookup = {i: compute_measure_vector(clean, _at_snr(clean, noise, s))
              for i, s in enumerate((20.0, 10.0))}
    path = tmp_path / "measures.jsonl"
    write_measure_cache(path, lookup.items())
    back = read_measure_cache(path)
    assert set(back) == set(lookup)
    for k in lookup:
        assert back[k].masked == lookup[k].masked
        for name, v in lookup[k].values.items():
            assert np.isclose(back[k].values[name], v, rtol=1e-12)
