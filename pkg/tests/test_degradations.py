import numpy as np
import pytest
from scipy import signal

from sesqa.audio import AudioFrame
from sesqa.degrade import (CleanPool, DegradationSpec, apply_chain,
                           apply_degradation, generate_quadruple,
                           sample_chain, sample_spec)
from sesqa.degrade.chains import FIRST_STAGE, SECOND_STAGE
from sesqa.degrade.kinds import (KIND_NAMES, NATIVE_KINDS, TRANSCODE_KINDS,
                                 UnavailableDegradationError,
                                 kind_probabilities, strength_to_params)
from sesqa.degrade.quadruples import (CLEAN_INDEX, N_DT_CLASSES,
                                      chain_targets, iter_quadruples,
                                      read_quadruple_manifest,
                                      write_quadruple_manifest)
from sesqa.degrade.transcode import validate_template

from conftest import speechlike

RATE = 48000

FAKE_TRANSCODER = ('python3 -c "import shutil,sys;'
                   ' shutil.copy(sys.argv[1], sys.argv[2])"'
                   " {in} {out} {codec} {bitrate}")


def _achieved_snr(x, y):
    n = y - x
    return 10.0 * np.log10(np.sum(x ** 2) / np.sum(n ** 2))


def recover_delay(q, probe_len=20000):
    """Normalized cross-correlation of the delayed cut against the
    zero-offset cut; the argmax is the sample delay."""
    x = q.x_ik.samples.astype(np.float64)
    probe = q.x_il.samples[:probe_len].astype(np.float64)
    c = signal.correlate(x, probe, mode="valid", method="fft")
    energy = signal.correlate(x * x, np.ones(probe_len), mode="valid",
                              method="fft")
    return int(np.argmax(c / np.sqrt(np.maximum(energy, 1e-12))))


# ------------------------------------------------------- SNR fidelity

@pytest.mark.parametrize("kind", ["additive_noise", "colored_noise",
                                  "hum_noise"])
def test_noise_snr_accuracy(kind):
    frame = speechlike(seed=11, seconds=1.0)
    rng = np.random.default_rng(0)
    for draw in range(100):
        s = float(rng.uniform())
        spec = DegradationSpec(kind=kind, strength=s,
                               aux_params={"partial": False},
                               seed=int(rng.integers(2 ** 31)))
        out = apply_degradation(frame, spec)
        want = spec.aux_params["snr_db"]
        got = _achieved_snr(frame.samples.astype(np.float64),
                            out.samples.astype(np.float64))
        assert abs(got - want) <= 0.1, (kind, draw, want, got)


# ---------------------------------------------------------- clipping

def test_clipping_fraction_accuracy():
    frame = speechlike(seed=12, seconds=1.0)
    rng = np.random.default_rng(1)
    for _ in range(25):
        s = float(rng.uniform())
        spec = DegradationSpec(kind="clipping", strength=s)
        out = apply_degradation(frame, spec)
        want = spec.aux_params["fraction"]
        got = np.mean(np.abs(out.samples) < np.abs(frame.samples))
        assert abs(got - want) <= 0.01, (s, want, got)
        assert np.max(np.abs(out.samples)) <= np.max(np.abs(frame.samples))


# ------------------------------------------------------------ mu-law

def test_mu_law_level_counts():
    frame = speechlike(seed=13, seconds=0.5)
    for s in np.linspace(0.0, 1.0, 9):
        spec = DegradationSpec(kind="mu_law", strength=float(s))
        bits = spec.aux_params["bits"]
        out = apply_degradation(frame, spec)
        assert len(np.unique(out.samples)) <= 2 ** bits, (s, bits)


# ----------------------------------------------------------- reverse

def test_reverse_is_involutive():
    frame = speechlike(seed=14, seconds=0.5)
    spec = DegradationSpec(kind="reverse", strength=0.5)
    twice = apply_degradation(apply_degradation(frame, spec), spec)
    np.testing.assert_array_equal(twice.samples, frame.samples)
    once = apply_degradation(frame, spec)
    np.testing.assert_array_equal(once.samples, frame.samples[::-1])


# ----------------------------------------------- every kernel runs sane

@pytest.mark.parametrize("kind", NATIVE_KINDS)
def test_kernel_preserves_length_and_sanity(kind):
    frame = speechlike(seed=15, seconds=1.0)
    rng = np.random.default_rng(hash(kind) % 2 ** 31)
    for s in (0.1, 0.9):
        spec = sample_spec(kind, rng, strength=s)
        out = apply_degradation(frame, spec)
        assert len(out) == len(frame)
        assert out.sample_rate == frame.sample_rate
        assert np.all(np.isfinite(out.samples))
        if kind != "reverse":
            assert not np.array_equal(out.samples, frame.samples), (kind, s)


def test_kernel_determinism():
    frame = speechlike(seed=16, seconds=0.7)
    spec = sample_spec("additive_noise", np.random.default_rng(3))
    a = apply_degradation(frame, spec)
    b = apply_degradation(frame, spec)
    np.testing.assert_array_equal(a.samples, b.samples)


# ------------------------------------------------------ spec plumbing

def test_spec_validation_and_roundtrip():
    with pytest.raises(ValueError):
        DegradationSpec(kind="clipping", strength=1.5)
    with pytest.raises(KeyError):
        DegradationSpec(kind="flanger", strength=0.5)
    spec = sample_spec("colored_noise", np.random.default_rng(4))
    back = DegradationSpec.from_dict(spec.to_dict())
    assert back == spec


def test_strength_to_params_monotone_snr():
    mild = strength_to_params("additive_noise", 0.0)["snr_db"]
    strong = strength_to_params("additive_noise", 1.0)["snr_db"]
    assert mild > strong
    with pytest.raises(ValueError):
        strength_to_params("additive_noise", -0.1)
    for kind in KIND_NAMES:
        p = strength_to_params(kind, 0.3)
        assert isinstance(p, dict)


def test_kind_probabilities_normalized():
    names, probs = kind_probabilities()
    assert names == KIND_NAMES
    assert np.isclose(probs.sum(), 1.0)
    sub_names, sub_probs = kind_probabilities(NATIVE_KINDS)
    assert np.isclose(sub_probs.sum(), 1.0)
    with pytest.raises(ValueError):
        kind_probabilities(())


# ---------------------------------------------------------- chains

def test_chain_length_distribution_small():
    # quick 3-sigma check at 20k draws; the full 1e5 run lives in the
    # acceptance suite
    rng = np.random.default_rng(5)
    n = 20000
    for dist, stage in ((FIRST_STAGE, "first"), (SECOND_STAGE, "second")):
        counts = np.zeros(max(dist.counts) + 1)
        for _ in range(n):
            counts[len(sample_chain(stage, rng,
                                    available=NATIVE_KINDS[:6]))] += 1
        for k, p in zip(dist.counts, dist.count_probs):
            sigma = np.sqrt(n * p * (1 - p))
            assert abs(counts[k] - n * p) <= 3 * sigma, (stage, k)


def test_chain_kinds_unique_and_stage_validation():
    rng = np.random.default_rng(6)
    for _ in range(200):
        chain = sample_chain("second", rng, available=NATIVE_KINDS)
        kinds = [s.kind for s in chain]
        assert len(kinds) == len(set(kinds))
    with pytest.raises(ValueError):
        sample_chain("third", rng)


# -------------------------------------------------------- quadruples

@pytest.fixture(scope="module")
def pool():
    frames = [speechlike(seed=20 + i, seconds=1.2) for i in range(4)]
    return CleanPool({"synth": frames})


def test_quadruple_structure(pool):
    q = generate_quadruple(pool, np.random.default_rng(7))
    n = len(q.x_ik)
    assert all(len(f) == n for f in q.frames())
    assert q.chain_j[:len(q.chain_i)] == q.chain_i
    assert len(q.chain_j) > len(q.chain_i)
    assert 0.0 <= q.delay_ms <= 100.0
    assert q.dt_targets_i.shape == (N_DT_CLASSES,)
    # clean first cut is possible; flag must match the chain
    if not q.chain_i:
        assert q.dt_targets_i[CLEAN_INDEX] == 1.0


def test_chain_targets_clean_and_max_strength():
    dt, ds = chain_targets([])
    assert dt[CLEAN_INDEX] == 1.0 and not ds.any()
    specs = [DegradationSpec(kind="clipping", strength=0.2),
             DegradationSpec(kind="clipping", strength=0.6)]
    dt, ds = chain_targets(specs)
    i = KIND_NAMES.index("clipping")
    assert dt[i] == 1.0 and np.isclose(ds[i], 0.6)


def test_delay_recovery_small(pool):
    # cross-correlation recovers the cut offset; full 1k-item version in
    # the acceptance suite
    for i in range(25):
        q = generate_quadruple(pool, np.random.default_rng([8, i]))
        d_true = int(round(q.delay_ms * RATE / 1000.0))
        assert abs(recover_delay(q) - d_true) <= 1


def test_iter_quadruples_deterministic(pool):
    a = [q.x_ik.samples for _, q in iter_quadruples(pool, 3, master_seed=9)]
    b = [q.x_ik.samples for _, q in iter_quadruples(pool, 3, master_seed=9)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_manifest_roundtrip(tmp_path, pool):
    quads = list(iter_quadruples(pool, 2, master_seed=10))
    wav_dir = tmp_path / "wavs"
    manifest = tmp_path / "quads.jsonl"
    write_quadruple_manifest(quads, wav_dir, manifest)
    back = read_quadruple_manifest(manifest)
    assert len(back) == 2
    from sesqa.degrade.quadruples import load_quadruple
    q0 = load_quadruple(back[0])
    np.testing.assert_array_equal(q0.x_ik.samples, quads[0][1].x_ik.samples)
    assert q0.delay_ms == quads[0][1].delay_ms
    np.testing.assert_array_equal(q0.dt_targets_j, quads[0][1].dt_targets_j)


# --------------------------------------------------------- transcode

def test_transcode_requires_command():
    frame = speechlike(seed=30, seconds=0.5)
    spec = DegradationSpec(kind=TRANSCODE_KINDS[0], strength=0.5)
    with pytest.raises(UnavailableDegradationError):
        apply_degradation(frame, spec)


def test_transcode_template_validation():
    with pytest.raises(ValueError):
        validate_template("ffmpeg -i {in} {out}")  # missing codec/bitrate
    validate_template("enc {in} {out} {codec} {bitrate}")


def test_transcode_with_fake_codec():
    frame = speechlike(seed=31, seconds=0.5)
    spec = DegradationSpec(kind="transcode_mp3", strength=0.3)
    out = apply_degradation(frame, spec, transcoder_cmd=FAKE_TRANSCODER)
    # the copy codec is lossless: a float32 wav round-trip is bit-exact
    np.testing.assert_array_equal(out.samples, frame.samples)


def test_transcode_failure_is_reported():
    frame = speechlike(seed=32, seconds=0.5)
    spec = DegradationSpec(kind="transcode_mp3", strength=0.3)
    with pytest.raises(UnavailableDegradationError):
        apply_degradation(frame, spec,
                          transcoder_cmd="false {in} {out} {codec} {bitrate}")


def test_chain_application_order():
    frame = speechlike(seed=33, seconds=0.5)
    chain = [DegradationSpec(kind="clipping", strength=0.4),
             DegradationSpec(kind="reverse", strength=0.0)]
    out = apply_chain(frame, chain)
    step = apply_degradation(apply_degradation(frame, chain[0]), chain[1])
    np.testing.assert_array_equal(out.samples, step.samples)
