import numpy as np
import pytest

from rtfdoa.errors import ConfigurationError, NumericalFailure
from rtfdoa.stft import (
    AudioClip,
    StftConfig,
    analyze,
    num_frames,
    read_wav,
    sqrt_hann,
    write_wav,
)

FS = 16000


def test_sqrt_hann_small_values():
    w = sqrt_hann(4)
    np.testing.assert_allclose(w, [0.0, np.sqrt(0.5), 1.0, np.sqrt(0.5)], atol=1e-15)


def test_sqrt_hann_is_sine_lobe():
    # sqrt(0.5 - 0.5 cos(2 pi n / N)) == sin(pi n / N)
    n = np.arange(512)
    np.testing.assert_allclose(sqrt_hann(512), np.sin(np.pi * n / 512), atol=1e-12)
    assert sqrt_hann(512)[256] == pytest.approx(1.0)


def test_sqrt_hann_squares_to_cola_at_half_overlap():
    w2 = sqrt_hann(512) ** 2
    np.testing.assert_allclose(w2[:256] + w2[256:], 1.0, atol=1e-12)


@pytest.mark.parametrize("bad", [3, 511, 1, 0, -4])
def test_sqrt_hann_rejects_bad_lengths(bad):
    with pytest.raises(ConfigurationError):
        sqrt_hann(bad)


def test_num_frames_formula():
    cfg = StftConfig()
    assert num_frames(511, cfg) == 0
    assert num_frames(512, cfg) == 1
    assert num_frames(767, cfg) == 1
    assert num_frames(768, cfg) == 2
    assert num_frames(FS, cfg) == (FS - 512) // 256 + 1


def test_analyze_matches_naive_dft(rng):
    cfg = StftConfig(frame_len=64, hop=32, window=sqrt_hann(64))
    samples = rng.standard_normal((3, 200))
    grid = analyze(AudioClip(samples, FS), cfg)
    n_fr = num_frames(200, cfg)
    assert grid.data.shape == (3, 33, n_fr)

    k = np.arange(64)
    for ch in range(3):
        for l in range(n_fr):
            seg = samples[ch, l * 32:l * 32 + 64] * cfg.window
            for b in range(33):
                ref = np.sum(seg * np.exp(-2j * np.pi * b * k / 64))
                assert grid.data[ch, b, l] == pytest.approx(ref, abs=1e-10)


def test_analyze_zero_input_and_exact_length():
    clip = AudioClip(np.zeros((2, 512)), FS)
    grid = analyze(clip)
    assert grid.data.shape == (2, 257, 1)
    assert np.all(grid.data == 0)


def test_cosine_at_bin_center_and_window_leakage():
    # a real cosine exactly on bin c puts half the window DTFT peak there;
    # the sqrt-Hann magnitude rolls off as 1 / (4 d^2 - 1) d bins away
    cfg = StftConfig()
    w = cfg.window
    c = 128
    t = np.arange(512)
    clip = AudioClip(np.cos(2 * np.pi * c * t / 512)[None, :], FS)
    spec = np.abs(analyze(clip, cfg).data[0, :, 0])

    peak = w.sum() / 2
    assert spec[c] == pytest.approx(peak, rel=1e-3)
    for d, rel in ((2, 0.02), (4, 0.02), (8, 0.02), (16, 0.02), (32, 0.08)):
        # the asymptotic law loosens far out where the negative-frequency
        # image contributes at the percent level
        expected = peak / (4 * d * d - 1)
        assert spec[c + d] == pytest.approx(expected, rel=rel)
        assert spec[c - d] == pytest.approx(expected, rel=rel)
    # 16 bins out the rolloff crosses -60 dB; beyond that everything stays under
    assert spec[c + 16] < peak * 1.05e-3
    far = np.concatenate([spec[: c - 16], spec[c + 17:]])
    assert far.max() < peak * 1e-3


def test_single_frame_parseval(rng):
    cfg = StftConfig()
    x = rng.standard_normal(512)
    spec = analyze(AudioClip(x[None, :], FS), cfg).data[0, :, 0]
    # rfft double-counts interior bins once mirrored
    weights = np.full(257, 2.0)
    weights[0] = weights[-1] = 1.0
    freq_energy = np.sum(weights * np.abs(spec) ** 2) / 512
    time_energy = np.sum((x * cfg.window) ** 2)
    assert freq_energy == pytest.approx(time_energy, rel=1e-9)


def test_analyze_is_linear(rng):
    cfg = StftConfig(frame_len=64, hop=32, window=sqrt_hann(64))
    a = rng.standard_normal((2, 300))
    b = rng.standard_normal((2, 300))
    ga = analyze(AudioClip(a, FS), cfg).data
    gb = analyze(AudioClip(b, FS), cfg).data
    gsum = analyze(AudioClip(2.0 * a - 0.5 * b, FS), cfg).data
    np.testing.assert_allclose(gsum, 2.0 * ga - 0.5 * gb, atol=1e-12 * np.abs(ga).max())


def test_analyze_deterministic(rng):
    samples = rng.standard_normal((5, 4000))
    g1 = analyze(AudioClip(samples, FS)).data
    g2 = analyze(AudioClip(samples.copy(), FS)).data
    assert np.array_equal(g1, g2)


def test_analyze_rejects_short_and_nonfinite():
    with pytest.raises(ConfigurationError):
        analyze(AudioClip(np.zeros((1, 100)), FS))
    bad = np.zeros((1, 1024))
    bad[0, 700] = np.nan
    with pytest.raises(NumericalFailure):
        analyze(AudioClip(bad, FS))


def test_stft_config_validation():
    with pytest.raises(ConfigurationError):
        StftConfig(frame_len=512, hop=0)
    with pytest.raises(ConfigurationError):
        StftConfig(frame_len=512, hop=513)
    with pytest.raises(ConfigurationError):
        StftConfig(frame_len=512, hop=256, window=np.ones(100))
    with pytest.raises(ConfigurationError):
        StftConfig(frame_len=4, hop=2, window=np.array([0.0, 1.0, 2.0, 1.0]))


def test_grid_axis_annotations(rng):
    clip = AudioClip(rng.standard_normal((1, 2048)), FS)
    grid = analyze(clip)
    np.testing.assert_allclose(grid.bin_freqs, np.arange(257) * FS / 512)
    n_fr = grid.data.shape[2]
    expected_times = (np.arange(n_fr) * 256 + 256.0) / FS
    np.testing.assert_allclose(grid.frame_times, expected_times)


def test_audio_clip_duration():
    clip = AudioClip(np.zeros((2, 8000)), FS)
    assert clip.duration == pytest.approx(0.5)


def test_wav_roundtrip_float32(tmp_path, rng):
    samples = np.clip(rng.standard_normal((4, 1000)) * 0.25, -1.0, 1.0)
    path = tmp_path / "probe.wav"
    write_wav(path, AudioClip(samples, FS))
    back = read_wav(path)
    assert back.sample_rate == FS
    np.testing.assert_allclose(back.samples, samples, atol=1e-6)


def test_wav_reads_int16_scaled(tmp_path):
    import scipy.io.wavfile as wavfile

    data = np.array([[0, 16384, -32768, 32767]], dtype=np.int16)
    path = tmp_path / "i16.wav"
    wavfile.write(path, FS, data.T)
    clip = read_wav(path)
    np.testing.assert_allclose(
        clip.samples[0], [0.0, 0.5, -1.0, 32767 / 32768], atol=1e-9)


def test_wav_rejects_unsupported_dtype(tmp_path):
    import scipy.io.wavfile as wavfile

    path = tmp_path / "u8.wav"
    wavfile.write(path, FS, np.zeros(64, dtype=np.uint8))
    with pytest.raises(ConfigurationError):
        read_wav(path)
