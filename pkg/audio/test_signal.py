#!/usr/bin/env python3
"""
W2SC Audio Front-End — Test Suite v1.0
WAV I/O, STFT framing, the mel filterbank, mel inversion, Griffin-Lim,
the silence mask and the feature file format.

Run with:
    python3 -m pytest audio/test_signal.py -v
"""

import shutil
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from scipy.io import wavfile

sys.path.insert(0, str(Path(__file__).parent.parent))

from audio.features import (
    MelFormatError,
    corpus_norm_stats,
    encode_mel,
    load_norm_stats,
    read_mel,
    save_norm_stats,
    write_mel,
)
from audio.signal_engine import (
    MelSpectrogram,
    NormStats,
    SignalConfig,
    WavFormatError,
    Waveform,
    build_filterbank,
    frame_silence_mask,
    griffin_lim,
    invert_mel,
    istft,
    load_wav,
    log_mel,
    mel_spectrogram,
    stft,
    write_wav,
)

SR = 16000
CFG = SignalConfig()
FB = build_filterbank(CFG)


def _sine(freq, seconds=1.0, amp=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


class _TempDirCase(unittest.TestCase):
    def setUp(self):
        self.tmpdir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmpdir, ignore_errors=True)


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

class TestWavIO(_TempDirCase):

    def test_zero_file(self):
        path = self.tmpdir / "zeros.wav"
        wavfile.write(path, SR, np.zeros(16000, dtype=np.int16))
        w = load_wav(path)
        self.assertEqual(len(w), 16000)
        self.assertFalse(np.any(w.samples))

    def test_resample_doubles_length(self):
        path = self.tmpdir / "low.wav"
        wavfile.write(path, 8000, (np.random.default_rng(0).normal(size=4000) * 1000).astype(np.int16))
        w = load_wav(path, sample_rate=16000)
        self.assertLessEqual(abs(len(w) - 8000), 1)
        self.assertEqual(w.sample_rate, 16000)

    def test_full_scale_sample(self):
        path = self.tmpdir / "peak.wav"
        wavfile.write(path, SR, np.array([32767, 0], dtype=np.int16))
        self.assertAlmostEqual(load_wav(path).samples[0], 1.0, delta=1 / 32768)

    def test_stereo_takes_first_channel(self):
        path = self.tmpdir / "stereo.wav"
        data = np.stack([np.full(10, 1000), np.full(10, -1000)], axis=1).astype(np.int16)
        wavfile.write(path, SR, data)
        self.assertTrue(np.all(load_wav(path).samples > 0))

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_wav(self.tmpdir / "absent.wav")

    def test_malformed_header(self):
        path = self.tmpdir / "junk.wav"
        path.write_bytes(b"not a riff file at all")
        with self.assertRaises(WavFormatError):
            load_wav(path)

    def test_float_encoding_rejected(self):
        path = self.tmpdir / "float.wav"
        wavfile.write(path, SR, np.zeros(100, dtype=np.float32))
        with self.assertRaises(WavFormatError):
            load_wav(path)

    def test_write_then_read(self):
        path = self.tmpdir / "out" / "tone.wav"
        w = _sine(300, seconds=0.1)
        write_wav(w, path)
        back = load_wav(path)
        np.testing.assert_allclose(back.samples, w.samples, atol=2 / 32768)

    def test_waveform_rejects_nan(self):
        with self.assertRaises(ValueError):
            Waveform(np.array([0.0, np.nan]), SR)


# ---------------------------------------------------------------------------
# STFT
# ---------------------------------------------------------------------------

class TestStft(unittest.TestCase):

    def test_zero_signal(self):
        spec = stft(Waveform(np.zeros(4096), SR))
        self.assertFalse(np.any(spec.magnitude))
        self.assertEqual(spec.frames.shape[1], 513)

    def test_impulse_first_frame_flat(self):
        x = np.zeros(1024)
        x[0] = 1.0
        spec = stft(Waveform(x, SR), n_fft=256, hop=64, window="boxcar")
        np.testing.assert_allclose(spec.magnitude[0], np.ones(129), atol=1e-12)

    def test_bin_centred_sine(self):
        n_fft, k0 = 256, 10
        n = np.arange(4096)
        x = np.sin(2 * np.pi * k0 * n / n_fft)
        mag = stft(Waveform(x, SR), n_fft=n_fft, hop=64, window="boxcar").magnitude[20]
        peak = mag[k0]
        others = np.delete(mag, k0)
        self.assertEqual(int(np.argmax(mag)), k0)
        self.assertLess(others.max(), 1e-6 * peak)

    def test_round_trip_interior(self):
        x = np.random.default_rng(0).uniform(-0.5, 0.5, size=8000)
        spec = stft(Waveform(x, SR), n_fft=1024, hop=256)
        y = istft(spec, length=len(x)).samples
        interior = slice(1024, len(x) - 1024)
        rms = np.sqrt(np.mean((y[interior] - x[interior]) ** 2))
        self.assertLess(rms, 1e-4)

    def test_empty_waveform(self):
        with self.assertRaises(ValueError):
            stft(Waveform(np.zeros(0), SR))

    def test_bad_geometry(self):
        w = Waveform(np.zeros(2048), SR)
        with self.assertRaises(ValueError):
            stft(w, n_fft=1000)
        with self.assertRaises(ValueError):
            stft(w, n_fft=256, hop=512)


# ---------------------------------------------------------------------------
# Mel analysis
# ---------------------------------------------------------------------------

class TestMel(unittest.TestCase):

    def test_filterbank_contract(self):
        w = FB.weights
        self.assertEqual(w.shape, (128, 513))
        self.assertTrue(np.all(w >= 0))
        self.assertTrue(np.all(w.max(axis=1) > 0))
        self.assertTrue(np.all(np.diff(FB.centers) > 0))

    def test_filterbank_covers_band(self):
        freqs = np.fft.rfftfreq(CFG.n_fft, 1 / SR)
        inside = (freqs > CFG.f_min) & (freqs < CFG.f_max)
        self.assertTrue(np.all(FB.weights.sum(axis=0)[inside] > 0))

    def test_frame_count_and_width(self):
        m = mel_spectrogram(_sine(440), FB, CFG)
        self.assertEqual(m.frames.shape, (63, 128))

    def test_zero_signal_is_normalized_floor(self):
        stats = NormStats(float(np.log(CFG.log_floor)), 2.0)
        m = mel_spectrogram(Waveform(np.zeros(4000), SR), FB, CFG, stats)
        np.testing.assert_array_equal(m.frames, np.full_like(m.frames, -1.0))

    def test_normalized_range(self):
        m = mel_spectrogram(_sine(220), FB, CFG)
        self.assertGreaterEqual(m.frames.min(), -1.0)
        self.assertLessEqual(m.frames.max(), 1.0)

    def test_trailing_zeros_only_touch_appended_frames(self):
        x = np.random.default_rng(1).normal(scale=0.1, size=8192)
        base = log_mel(Waveform(x, SR), FB)
        longer = log_mel(Waveform(np.concatenate([x, np.zeros(2048)]), SR), FB)
        # frames whose window ends before the original last sample
        untouched = (len(x) - CFG.n_fft // 2) // CFG.hop
        np.testing.assert_allclose(longer[:untouched], base[:untouched], atol=1e-10)

    def test_denormalize_inverts_normalize(self):
        stats = NormStats(-10.0, 2.0)
        logm = np.random.default_rng(0).uniform(-10, 2, size=(5, 128))
        np.testing.assert_allclose(stats.denormalize(stats.normalize(logm)), logm, atol=1e-10)

    def test_mismatched_filterbank(self):
        with self.assertRaises(ValueError):
            log_mel(_sine(100, 0.1), FB, n_fft=512)


class TestInvertMel(unittest.TestCase):

    def test_flat_spectrum_recovered(self):
        flat = np.ones((3, 513))
        recovered = invert_mel(np.log(flat @ FB.weights.T), FB)
        freqs = np.fft.rfftfreq(CFG.n_fft, 1 / SR)
        centers = FB.centers
        inside = (freqs >= centers[0]) & (freqs <= centers[-1])
        rel = np.abs(recovered[:, inside] - 1.0)
        self.assertLess(rel.max(), 0.10)

    def test_floor_gives_near_zero(self):
        floor_mel = np.full((4, 128), np.log(CFG.log_floor))
        self.assertLess(invert_mel(floor_mel, FB).max(), 1e-3)

    def test_projection_round_trip(self):
        s = np.random.default_rng(2).uniform(0, 1, size=(10, 513))
        m = s @ FB.weights.T
        back = invert_mel(np.log(m), FB) @ FB.weights.T
        self.assertLess(np.linalg.norm(back - m) / np.linalg.norm(m), 0.05)

    def test_nonnegative(self):
        logm = np.random.default_rng(3).normal(size=(6, 128))
        self.assertTrue(np.all(invert_mel(logm, FB) >= 0))


# ---------------------------------------------------------------------------
# Griffin-Lim
# ---------------------------------------------------------------------------

class TestGriffinLim(unittest.TestCase):

    def test_zero_magnitude(self):
        w = griffin_lim(np.zeros((20, 513)), iterations=3)
        self.assertFalse(np.any(w.samples))

    def test_sine_reconstruction(self):
        mag = stft(_sine(440)).magnitude
        errors = []
        w = griffin_lim(mag, iterations=60, callback=lambda i, err: errors.append(err))
        spectrum = np.abs(np.fft.rfft(w.samples))
        freqs = np.fft.rfftfreq(len(w), 1 / SR)
        self.assertLess(abs(freqs[np.argmax(spectrum)] - 440.0), 5.0)
        self.assertEqual(len(errors), 60)
        self.assertLess(errors[-1], 0.15)

    def test_convergence_nonincreasing(self):
        rng = np.random.default_rng(0)
        noise = Waveform(rng.normal(scale=0.1, size=8000), SR)
        mag = stft(noise).magnitude
        errors = []
        griffin_lim(mag, iterations=20, callback=lambda i, err: errors.append(err))
        for before, after in zip(errors, errors[1:]):
            self.assertLessEqual(after, before + 1e-4)

    def test_random_init_seeded(self):
        mag = stft(_sine(300, 0.25)).magnitude
        a = griffin_lim(mag, iterations=2, init="random", seed=5)
        b = griffin_lim(mag, iterations=2, init="random", seed=5)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_rejects_bad_arguments(self):
        with self.assertRaises(ValueError):
            griffin_lim(np.ones((4, 513)), iterations=0)
        with self.assertRaises(ValueError):
            griffin_lim(-np.ones((4, 513)), iterations=1)


# ---------------------------------------------------------------------------
# Silence mask
# ---------------------------------------------------------------------------

class TestSilenceMask(unittest.TestCase):

    def test_equal_energy_all_voiced(self):
        self.assertFalse(np.any(frame_silence_mask(np.zeros((10, 128)))))

    def test_floor_frames_marked(self):
        logm = np.zeros((10, 128))
        logm[5:] = np.log(CFG.log_floor)
        mask = frame_silence_mask(logm, 40.0)
        np.testing.assert_array_equal(mask, [False] * 5 + [True] * 5)

    def test_inserted_silence_detected(self):
        tone = _sine(250, 0.5).samples
        x = np.concatenate([tone, np.zeros(8000), tone])
        m = mel_spectrogram(Waveform(x, SR), FB, CFG)
        mask = frame_silence_mask(m, CFG.silence_db)
        first = int(np.ceil((8000 + CFG.n_fft // 2) / CFG.hop))
        last = (16000 - CFG.n_fft // 2) // CFG.hop
        self.assertGreaterEqual(mask[first:last + 1].mean(), 0.9)


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------

class TestFeatureFiles(_TempDirCase):

    def _mel(self, t=7):
        frames = np.random.default_rng(0).uniform(-1, 1, size=(t, 128)).astype(np.float32)
        return MelSpectrogram(frames, NormStats(-11.5, 3.25), "utt")

    def test_round_trip(self):
        m = self._mel()
        path = self.tmpdir / "utt.mel"
        write_mel(m, path)
        back = read_mel(path)
        np.testing.assert_array_equal(back.frames, m.frames)
        self.assertEqual(back.norm_stats, m.norm_stats)
        self.assertEqual(back.name, "utt")

    def test_header_layout(self):
        data = encode_mel(self._mel(t=2))
        self.assertTrue(data.startswith(b"W2SC-MEL1"))
        self.assertEqual(len(data), 9 + 8 + 4 * 2 * 128 + 8)

    def test_truncated_file(self):
        path = self.tmpdir / "cut.mel"
        path.write_bytes(encode_mel(self._mel())[:-5])
        with self.assertRaises(MelFormatError):
            read_mel(path)

    def test_bad_magic(self):
        path = self.tmpdir / "bad.mel"
        path.write_bytes(b"W2SC-MELX" + encode_mel(self._mel())[9:])
        with self.assertRaises(MelFormatError):
            read_mel(path)

    def test_corpus_stats(self):
        stats = corpus_norm_stats([np.array([[-2.0, 1.0]]), np.array([[-5.0, 0.5]])])
        self.assertEqual((stats.lo, stats.hi), (-5.0, 1.0))

    def test_stats_persistence(self):
        stats = NormStats(-9.0, 1.5)
        save_norm_stats(stats, self.tmpdir)
        self.assertEqual(load_norm_stats(self.tmpdir), stats)


class TestSignalConfig(unittest.TestCase):

    def test_defaults(self):
        self.assertEqual((CFG.sample_rate, CFG.n_fft, CFG.hop, CFG.n_mels), (16000, 1024, 256, 128))

    def test_rejects_non_power_of_two(self):
        with self.assertRaises(ValidationError):
            SignalConfig(n_fft=1000)

    def test_rejects_unknown_key(self):
        with self.assertRaises(ValidationError):
            SignalConfig(window="hann")


if __name__ == "__main__":
    unittest.main()
