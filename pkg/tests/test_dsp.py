"""DSP oracles: STFT bin placement, Parseval, filterbank geometry,
F0 estimation, Griffin-Lim behavior, and WAV round trips."""
import numpy as np
import pytest

from tinytts import dsp
from tinytts.errors import ConfigError, DataFormatError, SequenceTooShortError


@pytest.fixture(scope="module")
def cfg():
    return dsp.SpectrogramConfig()


# 430.664 Hz = 20 * 22050 / 1024 lands exactly on FFT bin 20
SINE_BIN_20_HZ = 20 * 22050 / 1024


class TestStft:
    def test_sine_peaks_at_bin_20(self, cfg):
        wave_in = dsp.sine_wave(SINE_BIN_20_HZ, 1.0)
        mags = np.abs(dsp.stft(wave_in, cfg))
        interior = mags[2:-2]
        assert np.all(np.argmax(interior, axis=1) == 20)

    def test_zero_signal_all_zero(self, cfg):
        wave_in = dsp.Waveform(np.zeros(4096))
        assert np.max(np.abs(dsp.stft(wave_in, cfg))) == 0.0

    def test_frame_count(self, cfg):
        wave_in = dsp.Waveform(np.ones(22050))
        assert dsp.stft(wave_in, cfg).shape == (1 + 22050 // 256, 513)

    def test_parseval_per_frame(self, cfg):
        # sum over the full spectrum of |X|^2 equals n_fft * windowed energy
        rng = np.random.default_rng(0)
        wave_in = dsp.Waveform(rng.normal(size=8192) * 0.1)
        spec = dsp.stft(wave_in, cfg)
        frames = dsp._frame_signal(wave_in.samples, cfg) * dsp._hann(cfg.win_length)
        power = np.abs(spec) ** 2
        full = power[:, 0] + power[:, -1] + 2.0 * power[:, 1:-1].sum(axis=1)
        expected = cfg.n_fft * (frames ** 2).sum(axis=1)
        np.testing.assert_allclose(full, expected, rtol=1e-3)

    def test_too_short_input(self, cfg):
        with pytest.raises(SequenceTooShortError):
            dsp.stft(dsp.Waveform(np.ones(512)), cfg)


class TestMelFilterbank:
    def test_rows_nonnegative(self, cfg):
        assert np.all(dsp.mel_filterbank(cfg) >= 0.0)

    def test_band_coverage(self, cfg):
        bank = dsp.mel_filterbank(cfg)
        freqs = np.linspace(0, cfg.sample_rate / 2, cfg.n_bins)
        in_band = (freqs > cfg.fmin) & (freqs < cfg.fmax)
        assert np.all(bank[:, in_band].sum(axis=0) > 0.0)

    def test_centers_strictly_increasing(self, cfg):
        bank = dsp.mel_filterbank(cfg)
        centers = np.argmax(bank, axis=1)
        assert np.all(np.diff(centers) > 0)

    def test_rows_sum_to_one(self, cfg):
        np.testing.assert_allclose(dsp.mel_filterbank(cfg).sum(axis=1),
                                   np.ones(cfg.n_mels), atol=1e-12)


class TestMelSpectrogram:
    def test_zero_signal_hits_floor(self, cfg):
        mel = dsp.mel_spectrogram(dsp.Waveform(np.zeros(4096)), cfg)
        np.testing.assert_allclose(mel.frames, np.log(cfg.log_floor))

    def test_shape(self, cfg):
        mel = dsp.mel_spectrogram(dsp.sine_wave(220.0, 1.0), cfg)
        assert mel.frames.shape == (1 + 22050 // 256, 80)

    def test_doubling_amplitude_adds_ln2(self, cfg):
        quiet = dsp.mel_spectrogram(dsp.sine_wave(220.0, 0.5, amplitude=0.2), cfg)
        loud = dsp.mel_spectrogram(dsp.sine_wave(220.0, 0.5, amplitude=0.4), cfg)
        unfloored = quiet.frames > np.log(cfg.log_floor) + 1e-9
        diff = loud.frames[unfloored] - quiet.frames[unfloored]
        np.testing.assert_allclose(diff, np.log(2.0), atol=1e-6)

    def test_floor_is_lower_bound(self, cfg):
        rng = np.random.default_rng(1)
        mel = dsp.mel_spectrogram(dsp.Waveform(rng.normal(size=6000) * 0.01), cfg)
        assert np.all(mel.frames >= np.log(cfg.log_floor) - 1e-12)


class TestFrameEnergy:
    def test_zero_signal(self, cfg):
        assert np.all(dsp.frame_energy(dsp.Waveform(np.zeros(4096)), cfg) == 0.0)

    def test_linear_in_amplitude(self, cfg):
        full = dsp.frame_energy(dsp.sine_wave(330.0, 0.5, amplitude=0.8), cfg)
        half = dsp.frame_energy(dsp.sine_wave(330.0, 0.5, amplitude=0.4), cfg)
        keep = full > 1e-6
        np.testing.assert_allclose(full[keep] / half[keep], 2.0, atol=1e-3)

    def test_frame_counts_agree(self, cfg):
        wave_in = dsp.sine_wave(200.0, 0.7)
        mel = dsp.mel_spectrogram(wave_in, cfg)
        energy = dsp.frame_energy(wave_in, cfg)
        f0 = dsp.estimate_f0(wave_in, cfg)
        assert mel.n_frames == len(energy) == len(f0)


class TestF0:
    def test_pure_sine_220(self, cfg):
        f0 = dsp.estimate_f0(dsp.sine_wave(220.0, 1.0), cfg)
        voiced = f0[4:-4]
        assert np.all(voiced > 0)
        np.testing.assert_allclose(voiced, 220.0, atol=5.0)

    def test_white_noise_mostly_unvoiced(self, cfg):
        rng = np.random.default_rng(7)
        f0 = dsp.estimate_f0(dsp.Waveform(rng.normal(size=22050) * 0.3), cfg)
        assert np.mean(f0 == 0.0) > 0.8

    def test_silence_unvoiced(self, cfg):
        assert np.all(dsp.estimate_f0(dsp.Waveform(np.zeros(4096)), cfg) == 0.0)

    def test_range_of_toy_fundamentals(self, cfg):
        for freq in (120.0, 275.0, 400.0):
            f0 = dsp.estimate_f0(dsp.sine_wave(freq, 0.6), cfg)
            voiced = f0[4:-4]
            np.testing.assert_allclose(voiced, freq, atol=5.0)


class TestGriffinLim:
    def test_all_floor_mel_near_silent(self, cfg):
        frames = np.full((40, 80), np.log(cfg.log_floor))
        mel = dsp.MelSpectrogram(frames)
        out = dsp.griffin_lim(mel, cfg, iters=4)
        assert np.max(np.abs(out.samples)) < 1e-3

    def test_sine_dominant_bin_preserved(self, cfg):
        mel = dsp.mel_spectrogram(dsp.sine_wave(SINE_BIN_20_HZ, 1.0), cfg)
        out = dsp.griffin_lim(mel, cfg, iters=16)
        spec = np.abs(dsp.stft(out, cfg))
        profile = spec[2:-2].sum(axis=0)
        assert np.argmax(profile) == 20

    def test_residual_non_increasing(self, cfg):
        mel = dsp.mel_spectrogram(dsp.sine_wave(261.6, 0.8, amplitude=0.6), cfg)
        _, residuals = dsp.griffin_lim(mel, cfg, iters=32, return_residuals=True)
        assert len(residuals) == 32
        diffs = np.diff(residuals)
        assert np.all(diffs <= 1e-6), f"residuals increased: {max(diffs):.3e}"

    def test_peak_normalized(self, cfg):
        mel = dsp.mel_spectrogram(dsp.sine_wave(220.0, 0.6), cfg)
        out = dsp.griffin_lim(mel, cfg, iters=8)
        np.testing.assert_allclose(np.max(np.abs(out.samples)), 0.95, atol=1e-6)

    def test_single_frame_mel(self, cfg):
        mel = dsp.MelSpectrogram(np.full((1, 80), np.log(cfg.log_floor)))
        out = dsp.griffin_lim(mel, cfg, iters=2)
        assert len(out.samples) == cfg.hop_length

    def test_zero_iters_rejected(self, cfg):
        mel = dsp.MelSpectrogram(np.zeros((4, 80)))
        with pytest.raises(ConfigError):
            dsp.griffin_lim(mel, cfg, iters=0)


class TestWavIO:
    def test_round_trip_error_bound(self, tmp_path):
        rng = np.random.default_rng(3)
        wave_out = dsp.Waveform(rng.uniform(-1, 1, 5000))
        path = tmp_path / "x.wav"
        dsp.write_wav(path, wave_out)
        back = dsp.read_wav(path)
        assert back.sample_rate == 22050
        assert np.max(np.abs(back.samples - wave_out.samples)) <= 1.0 / 32767.0

    def test_riff_header_bytes(self, tmp_path):
        path = tmp_path / "h.wav"
        dsp.write_wav(path, dsp.sine_wave(100.0, 0.05))
        blob = path.read_bytes()
        assert blob[0:4] == b"RIFF" and blob[8:12] == b"WAVE"

    def test_sample_rate_preserved(self, tmp_path):
        path = tmp_path / "sr.wav"
        dsp.write_wav(path, dsp.Waveform(np.zeros(100) + 0.1, sample_rate=22050))
        assert dsp.read_wav(path).sample_rate == 22050

    def test_stereo_rejected(self, tmp_path):
        import wave as wave_mod
        path = tmp_path / "stereo.wav"
        with wave_mod.open(str(path), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(22050)
            fh.writeframes(b"\x00\x00" * 200)
        with pytest.raises(DataFormatError, match="mono"):
            dsp.read_wav(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"this is not a wav file at all")
        with pytest.raises(DataFormatError):
            dsp.read_wav(path)


class TestConfigValidation:
    def test_bad_hop(self):
        with pytest.raises(ConfigError):
            dsp.SpectrogramConfig(hop_length=2048)

    def test_bad_band(self):
        with pytest.raises(ConfigError):
            dsp.SpectrogramConfig(fmin=9000.0)
