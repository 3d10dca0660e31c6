"""Signal pipeline: STFT, mel filterbank, training-target extraction,
Griffin-Lim phase reconstruction, and 16-bit WAV I/O.

Everything operates on plain numpy arrays (no gradient tracking): these are
data-preparation and playback paths, not differentiated ones.
"""
from __future__ import annotations

import wave
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataFormatError, SequenceTooShortError

PEAK_TARGET = 0.95
SILENCE_PEAK = 1e-3  # below this, skip peak normalization


@dataclass
class Waveform:
    """Mono audio in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int = 22050

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise DataFormatError("waveform must be nonempty")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelSpectrogram:
    """Frame-major log-mel magnitudes, (M, n_mels)."""

    frames: np.ndarray
    hop_length: int = 256
    sample_rate: int = 22050

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DataFormatError(
                f"mel spectrogram must be (frames, mels) with at least one frame, "
                f"got shape {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def n_mels(self) -> int:
        return int(self.frames.shape[1])

    @property
    def audio_seconds(self) -> float:
        return self.n_frames * self.hop_length / self.sample_rate


@dataclass
class SpectrogramConfig:
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    sample_rate: int = 22050
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5
    window: str = "hann"

    def __post_init__(self):
        if not (self.hop_length <= self.win_length <= self.n_fft):
            raise ConfigError(
                f"need hop <= win <= n_fft, got {self.hop_length}/{self.win_length}/"
                f"{self.n_fft}")
        if not (self.fmin < self.fmax <= self.sample_rate / 2):
            raise ConfigError(
                f"need fmin < fmax <= sr/2, got {self.fmin}/{self.fmax} at "
                f"{self.sample_rate} Hz")
        if self.window != "hann":
            raise ConfigError(f"unsupported window '{self.window}'")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrogramConfig":
        return cls(**d)


def _hann(n: int) -> np.ndarray:
    # periodic form, as used for overlap-add analysis/synthesis
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def _frame_signal(samples: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    """Center-padded (reflect) frames, (M, win_length), M = 1 + len // hop."""
    pad = cfg.n_fft // 2
    padded = np.pad(samples, pad, mode="reflect")
    n_frames = 1 + len(samples) // cfg.hop_length
    idx = (np.arange(cfg.win_length)[None, :]
           + cfg.hop_length * np.arange(n_frames)[:, None])
    return padded[idx]


def stft(wave_in: Waveform, cfg: SpectrogramConfig) -> np.ndarray:
    """Complex frames, (M, n_fft/2 + 1); Hann-windowed, reflect-padded."""
    samples = wave_in.samples
    if len(samples) < cfg.win_length:
        raise SequenceTooShortError(
            f"waveform of {len(samples)} samples is shorter than the "
            f"{cfg.win_length}-sample window")
    frames = _frame_signal(samples, cfg) * _hann(cfg.win_length)
    return np.fft.rfft(frames, n=cfg.n_fft, axis=1)


def hz_to_mel(f) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: SpectrogramConfig) -> np.ndarray:
    """Triangular filters, (n_mels, n_fft/2 + 1); each row sums to 1.

    Centers are uniform on the mel scale between fmin and fmax; row
    normalization keeps a flat magnitude response across the band.
    """
    fft_freqs = np.linspace(0.0, cfg.sample_rate / 2.0, cfg.n_bins)
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bank = np.zeros((cfg.n_mels, cfg.n_bins))
    for m in range(cfg.n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (fft_freqs - lo) / (center - lo)
        falling = (hi - fft_freqs) / (hi - center)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
        total = bank[m].sum()
        if total > 0:
            bank[m] /= total
    return bank


def mel_spectrogram(wave_in: Waveform, cfg: SpectrogramConfig) -> MelSpectrogram:
    """log(max(filterbank @ |STFT|, log_floor)), natural log, (M, n_mels)."""
    magnitudes = np.abs(stft(wave_in, cfg))
    mel = magnitudes @ mel_filterbank(cfg).T
    frames = np.log(np.maximum(mel, cfg.log_floor))
    return MelSpectrogram(frames=frames, hop_length=cfg.hop_length,
                          sample_rate=cfg.sample_rate)


def frame_energy(wave_in: Waveform, cfg: SpectrogramConfig) -> np.ndarray:
    """L2 norm of each STFT magnitude frame, (M,)."""
    return np.linalg.norm(np.abs(stft(wave_in, cfg)), axis=1)


def estimate_f0(wave_in: Waveform, cfg: SpectrogramConfig,
                fmin: float = 80.0, fmax: float = 800.0,
                voicing_threshold: float = 0.3) -> np.ndarray:
    """Frame-synchronous fundamental frequency in Hz; 0 marks unvoiced.

    Normalized autocorrelation per frame, peak searched over lags
    [sr/fmax, sr/fmin] with parabolic refinement; peaks below the voicing
    threshold are unvoiced.
    """
    sr = cfg.sample_rate
    frames = _frame_signal(wave_in.samples, cfg)
    lag_min = int(np.ceil(sr / fmax))
    lag_max = min(int(np.floor(sr / fmin)), cfg.win_length - 2)
    # Wiener-Khinchin: autocorrelation via the power spectrum
    n_pad = 2 * cfg.win_length
    spectra = np.fft.rfft(frames, n=n_pad, axis=1)
    acf = np.fft.irfft(spectra * np.conj(spectra), n=n_pad, axis=1)[:, :lag_max + 2]
    zero_lag = acf[:, 0]
    f0 = np.zeros(frames.shape[0])
    voiced = zero_lag > 0
    if not np.any(voiced):
        return f0
    norm = np.zeros_like(acf)
    norm[voiced] = acf[voiced] / zero_lag[voiced, None]
    search = norm[:, lag_min:lag_max + 1]
    best = np.argmax(search, axis=1) + lag_min
    peak = norm[np.arange(len(best)), best]
    for i in np.nonzero(voiced & (peak >= voicing_threshold))[0]:
        lag = best[i]
        # parabolic interpolation around the integer peak
        y0, y1, y2 = norm[i, lag - 1], norm[i, lag], norm[i, lag + 1]
        denom = y0 - 2.0 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if abs(denom) > 1e-12 else 0.0
        f0[i] = sr / (lag + np.clip(shift, -0.5, 0.5))
    return f0


def istft(spectra: np.ndarray, cfg: SpectrogramConfig, length: int) -> np.ndarray:
    """Least-squares inverse STFT (windowed overlap-add), trimmed to `length`."""
    n_frames = spectra.shape[0]
    window = _hann(cfg.win_length)
    frames = np.fft.irfft(spectra, n=cfg.n_fft, axis=1)[:, :cfg.win_length] * window
    pad = cfg.n_fft // 2
    total = cfg.win_length + cfg.hop_length * (n_frames - 1)
    signal = np.zeros(total)
    weight = np.zeros(total)
    win_sq = window * window
    for i in range(n_frames):
        start = i * cfg.hop_length
        signal[start:start + cfg.win_length] += frames[i]
        weight[start:start + cfg.win_length] += win_sq
    signal = np.where(weight > 1e-10, signal / np.maximum(weight, 1e-10), 0.0)
    out = signal[pad:pad + length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out


def griffin_lim(mel: MelSpectrogram, cfg: SpectrogramConfig, iters: int = 32,
                return_residuals: bool = False):
    """Waveform from a log-mel spectrogram via iterative phase reconstruction.

    The linear magnitude target comes from a nonnegative pseudo-inverse of
    the mel filterbank applied to exp(mel). Each iteration replaces the
    magnitude of the current STFT with the target while keeping its phase;
    the consistency residual is non-increasing. Output is peak-normalized to
    0.95 unless it is essentially silent.
    """
    if iters < 1:
        raise ConfigError(f"griffin_lim needs at least one iteration, got {iters}")
    bank = mel_filterbank(cfg)
    target = np.clip(np.exp(mel.frames) @ np.linalg.pinv(bank).T, 0.0, None)
    length = mel.n_frames * cfg.hop_length
    # short mels still need one full analysis window
    analysis_len = max(length, cfg.win_length)
    spectra = target.astype(np.complex128)  # zero initial phase
    residuals = []
    signal = istft(spectra, cfg, analysis_len)
    for _ in range(iters):
        rebuilt = stft(Waveform(signal, cfg.sample_rate), cfg)[:mel.n_frames]
        mag = np.abs(rebuilt)
        residuals.append(float(np.linalg.norm(mag - target)))
        phase = rebuilt / np.maximum(mag, 1e-12)
        signal = istft(target * phase, cfg, analysis_len)
    signal = signal[:length]
    peak = np.max(np.abs(signal))
    if peak >= SILENCE_PEAK:
        signal = signal * (PEAK_TARGET / peak)
    out = Waveform(np.clip(signal, -1.0, 1.0), cfg.sample_rate)
    return (out, residuals) if return_residuals else out


def write_wav(path, wave_out: Waveform) -> None:
    """16-bit PCM mono RIFF/WAVE."""
    clipped = np.clip(wave_out.samples, -1.0, 1.0)
    pcm = (clipped * 32767.0).round().astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wave_out.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    """Read 16-bit PCM mono; anything else is rejected."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise DataFormatError(
                    f"{path}: expected mono audio, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise DataFormatError(
                    f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
            if fh.getcomptype() != "NONE":
                raise DataFormatError(f"{path}: compressed WAV is not supported")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise DataFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if not raw:
        raise DataFormatError(f"{path}: WAV file contains no samples")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(np.clip(samples, -1.0, 1.0), rate)


def sine_wave(frequency: float, seconds: float, sample_rate: int = 22050,
              amplitude: float = 0.5) -> Waveform:
    """Test helper: a pure tone."""
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return Waveform(amplitude * np.sin(2.0 * np.pi * frequency * t), sample_rate)
