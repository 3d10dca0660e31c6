"""Phoneme-to-mel model: pyramid transformer encoder with U-Net style
fusion, parallel acoustic heads, duration-driven length regulation, and the
mel decoder.

Feature tensors are (sequence, channels) throughout. With embedding size d
the shape chain for N input phonemes is

    (N, d) -> (N, d/4) -> (ceil(N/2), d/2) -> fused (N, d/4)
           -> concat with acoustic features (N, d) -> (M, d) -> (M, n_mels)

where M is the total number of mel frames after length regulation.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, EmptyUtteranceError, TokenError
from .layers import (
    AcousticHead,
    ConvTranspose1d,
    DecoderBlock,
    Embedding,
    Linear,
    Module,
    TransformerBlock,
)
from .tensor import Rng, Tensor

# Full stress-marked ARPAbet inventory plus PAD/UNK; matches the frontend's
# symbol table when a lexicon covers every symbol.
DEFAULT_VOCAB_SIZE = 71


@dataclass
class BlockConfig:
    out_dim: int
    merge_kernel: int = 3
    merge_stride: int = 1
    heads: int = 1
    ffn_expansion: int = 2


@dataclass
class ModelConfig:
    """Hyperparameters; the parameter count is a pure function of these."""

    d: int = 128
    vocab_size: int = DEFAULT_VOCAB_SIZE
    n_mels: int = 80
    n_bins: int = 256
    block1: BlockConfig = field(default=None)  # type: ignore[assignment]
    block2: BlockConfig = field(default=None)  # type: ignore[assignment]
    head_kernel: int = 3
    head_hidden: int = field(default=None)  # type: ignore[assignment]
    pitch_range: tuple[float, float] = (80.0, 800.0)   # geometric bin edges, Hz
    energy_range: tuple[float, float] = (0.0, 200.0)   # linear bin edges
    decoder_blocks: int = 2
    decoder_kernel: int = 3
    max_duration: int = 50  # frames per phoneme after rounding

    def __post_init__(self):
        if self.d % 4:
            raise ConfigError(f"embedding size {self.d} must be divisible by 4")
        if self.block1 is None:
            self.block1 = BlockConfig(out_dim=self.d // 4, merge_stride=1, heads=1)
        if self.block2 is None:
            self.block2 = BlockConfig(out_dim=self.d // 2, merge_stride=2, heads=2)
        if self.head_hidden is None:
            self.head_hidden = self.d // 4
        if self.block2.out_dim != 2 * self.block1.out_dim:
            raise ConfigError(
                f"block2 width {self.block2.out_dim} must be twice block1 width "
                f"{self.block1.out_dim}")
        for name, blk in (("block1", self.block1), ("block2", self.block2)):
            if blk.out_dim % blk.heads:
                raise ConfigError(
                    f"{name}: {blk.heads} heads do not divide width {blk.out_dim}")
        if self.n_bins < 2:
            raise ConfigError(f"n_bins must be at least 2, got {self.n_bins}")
        if not (0 < self.pitch_range[0] < self.pitch_range[1]):
            raise ConfigError(f"bad pitch range {self.pitch_range}")
        if not (self.energy_range[0] < self.energy_range[1]):
            raise ConfigError(f"bad energy range {self.energy_range}")

    def pitch_bin_edges(self) -> np.ndarray:
        lo, hi = self.pitch_range
        return np.geomspace(lo, hi, self.n_bins + 1)

    def energy_bin_edges(self) -> np.ndarray:
        lo, hi = self.energy_range
        return np.linspace(lo, hi, self.n_bins + 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("block1", "block2"):
            if isinstance(d.get(key), dict):
                d[key] = BlockConfig(**d[key])
        for key in ("pitch_range", "energy_range"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def tiny_config() -> ModelConfig:
    """Smallest gradcheck-friendly configuration."""
    return ModelConfig(d=8, vocab_size=6, n_bins=4, n_mels=4)


@dataclass
class PhonemeSequence:
    """Integer token ids, one per phoneme; never empty."""

    ids: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 1 or self.ids.size < 1:
            raise TokenError("phoneme sequence must contain at least one token")
        if np.any(self.ids < 0):
            raise TokenError("phoneme ids must be nonnegative")

    def __len__(self) -> int:
        return int(self.ids.size)


@dataclass
class AcousticPrediction:
    """Per-phoneme scalar predictions and the feature tensors reused for fusion."""

    pitch: Tensor             # (N,)
    energy: Tensor            # (N,)
    duration: Tensor          # (N,), nonnegative (post-ReLU)
    pitch_features: Tensor    # (N, d/4), embedding of the binned pitch
    energy_features: Tensor   # (N, d/4), embedding of the binned energy
    duration_features: Tensor  # (N, d/4), head hidden state


class UpsamplerPath(Module):
    """Linear projection plus stride-2 transposed conv for the downsampled path."""

    def __init__(self, in_dim: int, out_dim: int, rng: Rng, dtype=np.float32):
        self.lin = Linear(in_dim, out_dim, rng, dtype=dtype)
        self.upconv = ConvTranspose1d(out_dim, out_dim, 2, rng, stride=2, dtype=dtype)

    def __call__(self, x: Tensor, target_len: int) -> Tensor:
        h = T.transpose(self.upconv(T.transpose(self.lin(x))))
        # stride 2 yields 2*ceil(N/2) rows; trim the tail to exactly N
        return T.slice_rows(h, 0, target_len) if h.shape[0] != target_len else h


class TinyTTS(Module):
    """The complete synthesis network; field order fixes parameter naming
    and the seed-to-weights mapping."""

    def __init__(self, config: ModelConfig, rng: Rng | None = None, dtype=np.float32):
        if rng is None:
            rng = Rng(0)
        c = config
        d4 = c.block1.out_dim
        self.config = c
        self.dtype = dtype
        self.embedding = Embedding(c.vocab_size, c.d, rng, dtype=dtype)
        self.block1 = TransformerBlock(c.d, c.block1.out_dim, c.block1.merge_kernel,
                                       c.block1.merge_stride, c.block1.heads,
                                       c.block1.ffn_expansion, rng, dtype=dtype)
        self.block2 = TransformerBlock(c.block1.out_dim, c.block2.out_dim,
                                       c.block2.merge_kernel, c.block2.merge_stride,
                                       c.block2.heads, c.block2.ffn_expansion,
                                       rng, dtype=dtype)
        # full-resolution path: the transposed conv is replaced by identity
        self.up1 = Linear(d4, d4, rng, dtype=dtype)
        self.up2 = UpsamplerPath(c.block2.out_dim, d4, rng, dtype=dtype)
        self.fuse = Linear(2 * d4, d4, rng, dtype=dtype)
        self.pitch_head = AcousticHead(c.head_hidden, c.head_kernel, rng, dtype=dtype)
        self.energy_head = AcousticHead(c.head_hidden, c.head_kernel, rng, dtype=dtype)
        self.duration_head = AcousticHead(c.head_hidden, c.head_kernel, rng, dtype=dtype)
        self.pitch_embed = Embedding(c.n_bins, d4, rng, dtype=dtype)
        self.energy_embed = Embedding(c.n_bins, d4, rng, dtype=dtype)
        self.decoder = [DecoderBlock(c.d, c.decoder_kernel, rng, dtype=dtype)
                        for _ in range(c.decoder_blocks)]
        self.mel_out = Linear(c.d, c.n_mels, rng, dtype=dtype)
        self._pitch_edges = c.pitch_bin_edges()
        self._energy_edges = c.energy_bin_edges()

    def refresh_bin_edges(self) -> None:
        """Recompute cached bin edges after the config ranges change."""
        self._pitch_edges = self.config.pitch_bin_edges()
        self._energy_edges = self.config.energy_bin_edges()


def bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Quantize values into len(edges)-1 bins; out-of-range clamps to the ends."""
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def embed(model: TinyTTS, ids: PhonemeSequence | np.ndarray) -> Tensor:
    """Look up the (N, d) embedding rows for a phoneme sequence."""
    if not isinstance(ids, PhonemeSequence):
        ids = PhonemeSequence(ids)
    vocab = model.config.vocab_size
    bad = np.nonzero(ids.ids >= vocab)[0]
    if bad.size:
        raise TokenError(
            f"token id {int(ids.ids[bad[0]])} at position {int(bad[0])} is outside "
            f"the vocabulary of {vocab}")
    return model.embedding(ids.ids)


def encode(model: TinyTTS, ids: PhonemeSequence | np.ndarray) -> Tensor:
    """Run the two-block pyramid encoder and fuse both resolutions to (N, d/4)."""
    x = embed(model, ids)
    f1 = model.block1(x)                      # (N, d/4)
    f2 = model.block2(f1)                     # (ceil(N/2), d/2)
    u1 = model.up1(f1)
    u2 = model.up2(f2, target_len=f1.shape[0])
    return model.fuse(T.concat_cols([u1, u2]))


def acoustic_forward(model: TinyTTS, features: Tensor) -> AcousticPrediction:
    """Run the three independent heads over fused phoneme features.

    Pitch and energy feed their scalar predictions through quantization into
    embedding tables; the bin index is treated as a constant by the tape, so
    gradients reach the tables but not the bin choice. Duration applies ReLU
    to keep predicted frame counts nonnegative and reuses the pre-projection
    hidden state as its feature tensor.
    """
    y_pitch, _ = model.pitch_head(features)
    y_energy, _ = model.energy_head(features)
    d_linear, h_duration = model.duration_head(features)
    y_duration = T.relu(d_linear)
    z_pitch = model.pitch_embed(bin_index(y_pitch.data, model._pitch_edges))
    z_energy = model.energy_embed(bin_index(y_energy.data, model._energy_edges))
    return AcousticPrediction(
        pitch=y_pitch, energy=y_energy, duration=y_duration,
        pitch_features=z_pitch, energy_features=z_energy,
        duration_features=h_duration)


def fuse_acoustic(features: Tensor, prediction: AcousticPrediction) -> Tensor:
    """Concatenate (features, pitch, energy, duration) features to (N, d)."""
    return T.concat_cols([features, prediction.pitch_features,
                          prediction.energy_features, prediction.duration_features])


def duration_to_frames(durations: np.ndarray, duration_scale: float,
                       max_duration: int) -> np.ndarray:
    """Round half away from zero, then clamp to [0, max_duration] frames."""
    if duration_scale <= 0:
        raise ConfigError(f"duration_scale must be positive, got {duration_scale}")
    scaled = np.asarray(durations, dtype=np.float64) * duration_scale
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, 0, max_duration).astype(np.int64)


def length_regulate(fused: Tensor, durations: np.ndarray,
                    duration_scale: float = 1.0,
                    max_duration: int = 50) -> Tensor:
    """Repeat row i of `fused` by its rounded, clamped duration; (M, d) out."""
    counts = duration_to_frames(durations, duration_scale, max_duration)
    if counts.sum() == 0:
        raise EmptyUtteranceError("all phoneme durations rounded to zero frames")
    return T.repeat_rows(fused, counts)


def decode_mel(model: TinyTTS, upsampled: Tensor) -> Tensor:
    """Map frame-rate features (M, d) to mel frames (M, n_mels)."""
    h = upsampled
    for block in model.decoder:
        h = block(h)
    return model.mel_out(h)


def forward_teacher_forced(model: TinyTTS, ids: PhonemeSequence | np.ndarray,
                           durations: np.ndarray
                           ) -> tuple[Tensor, AcousticPrediction]:
    """Training-mode forward: ground-truth integer durations drive the
    length regulator so predicted and target mels align frame for frame."""
    features = encode(model, ids)
    prediction = acoustic_forward(model, features)
    fused = fuse_acoustic(features, prediction)
    counts = np.asarray(durations, dtype=np.int64)
    if counts.sum() == 0:
        raise EmptyUtteranceError("ground-truth durations sum to zero frames")
    mel = decode_mel(model, T.repeat_rows(fused, counts))
    return mel, prediction


def synthesize(model: TinyTTS, ids: PhonemeSequence | np.ndarray,
               duration_scale: float = 1.0):
    """End-to-end deterministic synthesis.

    Returns (MelSpectrogram, AcousticPrediction); raises EmptyUtteranceError
    when every predicted duration rounds to zero.
    """
    from .dsp import MelSpectrogram  # runtime import: dsp does not need the model

    features = encode(model, ids)
    prediction = acoustic_forward(model, features)
    fused = fuse_acoustic(features, prediction)
    regulated = length_regulate(fused, prediction.duration.data,
                                duration_scale=duration_scale,
                                max_duration=model.config.max_duration)
    mel = decode_mel(model, regulated)
    return MelSpectrogram(frames=mel.data), prediction
