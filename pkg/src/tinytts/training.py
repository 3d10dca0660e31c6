"""Composite loss, AdamW with warmup+cosine schedule, training-target
extraction, a synthetic aligned toy dataset, and the desk-scale training loop.

Training teacher-forces ground-truth durations through the length regulator
so the predicted and target mels align frame for frame; predicted durations
only drive synthesis at inference time.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .dsp import (
    MelSpectrogram,
    SpectrogramConfig,
    Waveform,
    estimate_f0,
    frame_energy,
    mel_spectrogram,
)
from .errors import AlignmentError, ConfigError, DataFormatError, NumericError
from .model import TinyTTS, forward_teacher_forced
from .tensor import GradTape, Rng, Tensor

TOY_VOCAB = 12          # pseudo-phonemes; ids start at 2 (0/1 reserved)
TOY_VOCAB_SIZE = TOY_VOCAB + 2


@dataclass
class TrainSample:
    """One aligned utterance: ids, integer frame durations, and targets."""

    ids: np.ndarray            # (N,) int
    durations: np.ndarray      # (N,) int frames, sum == mel frame count
    mel_target: np.ndarray     # (M, n_mels) log-mel
    pitch_target: np.ndarray   # (N,) Hz, per-phoneme voiced mean (0 if none)
    energy_target: np.ndarray  # (N,) per-phoneme mean frame energy

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.durations = np.asarray(self.durations, dtype=np.int64)
        if self.ids.size < 1:
            raise ConfigError("a training sample needs at least one phoneme")
        if int(self.durations.sum()) != self.mel_target.shape[0]:
            raise AlignmentError(
                f"durations sum to {int(self.durations.sum())} frames but the mel "
                f"target has {self.mel_target.shape[0]}")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    warmup_epochs: int = 50
    total_epochs: int = 200      # desk-scale default; full runs use 5000
    batch_size: int = 8          # desk-scale default; full runs use 128
    weight_decay: float = 1e-2
    grad_clip_norm: float = 1.0
    mel_weight: float = 10.0
    pitch_weight: float = 2.0
    energy_weight: float = 2.0
    duration_weight: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0    # epochs; 0 disables

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError(
                f"warmup ({self.warmup_epochs}) must be below total epochs "
                f"({self.total_epochs})")
        for name in ("mel_weight", "pitch_weight", "energy_weight", "duration_weight"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


def load_train_config(path) -> TrainConfig:
    """Flat key=value text file; '#' starts a comment."""
    valid = {f.name: f.type for f in fields(TrainConfig)}
    values: dict = {}
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(
                f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in valid:
            raise DataFormatError(f"{path}:{lineno}: unknown config key '{key}'")
        caster = float if valid[key] == "float" else int
        try:
            values[key] = caster(val)
        except ValueError as exc:
            raise DataFormatError(
                f"{path}:{lineno}: bad value for key '{key}': {val!r}") from exc
    return TrainConfig(**values)


def format_train_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in fields(TrainConfig))


@dataclass
class LossTerms:
    mel: float
    pitch: float
    energy: float
    duration: float
    total: float


def _mse(pred: Tensor, target: np.ndarray) -> Tensor:
    t = Tensor(np.asarray(target, dtype=pred.dtype))
    return T.mean_all(T.square(T.sub(pred, t)))


def compute_loss(mel: Tensor, prediction, sample: TrainSample,
                 cfg: TrainConfig) -> tuple[Tensor, LossTerms]:
    """Weighted sum: mel L1 plus MSE on pitch, energy, and duration.

    Durations are compared in linear frame units. The mel rows must already
    align with the target (teacher forcing); a mismatch is a duration
    bookkeeping bug, not a modelling error.
    """
    if mel.shape[0] != sample.mel_target.shape[0]:
        raise AlignmentError(
            f"predicted mel has {mel.shape[0]} frames, target has "
            f"{sample.mel_target.shape[0]}; durations were not teacher-forced")
    target = Tensor(sample.mel_target.astype(mel.dtype))
    l_mel = T.mean_all(T.absolute(T.sub(mel, target)))
    l_pitch = _mse(prediction.pitch, sample.pitch_target)
    l_energy = _mse(prediction.energy, sample.energy_target)
    l_duration = _mse(prediction.duration, sample.durations.astype(np.float64))
    total = T.add(T.add(T.scale(l_mel, cfg.mel_weight),
                        T.scale(l_pitch, cfg.pitch_weight)),
                  T.add(T.scale(l_energy, cfg.energy_weight),
                        T.scale(l_duration, cfg.duration_weight)))
    terms = LossTerms(mel=l_mel.item(), pitch=l_pitch.item(),
                      energy=l_energy.item(), duration=l_duration.item(),
                      total=total.item())
    return total, terms


def lr_at(step: int, cfg: TrainConfig, steps_per_epoch: int) -> float:
    """Linear ramp to cfg.lr over the warmup epochs, then cosine decay to 0.

    With total = total_epochs * steps_per_epoch, the rate is exactly cfg.lr
    at the warmup boundary and reaches 0 at step == total; the training loop
    runs steps 0 .. total-1.
    """
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.total_epochs * steps_per_epoch
    if step < warm:
        return cfg.lr * step / warm if warm else cfg.lr
    t = (step - warm) / max(1, total - warm)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(t, 1.0)))


def adamw_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
               t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One decoupled-weight-decay Adam update, in place (t counts from 1)."""
    if weight_decay:
        param -= (lr * weight_decay) * param
    m += (1.0 - beta1) * (grad - m)
    v += (1.0 - beta2) * (grad * grad - v)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    """Optimizer state over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        self.t += 1
        lr = self.lr if lr is None else lr
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adamw_step(p.data, grad, self.m[name], self.v[name], self.t, lr,
                       self.beta1, self.beta2, self.eps, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"t": np.array([self.t], dtype=np.int64)}
        for k in self.params:
            out[f"m::{k}"] = self.m[k]
            out[f"v::{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["t"][0])
        for k in self.params:
            self.m[k] = np.array(arrays[f"m::{k}"])
            self.v[k] = np.array(arrays[f"v::{k}"])


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


# ---------------------------------------------------------------------------
# target extraction and the toy dataset

def extract_targets(wave_in: Waveform, ids: np.ndarray, durations: np.ndarray,
                    cfg: SpectrogramConfig) -> TrainSample:
    """Build one aligned TrainSample from audio plus known durations.

    Per-phoneme pitch is the mean of voiced F0 frames inside the phoneme's
    span (0 when the whole span is unvoiced); energy is the mean frame
    energy. The mel tail is trimmed or floor-padded so the frame count
    equals the duration sum; more than 2 frames of disagreement means the
    alignment itself is wrong.
    """
    durations = np.asarray(durations, dtype=np.int64)
    mel = mel_spectrogram(wave_in, cfg)
    energy = frame_energy(wave_in, cfg)
    f0 = estimate_f0(wave_in, cfg)
    want = int(durations.sum())
    have = mel.n_frames
    if abs(have - want) > 2:
        raise AlignmentError(
            f"waveform yields {have} mel frames but durations sum to {want}")
    frames = mel.frames
    if have > want:
        frames = frames[:want]
        energy, f0 = energy[:want], f0[:want]
    elif have < want:
        pad = want - have
        frames = np.vstack([frames, np.full((pad, frames.shape[1]),
                                            np.log(cfg.log_floor))])
        energy = np.concatenate([energy, np.zeros(pad)])
        f0 = np.concatenate([f0, np.zeros(pad)])
    pitch_t = np.zeros(len(durations))
    energy_t = np.zeros(len(durations))
    start = 0
    for i, dur in enumerate(durations):
        span_f0 = f0[start:start + dur]
        span_energy = energy[start:start + dur]
        voiced = span_f0[span_f0 > 0]
        pitch_t[i] = voiced.mean() if voiced.size else 0.0
        energy_t[i] = span_energy.mean() if span_energy.size else 0.0
        start += dur
    return TrainSample(ids=np.asarray(ids), durations=durations,
                       mel_target=frames, pitch_target=pitch_t,
                       energy_target=energy_t)


@dataclass
class ToyDataset:
    samples: list[TrainSample]
    waveforms: list[Waveform]
    vocab_size: int = TOY_VOCAB_SIZE
    fundamentals: np.ndarray = field(default_factory=lambda: np.zeros(TOY_VOCAB))


def toy_fundamentals() -> np.ndarray:
    """Fixed fundamental per pseudo-phoneme, spread over 120-400 Hz."""
    return np.linspace(120.0, 400.0, TOY_VOCAB)


def generate_toy_dataset(n_samples: int, seed: int,
                         cfg: SpectrogramConfig | None = None,
                         min_phones: int = 3, max_phones: int = 8,
                         min_frames: int = 4, max_frames: int = 12) -> ToyDataset:
    """Deterministic synthetic voices: each pseudo-phoneme is a fixed-pitch,
    fixed-amplitude sine segment; 5 ms boundary fades keep joins clean, and
    segment lengths are exact hop multiples so durations align by
    construction. Targets come from extract_targets, so the data is
    self-consistent with the analysis pipeline."""
    cfg = cfg or SpectrogramConfig()
    rng = Rng(seed)
    funds = toy_fundamentals()
    amps = 0.3 + 0.6 * (np.arange(TOY_VOCAB) % 4) / 3.0
    fade = int(0.005 * cfg.sample_rate)
    samples: list[TrainSample] = []
    waves: list[Waveform] = []
    for _ in range(n_samples):
        n_phones = int(rng.integers(min_phones, max_phones + 1))
        phones = rng.integers(0, TOY_VOCAB, n_phones)
        durations = rng.integers(min_frames, max_frames + 1, n_phones)
        segments = []
        for ph, dur in zip(phones, durations):
            n = int(dur) * cfg.hop_length
            t = np.arange(n) / cfg.sample_rate
            seg = amps[ph] * np.sin(2.0 * np.pi * funds[ph] * t)
            ramp = np.ones(n)
            ramp[:fade] = np.linspace(0.0, 1.0, fade)
            ramp[-fade:] = np.linspace(1.0, 0.0, fade)
            segments.append(seg * ramp)
        wave_out = Waveform(np.concatenate(segments), cfg.sample_rate)
        ids = phones.astype(np.int64) + 2  # 0/1 reserved for pad/unk
        samples.append(extract_targets(wave_out, ids, durations, cfg))
        waves.append(wave_out)
    return ToyDataset(samples=samples, waveforms=waves, fundamentals=funds)


# ---------------------------------------------------------------------------
# the training loop

LOG_COLUMNS = ("epoch", "step", "lr", "l_mel", "l_p", "l_e", "l_d", "total",
               "grad_norm")


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, **kw) -> None:
        self.rows.append(kw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)
        return buf.getvalue()


def _first_nonfinite(model: TinyTTS, terms: LossTerms) -> str:
    for label, value in (("l_mel", terms.mel), ("l_p", terms.pitch),
                         ("l_e", terms.energy), ("l_d", terms.duration)):
        if not math.isfinite(value):
            return f"loss term {label}"
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.data)):
            return f"parameter {name}"
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return f"gradient of {name}"
    return "total loss"


def fit_energy_range(samples: list[TrainSample]) -> tuple[float, float]:
    """Linear energy-bin range from observed train statistics."""
    lo = min(float(s.energy_target.min()) for s in samples)
    hi = max(float(s.energy_target.max()) for s in samples)
    if hi <= lo:
        hi = lo + 1.0
    return lo, hi


def train(model: TinyTTS, dataset: list[TrainSample], cfg: TrainConfig,
          max_steps: int | None = None, checkpoint_fn=None,
          optimizer: AdamW | None = None, start_epoch: int = 0) -> TrainLog:
    """Shuffled seeded mini-batches with teacher-forced durations.

    Batch loss is the mean of per-sample losses (samples are never padded,
    so nothing needs masking). Gradients are clipped to cfg.grad_clip_norm
    before each AdamW step; a non-finite loss aborts with the first
    offending tensor named.
    """
    if not dataset:
        raise ConfigError("training needs at least one sample")
    # freeze energy bins from train statistics before the first step
    model.config.energy_range = fit_energy_range(dataset)
    model.refresh_bin_edges()
    params = dict(model.named_parameters())
    opt = optimizer or AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    shuffle_rng = Rng(cfg.seed)
    steps_per_epoch = max(1, math.ceil(len(dataset) / cfg.batch_size))
    log = TrainLog()
    step = start_epoch * steps_per_epoch
    for epoch in range(start_epoch, cfg.total_epochs):
        order = shuffle_rng.permutation(len(dataset))
        for b in range(steps_per_epoch):
            batch = [dataset[i] for i in order[b * cfg.batch_size:
                                               (b + 1) * cfg.batch_size]]
            if not batch:
                continue
            lr = lr_at(step, cfg, steps_per_epoch)
            opt.zero_grad()
            with GradTape() as tape:
                losses = []
                mean_terms = np.zeros(5)
                for sample in batch:
                    mel, pred = forward_teacher_forced(model, sample.ids,
                                                       sample.durations)
                    loss, terms = compute_loss(mel, pred, sample, cfg)
                    losses.append(loss)
                    mean_terms += np.array([terms.mel, terms.pitch, terms.energy,
                                            terms.duration, terms.total])
                total = losses[0]
                for extra in losses[1:]:
                    total = T.add(total, extra)
                total = T.scale(total, 1.0 / len(batch))
            mean_terms /= len(batch)
            terms = LossTerms(*mean_terms)
            if not math.isfinite(terms.total):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}: first "
                    f"non-finite tensor is {_first_nonfinite(model, terms)}")
            tape.backward(total)
            grad_norm = clip_gradients(params, cfg.grad_clip_norm)
            if not math.isfinite(grad_norm):
                raise NumericError(
                    f"non-finite gradients at epoch {epoch} step {step}: first "
                    f"non-finite tensor is {_first_nonfinite(model, terms)}")
            opt.step(lr=lr)
            log.append(epoch=epoch, step=step, lr=lr, l_mel=terms.mel,
                       l_p=terms.pitch, l_e=terms.energy, l_d=terms.duration,
                       total=terms.total, grad_norm=grad_norm)
            step += 1
            if max_steps is not None and step >= max_steps:
                return log
        if (checkpoint_fn is not None and cfg.checkpoint_every
                and (epoch + 1) % cfg.checkpoint_every == 0):
            checkpoint_fn(model, opt, epoch + 1)
    return log


def gradient_check(model: TinyTTS, sample: TrainSample,
                   cfg: TrainConfig | None = None,
                   eps: float = 1e-5) -> tuple[float, str, dict[str, float]]:
    """Backward vs central finite differences on every named parameter.

    Returns (max relative error, worst parameter name, per-parameter errors).
    Relative error uses max(|a|, |b|, 1) as the denominator so near-zero
    gradients compare on an absolute scale.
    """
    cfg = cfg or TrainConfig()

    def loss_value() -> float:
        mel, pred = forward_teacher_forced(model, sample.ids, sample.durations)
        total, _ = compute_loss(mel, pred, sample, cfg)
        return total.item()

    model.zero_grad()
    with GradTape() as tape:
        mel, pred = forward_teacher_forced(model, sample.ids, sample.durations)
        total, _ = compute_loss(mel, pred, sample, cfg)
    tape.backward(total)

    errors: dict[str, float] = {}
    worst_name, worst = "", 0.0
    for name, p in model.named_parameters():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        (fd,) = T.finite_difference_gradient(loss_value, [p], eps=eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1.0)
        err = float(np.max(np.abs(analytic - fd) / denom))
        errors[name] = err
        if err > worst:
            worst, worst_name = err, name
    return worst, worst_name, errors
