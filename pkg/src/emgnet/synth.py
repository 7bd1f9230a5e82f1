"""Seeded synthetic sEMG recordings with the hold-only repetition layout.

Every gesture has a fixed activation pattern over latent muscle sources.
Each source is Gaussian noise band-limited to the 20-450 Hz EMG band
(scaled to the sample rate relative to a 2 kHz reference), and the
electrodes see a linear mix of the sources, so the per-channel RMS of a
gesture is ``sqrt(mixing**2 @ activation**2)``. Rest has no active source and is
pure noise floor. Repetitions jitter the activations by up to +-10% and
every recording gets white sensor noise at the configured SNR.

These are amplitude signatures, not muscle physiology; accuracies on this
data say nothing about accuracies on human recordings.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import UsageError
from .pipeline import DEVICE_CHANNELS, DEVICE_RATES, Recording

DEFAULT_SNR_DB = {"separable": 20.0, "realistic": 6.0}
REFERENCE_RATE_HZ = 2000.0
EMG_BAND_HZ = (20.0, 450.0)
JITTER = 0.10
SEPARABLE_WIDTH = 0.8  # radians
REALISTIC_WIDTH = 0.9


@dataclass
class SynthConfig:
    num_gestures: int = 15
    num_repetitions: int = 6
    channels: int = 8
    sample_rate_hz: float = 200.0
    hold_seconds: float = 10.0
    snr_db: float = None
    cross_subject_seed: int = 0
    difficulty: str = "separable"
    seed: int = 0
    window_ms: float = 150.0

    def __post_init__(self):
        if self.difficulty not in DEFAULT_SNR_DB:
            raise UsageError(f"difficulty must be one of {sorted(DEFAULT_SNR_DB)}, got {self.difficulty!r}")
        if self.snr_db is None:
            self.snr_db = DEFAULT_SNR_DB[self.difficulty]
        if not np.isfinite(self.snr_db):
            raise UsageError("snr_db must be finite")
        if self.num_gestures < 2 or self.num_repetitions < 1 or self.channels < 1:
            raise UsageError("need >= 2 gestures, >= 1 repetition and >= 1 channel")
        if self.samples_per_recording < round(self.window_ms * self.sample_rate_hz / 1000.0):
            raise UsageError("hold_seconds * sample_rate_hz is shorter than one window")

    @classmethod
    def for_device(cls, device: str, **kw) -> "SynthConfig":
        if device not in DEVICE_CHANNELS:
            raise UsageError(f"unknown device {device!r}")
        kw.setdefault("channels", DEVICE_CHANNELS[device])
        kw.setdefault("sample_rate_hz", DEVICE_RATES[device])
        return cls(**kw)

    @property
    def samples_per_recording(self) -> int:
        return int(round(self.hold_seconds * self.sample_rate_hz))

    @property
    def noise_std(self) -> float:
        """White-noise standard deviation; signal amplitudes are of order 1."""
        return 10.0 ** (-self.snr_db / 20.0)

    def to_dict(self):
        return asdict(self)


def gesture_names(num_gestures: int) -> list:
    return ["rest"] + [f"gesture_{g}" for g in range(1, num_gestures)]


@dataclass
class Signatures:
    mixing: np.ndarray  # (channels, sources)
    activations: np.ndarray  # (gestures, sources); row 0 (rest) is zero

    @property
    def envelopes(self) -> np.ndarray:
        """Per-channel amplitude of every gesture before jitter and noise."""
        return np.sqrt(self.activations**2 @ (self.mixing**2).T)


def _ring_mixing(channel_angles, source_angles, width):
    """Gain of each source at each electrode, falling off with angular distance."""
    d = np.abs(np.angle(np.exp(1j * (channel_angles[:, None] - source_angles[None, :]))))
    return np.exp(-((d / width) ** 2))


def make_signatures(config: SynthConfig) -> Signatures:
    """Subject-specific mixing and gesture activations, fixed by ``cross_subject_seed``.

    Electrodes sit evenly on a ring around the forearm and muscle sources at
    angles on the same ring; a source leaks into nearby electrodes.

    * separable: one muscle per gesture, muscles evenly spaced, so each
      gesture is a distinct bump of energy around the ring.
    * realistic: four more muscles than electrodes at random angles with
      random electrode polarity (cross-talk), each gesture recruiting 2-4 of
      them at random strengths.
    """
    rng = np.random.default_rng([config.cross_subject_seed, 0])
    c, g = config.channels, config.num_gestures
    channel_angles = 2 * np.pi * np.arange(c) / c
    offset = rng.uniform(0, 2 * np.pi)
    if config.difficulty == "separable":
        source_angles = offset + 2 * np.pi * np.arange(g - 1) / (g - 1)
        mixing = _ring_mixing(channel_angles, source_angles, SEPARABLE_WIDTH)
        act = np.vstack([np.zeros(g - 1), np.eye(g - 1)])
        return Signatures(mixing, act)
    sources = c + 4
    source_angles = offset + rng.uniform(0, 2 * np.pi, sources)
    mixing = _ring_mixing(channel_angles, source_angles, REALISTIC_WIDTH)
    mixing *= rng.choice([-1.0, 1.0], size=mixing.shape)
    act = np.zeros((g, sources))
    for k in range(1, g):
        active = rng.choice(sources, size=rng.integers(2, 5), replace=False)
        act[k, active] = rng.uniform(0.4, 1.0, size=len(active))
    return Signatures(mixing, act)


def band_limited_noise(rng, n_samples, n_series, sample_rate_hz) -> np.ndarray:
    """Unit-variance Gaussian noise restricted to the EMG band, ``(n_samples, n_series)``."""
    scale = sample_rate_hz / REFERENCE_RATE_HZ
    lo, hi = EMG_BAND_HZ[0] * scale, EMG_BAND_HZ[1] * scale
    white = rng.standard_normal((n_samples, n_series))
    spec = np.fft.rfft(white, axis=0)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate_hz)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    out = np.fft.irfft(spec, n=n_samples, axis=0)
    std = out.std(axis=0)
    std[std == 0] = 1.0
    return out / std


def generate_recording(config: SynthConfig, sig: Signatures, gesture: int, repetition: int) -> Recording:
    rng = np.random.default_rng([config.seed, gesture, repetition])
    n = config.samples_per_recording
    act = sig.activations[gesture] * (1.0 + rng.uniform(-JITTER, JITTER, size=sig.activations.shape[1]))
    sources = band_limited_noise(rng, n, sig.mixing.shape[1], config.sample_rate_hz)
    samples = (sources * act) @ sig.mixing.T
    samples += config.noise_std * rng.standard_normal((n, config.channels))
    return Recording("synthetic", gesture, repetition, float(config.sample_rate_hz), samples)


def generate_dataset(config: SynthConfig) -> list:
    """One recording per (gesture, repetition), repetitions numbered from 1."""
    sig = make_signatures(config)
    return [
        generate_recording(config, sig, g, r)
        for g in range(config.num_gestures)
        for r in range(1, config.num_repetitions + 1)
    ]
