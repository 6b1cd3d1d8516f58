"""
Deterministic signal processing.

Framing, windowing, the exact-length DFT power spectrogram and the reference
triangular filterbanks (Mel and linear) used to initialize the learnable
front-ends and to build the handcrafted log-Mel baseline. Nothing in this
module is differentiable; the front-ends wrap its outputs as constants.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import scipy.fft
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view

from .data import AudioClip
from .exceptions import ShapeError
from .utils import read_matrix_csv, write_matrix_csv

logger = logging.getLogger(__name__)

WindowName = Literal["rectangular", "hann"]
FrequencyScale = Literal["mel", "linear"]
MelScale = Literal["htk", "slaney"]

# Slaney-style mel: linear below 1 kHz, logarithmic above.
_SLANEY_F_SP = 200.0 / 3.0
_SLANEY_MIN_LOG_HZ = 1000.0
_SLANEY_MIN_LOG_MEL = _SLANEY_MIN_LOG_HZ / _SLANEY_F_SP
_SLANEY_LOGSTEP = np.log(6.4) / 27.0


@dataclass(frozen=True)
class FramingConfig:
    """
    Short-time analysis geometry.

    Attributes:
        frame_length (int): Samples per frame (M)
        hop (int): Samples between frame starts
        sample_rate (int): f_s in Hz
    """

    frame_length: int = 480
    hop: int = 160
    sample_rate: int = 16000

    def __post_init__(self) -> None:
        if self.frame_length < 1:
            raise ValueError(f"frame_length must be positive, got {self.frame_length}")
        if not 0 < self.hop <= self.frame_length:
            raise ValueError(
                f"hop must satisfy 0 < hop <= frame_length, got hop={self.hop}"
            )

    @property
    def n_bins(self) -> int:
        """One-sided DFT bin count F = M/2 + 1."""
        return self.frame_length // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        """Frame count T = floor((L - M) / hop) + 1."""
        if n_samples < self.frame_length:
            raise ShapeError(
                f"signal of {n_samples} samples is shorter than one frame "
                f"({self.frame_length} samples)"
            )
        return (n_samples - self.frame_length) // self.hop + 1


@dataclass(frozen=True)
class PowerSpectrogram:
    """T×F matrix of squared STFT magnitudes."""

    values: np.ndarray

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[-2])

    @property
    def n_bins(self) -> int:
        return int(self.values.shape[-1])


@dataclass(frozen=True)
class ReferenceFilterbank:
    """
    Fixed triangular filterbank.

    Attributes:
        weights (np.ndarray): F×K nonnegative matrix, one triangle per column
        center_freqs (np.ndarray): K peak frequencies in Hz (before bin snapping)
        scale (str): "mel" or "linear"
    """

    weights: np.ndarray
    center_freqs: np.ndarray
    scale: str

    @property
    def n_channels(self) -> int:
        return int(self.weights.shape[1])


def window_function(name: WindowName, length: int) -> np.ndarray:
    """
    Analysis window of the given length.

    Args:
        name (str): "rectangular" or "hann" (periodic, as used for STFTs)
        length (int): Window length in samples

    Returns:
        np.ndarray: Window samples
    """
    if name == "rectangular":
        return np.ones(length)
    if name == "hann":
        return scipy.signal.get_window("hann", length, fftbins=True)
    raise ValueError(f"Unknown window: {name}")


def _samples_of(signal: Union[AudioClip, np.ndarray]) -> np.ndarray:
    if isinstance(signal, AudioClip):
        return signal.samples
    return np.asarray(signal, dtype=np.float64)


def frame_signal(
    signal: Union[AudioClip, np.ndarray],
    cfg: FramingConfig,
    window: WindowName = "rectangular",
) -> np.ndarray:
    """
    Split a signal (or a batch of signals) into overlapping windowed frames.

    Args:
        signal: AudioClip, 1-D samples, or a batch with samples on the last axis
        cfg (FramingConfig): Frame geometry
        window (str): "rectangular" or "hann"

    Returns:
        np.ndarray: (..., T, M) frames

    Raises:
        ShapeError: If the signal is shorter than one frame
    """
    samples = _samples_of(signal)
    n_frames = cfg.n_frames(samples.shape[-1])
    frames = sliding_window_view(samples, cfg.frame_length, axis=-1)[..., :: cfg.hop, :]
    frames = frames[..., :n_frames, :]
    return frames * window_function(window, cfg.frame_length)


def power_spectrogram(
    signal: Union[AudioClip, np.ndarray],
    cfg: FramingConfig,
    window: WindowName = "hann",
) -> PowerSpectrogram:
    """
    |DFT_M(frame)|² for every frame, one-sided bins 0..M/2.

    The transform length equals the frame length exactly; frames are never
    zero-padded to a power of two.

    Args:
        signal: AudioClip, samples, or a batch of samples (last axis = time)
        cfg (FramingConfig): Frame geometry
        window (str): Analysis window, hann by default

    Returns:
        PowerSpectrogram: (..., T, F) values
    """
    frames = frame_signal(signal, cfg, window)
    spectrum = scipy.fft.rfft(frames, n=cfg.frame_length, axis=-1)
    return PowerSpectrogram(values=np.abs(spectrum) ** 2)


def one_sided_weights(frame_length: int) -> np.ndarray:
    """Multiplicity of each one-sided bin in the full spectrum."""
    weights = np.full(frame_length // 2 + 1, 2.0)
    weights[0] = 1.0
    if frame_length % 2 == 0:
        weights[-1] = 1.0
    return weights


def hz_to_mel(freqs: Union[float, np.ndarray], mel_scale: MelScale = "htk") -> np.ndarray:
    """Convert Hz to mel on the HTK or Slaney scale."""
    freqs = np.asarray(freqs, dtype=np.float64)
    if mel_scale == "htk":
        return 2595.0 * np.log10(1.0 + freqs / 700.0)
    if mel_scale == "slaney":
        linear = freqs / _SLANEY_F_SP
        safe = np.maximum(freqs, _SLANEY_MIN_LOG_HZ)
        logarithmic = _SLANEY_MIN_LOG_MEL + np.log(safe / _SLANEY_MIN_LOG_HZ) / _SLANEY_LOGSTEP
        return np.where(freqs >= _SLANEY_MIN_LOG_HZ, logarithmic, linear)
    raise ValueError(f"Unknown mel scale: {mel_scale}")


def mel_to_hz(mels: Union[float, np.ndarray], mel_scale: MelScale = "htk") -> np.ndarray:
    """Inverse of hz_to_mel."""
    mels = np.asarray(mels, dtype=np.float64)
    if mel_scale == "htk":
        return 700.0 * (10.0 ** (mels / 2595.0) - 1.0)
    if mel_scale == "slaney":
        linear = mels * _SLANEY_F_SP
        logarithmic = _SLANEY_MIN_LOG_HZ * np.exp(
            _SLANEY_LOGSTEP * (mels - _SLANEY_MIN_LOG_MEL)
        )
        return np.where(mels >= _SLANEY_MIN_LOG_MEL, logarithmic, linear)
    raise ValueError(f"Unknown mel scale: {mel_scale}")


def _edge_frequencies(
    n_channels: int,
    f_min: float,
    f_max: float,
    scale: FrequencyScale,
    mel_scale: MelScale,
) -> np.ndarray:
    if scale == "mel":
        mels = np.linspace(
            hz_to_mel(f_min, mel_scale), hz_to_mel(f_max, mel_scale), n_channels + 2
        )
        edges = mel_to_hz(mels, mel_scale)
        edges[0], edges[-1] = f_min, f_max
        return edges
    if scale == "linear":
        return np.linspace(f_min, f_max, n_channels + 2)
    raise ValueError(f"Unknown frequency scale: {scale}")


def center_frequencies(
    n_channels: int,
    f_min: float,
    f_max: float,
    scale: FrequencyScale = "mel",
    mel_scale: MelScale = "htk",
) -> np.ndarray:
    """
    K center frequencies: the interior points of K+2 equally spaced scale points.

    Args:
        n_channels (int): K
        f_min (float): Lowest edge in Hz
        f_max (float): Highest edge in Hz
        scale (str): "mel" or "linear"
        mel_scale (str): "htk" or "slaney" when scale is "mel"

    Returns:
        np.ndarray: K frequencies in Hz, strictly increasing
    """
    return _edge_frequencies(n_channels, f_min, f_max, scale, mel_scale)[1:-1]


def _triangular_filterbank(
    n_bins: int,
    n_channels: int,
    sample_rate: int,
    f_min: float,
    f_max: Optional[float],
    scale: FrequencyScale,
    mel_scale: MelScale,
    normalize: Literal["peak", "area"],
) -> ReferenceFilterbank:
    f_max = sample_rate / 2.0 if f_max is None else f_max
    if n_channels < 1:
        raise ValueError(f"n_channels must be >= 1, got {n_channels}")
    if not 0.0 <= f_min < f_max <= sample_rate / 2.0:
        raise ValueError(
            f"Band limits must satisfy 0 <= f_min < f_max <= f_s/2, "
            f"got f_min={f_min}, f_max={f_max}, f_s={sample_rate}"
        )

    edges = _edge_frequencies(n_channels, f_min, f_max, scale, mel_scale)
    bin_width = sample_rate / (2.0 * (n_bins - 1))
    edge_bins = np.clip(np.round(edges / bin_width).astype(int), 0, n_bins - 1)
    if np.any(np.diff(edge_bins) <= 0):
        raise ValueError(
            f"{n_channels} {scale} filters do not fit in {n_bins} bins: "
            "adjacent edge points collapse to the same bin"
        )

    bins = np.arange(n_bins)
    weights = np.zeros((n_bins, n_channels))
    for k in range(n_channels):
        lo, peak, hi = edge_bins[k], edge_bins[k + 1], edge_bins[k + 2]
        rising = (bins - lo) / (peak - lo)
        falling = (hi - bins) / (hi - peak)
        weights[:, k] = np.clip(np.minimum(rising, falling), 0.0, None)

    if normalize == "area":
        weights /= weights.sum(axis=0, keepdims=True)
    elif normalize != "peak":
        raise ValueError(f"Unknown normalization: {normalize}")

    return ReferenceFilterbank(weights=weights, center_freqs=edges[1:-1], scale=scale)


def make_mel_filterbank(
    n_bins: int,
    n_channels: int,
    sample_rate: int,
    f_min: float = 0.0,
    f_max: Optional[float] = None,
    mel_scale: MelScale = "htk",
    normalize: Literal["peak", "area"] = "peak",
) -> ReferenceFilterbank:
    """
    Triangular filters equally spaced on the mel scale.

    Args:
        n_bins (int): F, one-sided bin count
        n_channels (int): K
        sample_rate (int): f_s in Hz
        f_min (float): Lower band limit in Hz
        f_max (float, optional): Upper band limit, f_s/2 when omitted
        mel_scale (str): "htk" (2595·log10(1+f/700)) or "slaney"
        normalize (str): "peak" (height 1) or "area" (unit sum per column)

    Returns:
        ReferenceFilterbank: F×K weights

    Raises:
        ValueError: On invalid band limits or when filters collapse onto one bin
    """
    return _triangular_filterbank(
        n_bins, n_channels, sample_rate, f_min, f_max, "mel", mel_scale, normalize
    )


def make_linear_filterbank(
    n_bins: int,
    n_channels: int,
    sample_rate: int,
    f_min: float = 0.0,
    f_max: Optional[float] = None,
    normalize: Literal["peak", "area"] = "peak",
) -> ReferenceFilterbank:
    """Triangular filters equally spaced in Hz; see make_mel_filterbank."""
    return _triangular_filterbank(
        n_bins, n_channels, sample_rate, f_min, f_max, "linear", "htk", normalize
    )


def make_reference_filterbank(
    scale: FrequencyScale,
    cfg: FramingConfig,
    n_channels: int,
    f_min: float = 0.0,
    f_max: Optional[float] = None,
    mel_scale: MelScale = "htk",
) -> ReferenceFilterbank:
    """Dispatch to the mel or linear constructor for a framing geometry."""
    if scale == "mel":
        return make_mel_filterbank(
            cfg.n_bins, n_channels, cfg.sample_rate, f_min, f_max, mel_scale
        )
    return make_linear_filterbank(cfg.n_bins, n_channels, cfg.sample_rate, f_min, f_max)


def erb(center_freq: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Equivalent rectangular bandwidth in Hz at moderate levels: 24.7 + 0.108·f."""
    return 24.7 + 0.108 * center_freq


def log_mel(
    signal: Union[AudioClip, np.ndarray],
    fb: ReferenceFilterbank,
    cfg: FramingConfig,
    eta: float = float(np.exp(-50.0)),
    window: WindowName = "hann",
) -> np.ndarray:
    """
    Handcrafted log filterbank energies log(max(P·W, eta)).

    Args:
        signal: AudioClip or samples (batch allowed)
        fb (ReferenceFilterbank): Filterbank applied to the power spectrogram
        cfg (FramingConfig): Frame geometry
        eta (float): Floor applied before the logarithm
        window (str): STFT window

    Returns:
        np.ndarray: (..., T, K) features
    """
    spec = power_spectrogram(signal, cfg, window).values
    if spec.shape[-1] != fb.weights.shape[0]:
        raise ShapeError(
            f"spectrogram has {spec.shape[-1]} bins, filterbank expects {fb.weights.shape[0]}"
        )
    return np.log(np.maximum(spec @ fb.weights, eta))


def save_filterbank_csv(weights: np.ndarray, path: Path) -> Path:
    """Write an F×K matrix: one row per frequency bin, one column per channel."""
    return write_matrix_csv(Path(path), weights)


def load_filterbank_csv(path: Path) -> np.ndarray:
    """Read a matrix written by save_filterbank_csv."""
    return read_matrix_csv(Path(path))
