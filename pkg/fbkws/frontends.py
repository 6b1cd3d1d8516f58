"""
Learnable filterbank front-ends.

Two feature extractors map waveforms to (batch, T, K, C) feature maps:

- FilterbankMatrixFrontend: log(max(P · relu(W), eta)) on the power
  spectrogram P with a trainable F×K matrix W.
- GammachirpFrontend: time-domain filtering with K parametric gammachirp
  kernels, per-frame energy by Parseval's theorem, then log(max(., eta)).

Both finish with per-channel feature normalization (batch norm without an
affine part). FusedFrontend combines two of them as input channels of the
back-end, or side by side along the channel axis.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .data import AudioClip
from .dsp import (
    FramingConfig,
    FrequencyScale,
    MelScale,
    PowerSpectrogram,
    WindowName,
    center_frequencies,
    erb,
    power_spectrogram,
    save_filterbank_csv,
    window_function,
)
from .exceptions import ShapeError
from .utils import write_csv, write_matrix_csv

logger = logging.getLogger(__name__)

ETA = float(np.exp(-50.0))
DEFAULT_KERNEL_LENGTH = 2048

CochleagramMode = Literal["parseval_rect", "parseval_hann", "maxpool"]
COCHLEAGRAM_MODES = ("parseval_rect", "parseval_hann", "maxpool")
ParamInit = Literal["constant", "random"]
FusionMode = Literal["stack", "concat"]

SignalBatch = Union[np.ndarray, Sequence[AudioClip]]


def as_signal_batch(signals: SignalBatch) -> np.ndarray:
    """Stack clips (or pass through an array) into (B, L) samples."""
    if isinstance(signals, np.ndarray):
        batch = signals if signals.ndim == 2 else signals[None, :]
        return batch
    lengths = {len(clip.samples) for clip in signals}
    if len(lengths) > 1:
        raise ShapeError(f"clips in a batch must share one length, got {sorted(lengths)}")
    return np.stack([clip.samples for clip in signals])


@dataclass
class FilterbankMatrix:
    """Trainable F×K matrix; the effective filterbank is relu(W)."""

    weights: Tensor
    eta: float = ETA

    @property
    def n_bins(self) -> int:
        return self.weights.shape[0]

    @property
    def n_channels(self) -> int:
        return self.weights.shape[1]

    def effective(self) -> np.ndarray:
        return np.maximum(self.weights.data, 0.0)


@dataclass
class GammachirpParams:
    """
    Raw (unconstrained) gammachirp parameters.

    Effective values are a_k = relu(a), n = max(n_raw, 1), b = relu(b_raw),
    f_k = relu(f_norm)·f_s/2 and ERB_k = relu(erb_norm)·f_s/2. The phase is
    fixed to zero. `chirp_trainable` is False for the gammatone variant, which
    also pins c to 0.
    """

    a: Tensor
    n_raw: Tensor
    b_raw: Tensor
    c: Tensor
    f_norm: Tensor
    erb_norm: Tensor
    kernel_length: int = DEFAULT_KERNEL_LENGTH
    chirp_trainable: bool = True

    @property
    def n_channels(self) -> int:
        return self.a.shape[0]

    def tensors(self) -> Dict[str, Tensor]:
        return {
            "a": self.a,
            "n_raw": self.n_raw,
            "b_raw": self.b_raw,
            "c": self.c,
            "f_norm": self.f_norm,
            "erb_norm": self.erb_norm,
        }

    def set_trainable(self, trainable: bool) -> None:
        for name, tensor in self.tensors().items():
            tensor.requires_grad = trainable and (name != "c" or self.chirp_trainable)

    def effective(self, sample_rate: int) -> Dict[str, np.ndarray]:
        """Constrained values in physical units (Hz for f and ERB)."""
        nyquist = sample_rate / 2.0
        return {
            "a": np.maximum(self.a.data, 0.0).astype(np.float64),
            "n": np.maximum(self.n_raw.data, 1.0).astype(np.float64),
            "b": np.maximum(self.b_raw.data, 0.0).astype(np.float64),
            "c": self.c.data.astype(np.float64),
            "f_hz": np.maximum(self.f_norm.data, 0.0).astype(np.float64) * nyquist,
            "erb_hz": np.maximum(self.erb_norm.data, 0.0).astype(np.float64) * nyquist,
        }


def init_gammachirp(
    scale: FrequencyScale,
    param_init: ParamInit,
    n_channels: int,
    sample_rate: int,
    rng: Optional[np.random.Generator] = None,
    mel_scale: MelScale = "htk",
    chirp: bool = True,
    kernel_length: int = DEFAULT_KERNEL_LENGTH,
    f_min: float = 0.0,
    f_max: Optional[float] = None,
) -> GammachirpParams:
    """
    Initial gammachirp parameters.

    Constant init uses n=4, b=1.019, c=-1; random init draws n~U(3,5),
    b~U(0.8,1.2), c~U(-2,0). Gains start at 1 and center frequencies follow
    mel or linear spacing with ERB(f) = 24.7 + 0.108·f. With chirp=False the
    result is a fixed-c gammatone bank (c = 0).

    Args:
        scale (str): "mel" or "linear" spacing of the center frequencies
        param_init (str): "constant" or "random"
        n_channels (int): K
        sample_rate (int): f_s in Hz
        rng (np.random.Generator, optional): Required for random init
        mel_scale (str): Mel formula used for mel spacing
        chirp (bool): False for the gammatone variant
        kernel_length (int): Impulse response length in samples
        f_min (float): Lowest spacing edge in Hz
        f_max (float, optional): Highest spacing edge, f_s/2 when omitted

    Returns:
        GammachirpParams: Parameters in the current default dtype
    """
    if n_channels < 1:
        raise ValueError(f"n_channels must be >= 1, got {n_channels}")
    if kernel_length < 1:
        raise ValueError(f"kernel_length must be >= 1, got {kernel_length}")
    nyquist = sample_rate / 2.0
    freqs = center_frequencies(n_channels, f_min, f_max or nyquist, scale, mel_scale)

    if param_init == "constant":
        n, b, c = 4.0, 1.019, -1.0
    elif param_init == "random":
        if rng is None:
            raise ValueError("random gammachirp init needs an rng")
        n = float(rng.uniform(3.0, 5.0))
        b = float(rng.uniform(0.8, 1.2))
        c = float(rng.uniform(-2.0, 0.0))
    else:
        raise ValueError(f"Unknown parameter init: {param_init}")
    if not chirp:
        c = 0.0

    params = GammachirpParams(
        a=Tensor(np.ones(n_channels), name="a"),
        n_raw=Tensor([n], name="n_raw"),
        b_raw=Tensor([b], name="b_raw"),
        c=Tensor([c], name="c"),
        f_norm=Tensor(freqs / nyquist, name="f_norm"),
        erb_norm=Tensor(erb(freqs) / nyquist, name="erb_norm"),
        kernel_length=kernel_length,
        chirp_trainable=chirp,
    )
    params.set_trainable(True)
    return params


def _time_axis(kernel_length: int, sample_rate: int) -> np.ndarray:
    # t starts at one sample so that log(t) stays finite
    return (np.arange(kernel_length) + 1.0) / sample_rate


def gammachirp_kernels(
    params: GammachirpParams,
    sample_rate: int,
    normalize: bool = True,
    peak: Optional[np.ndarray] = None,
) -> Tensor:
    """
    All K impulse responses a_k·g_k(t) as a (K, N) tensor.

    With normalize=True each carrier-envelope product is divided by its own
    maximum absolute value before the gain is applied, so it lies in [-1, 1].
    A precomputed `peak` (K,) replaces the per-call maximum.
    """
    t = _time_axis(params.kernel_length, sample_rate)
    t_row = Tensor(t[None, :])
    log_t = Tensor(np.log(t)[None, :])
    nyquist = sample_rate / 2.0

    n = ad.maximum(params.n_raw, 1.0)
    b = ad.relu(params.b_raw)
    f_hz = ad.reshape(ad.relu(params.f_norm) * nyquist, (-1, 1))
    erb_hz = ad.reshape(ad.relu(params.erb_norm) * nyquist, (-1, 1))

    envelope = ad.power(t_row, n - 1.0) * ad.exp(-2.0 * np.pi * b * erb_hz * t_row)
    carrier = ad.cos(2.0 * np.pi * f_hz * t_row + params.c * log_t)
    response = envelope * carrier

    if normalize:
        if peak is None:
            scale = ad.maximum(ad.amax(ad.tabs(response), axis=1, keepdims=True), 1e-30)
        else:
            scale = Tensor(np.asarray(peak).reshape(-1, 1))
        response = response / scale
    gains = ad.reshape(ad.relu(params.a), (-1, 1))
    return gains * response


def kernel_peaks(params: GammachirpParams, sample_rate: int) -> np.ndarray:
    """Per-channel max |g_k(t)| of the un-normalized responses."""
    eff = params.effective(sample_rate)
    t = _time_axis(params.kernel_length, sample_rate)[None, :]
    response = (
        t ** (eff["n"][0] - 1)
        * np.exp(-2 * np.pi * eff["b"][0] * eff["erb_hz"][:, None] * t)
        * np.cos(2 * np.pi * eff["f_hz"][:, None] * t + eff["c"][0] * np.log(t))
    )
    return np.maximum(np.abs(response).max(axis=1), 1e-30)


def gammachirp_impulse(
    params: GammachirpParams, k: int, sample_rate: int, normalize: bool = True
) -> Tensor:
    """
    Impulse response of channel k (1-based), differentiable in every field.

    Raises:
        ValueError: If k is outside 1..K
    """
    if not 1 <= k <= params.n_channels:
        raise ValueError(f"channel must be in 1..{params.n_channels}, got {k}")
    return ad.getitem(gammachirp_kernels(params, sample_rate, normalize), k - 1)


def gammatone_impulse(
    center_freq: float,
    erb_hz: float,
    sample_rate: int,
    kernel_length: int = DEFAULT_KERNEL_LENGTH,
    order: float = 4.0,
    bandwidth: float = 1.019,
    gain: float = 1.0,
) -> np.ndarray:
    """Gammatone g(t) = gain·t^(n-1)·exp(-2πb·ERB·t)·cos(2πft), t = (i+1)/f_s."""
    t = _time_axis(kernel_length, sample_rate)
    return (
        gain
        * t ** (order - 1)
        * np.exp(-2 * np.pi * bandwidth * erb_hz * t)
        * np.cos(2 * np.pi * center_freq * t)
    )


def impulse_envelope(
    order: float, bandwidth: float, erb_hz: float, sample_rate: int, kernel_length: int
) -> np.ndarray:
    """Gamma envelope t^(n-1)·exp(-2πb·ERB·t); it peaks at (n-1)/(2πb·ERB)."""
    t = _time_axis(kernel_length, sample_rate)
    return t ** (order - 1) * np.exp(-2 * np.pi * bandwidth * erb_hz * t)


def cochleagram(filtered: Tensor, cfg: FramingConfig, mode: CochleagramMode) -> Tensor:
    """
    Frame energies of filtered signals.

    Args:
        filtered: (B, K, L) subband signals
        cfg (FramingConfig): Frame geometry
        mode (str): "parseval_rect" gives M·Σ x², "parseval_hann" weights the
                    squares by the squared Hann window, "maxpool" gives
                    M·max|x|²

    Returns:
        Tensor: (B, T, K) energies
    """
    m = cfg.frame_length
    if mode == "parseval_rect":
        energy = ad.frame_sum(ad.square(filtered), m, cfg.hop)
    elif mode == "parseval_hann":
        weights = window_function("hann", m) ** 2
        energy = ad.frame_sum(ad.square(filtered), m, cfg.hop, weights=weights)
    elif mode == "maxpool":
        energy = ad.square(ad.frame_max(ad.tabs(filtered), m, cfg.hop))
    else:
        raise ValueError(f"Unknown cochleagram mode: {mode}; expected one of {COCHLEAGRAM_MODES}")
    return ad.transpose(energy * float(m), (0, 2, 1))


def fbmatrix_forward(
    spec: Union[PowerSpectrogram, np.ndarray],
    fb: FilterbankMatrix,
    channel_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Pre-normalization features log(max(P · relu(W), eta)).

    Args:
        spec: (B, T, F) power spectrogram
        fb (FilterbankMatrix): Trainable filterbank
        channel_mask (np.ndarray, optional): K zeros/ones, zero removes a column

    Returns:
        Tensor: (B, T, K)

    Raises:
        ShapeError: If F does not match the filterbank
    """
    values = spec.values if isinstance(spec, PowerSpectrogram) else np.asarray(spec)
    if values.shape[-1] != fb.n_bins:
        raise ShapeError(
            f"spectrogram shape {values.shape} does not match filterbank {fb.weights.shape}"
        )
    weights = ad.relu(fb.weights)
    if channel_mask is not None:
        weights = weights * channel_mask
    return ad.log(ad.maximum(ad.matmul(Tensor(values), weights), fb.eta))


def gc_forward(
    signals: SignalBatch,
    params: GammachirpParams,
    cfg: FramingConfig,
    mode: CochleagramMode = "parseval_rect",
    eta: float = ETA,
    normalize: bool = True,
    peak: Optional[np.ndarray] = None,
    channel_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Pre-normalization gammachirp features log(max(cochleagram, eta)).

    Each signal is convolved with every kernel in "same" alignment, so the
    filtered signals keep the input length and the frame count matches the
    spectrogram path.

    Returns:
        Tensor: (B, T, K)
    """
    if mode not in COCHLEAGRAM_MODES:
        raise ValueError(f"Unknown cochleagram mode: {mode}; expected one of {COCHLEAGRAM_MODES}")
    batch = as_signal_batch(signals)
    kernels = gammachirp_kernels(params, cfg.sample_rate, normalize, peak)
    if channel_mask is not None:
        kernels = kernels * np.asarray(channel_mask).reshape(-1, 1)
    filtered = ad.conv1d(Tensor(batch), kernels, mode="same")
    return ad.log(ad.maximum(cochleagram(filtered, cfg, mode), eta))


def apply_feature_norm(
    pre: Tensor, bn_state: BatchNormState, mode: Literal["train", "eval"]
) -> Tensor:
    """Per-channel batch normalization over batch and time, no affine part."""
    if mode not in ("train", "eval"):
        raise ValueError(f"Unknown feature norm mode: {mode}")
    return ad.batchnorm(pre, bn_state, training=mode == "train")


class Frontend(ABC):
    """
    Shared behaviour of the learnable front-ends.

    Subclasses produce pre-normalization (B, T, K) features; this class adds
    feature normalization, the channel mask used for filter removal and the
    state export used by checkpoints.
    """

    def __init__(self, n_channels: int, norm_momentum: float = 0.99, norm_eps: float = 1e-5):
        self.norm_state = BatchNormState(n_channels, momentum=norm_momentum, eps=norm_eps)
        self.channel_mask: Optional[np.ndarray] = None
        self.trainable = True

    @property
    def n_channels(self) -> int:
        return self.norm_state.n_channels

    @property
    def n_feature_maps(self) -> int:
        return 1

    @property
    def output_channels(self) -> int:
        """Size of the channel (frequency) axis of the output."""
        return self.n_channels

    @abstractmethod
    def pre_features(self, signals: SignalBatch) -> Tensor:
        """(B, T, K) log energies before normalization."""

    @abstractmethod
    def parameters(self) -> Dict[str, Tensor]:
        """Trainable tensors by name."""

    def forward(self, signals: SignalBatch, training: bool) -> Tensor:
        """(B, T, K, 1) normalized features."""
        pre = self.pre_features(signals)
        normed = apply_feature_norm(pre, self.norm_state, "train" if training else "eval")
        return ad.reshape(normed, normed.shape + (1,))

    def set_trainable(self, trainable: bool) -> None:
        self.trainable = trainable
        for tensor in self.parameters().values():
            tensor.requires_grad = trainable

    def set_channel_mask(self, mask: Optional[np.ndarray]) -> None:
        """Zero out filterbank channels where mask is 0; None restores all."""
        if mask is not None:
            mask = np.asarray(mask, dtype=np.float64)
            if mask.shape != (self.n_channels,):
                raise ShapeError(f"channel mask shape {mask.shape} != ({self.n_channels},)")
        self.channel_mask = mask

    def buffers(self) -> Dict[str, np.ndarray]:
        """Non-trainable state: the feature-normalization running statistics."""
        return {f"norm.{name}": values for name, values in self.norm_state.buffers().items()}

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: tensor.data for name, tensor in self.parameters().items()}
        state.update(self.buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, tensor in self.parameters().items():
            if name not in state:
                raise KeyError(f"missing frontend tensor {name}")
            values = np.asarray(state[name])
            if values.shape != tensor.shape:
                raise ShapeError(f"{name}: stored {values.shape}, expected {tensor.shape}")
            tensor.data = values.astype(tensor.data.dtype)
        self.norm_state.load_buffers(
            {key: state[f"norm.{key}"] for key in ("running_mean", "running_var", "initialized")}
        )

    def summary(self) -> Dict[str, Any]:
        return {
            "kind": type(self).__name__,
            "n_channels": self.n_channels,
            "n_parameters": int(sum(t.size for t in self.parameters().values())),
            "trainable": self.trainable,
            "removed_channels": (
                [] if self.channel_mask is None
                else [int(k) + 1 for k in np.flatnonzero(self.channel_mask == 0)]
            ),
        }


class FilterbankMatrixFrontend(Frontend):
    """Power spectrogram times a trainable F×K matrix."""

    def __init__(
        self,
        initial_weights: np.ndarray,
        cfg: FramingConfig,
        window: WindowName = "hann",
        eta: float = ETA,
        norm_momentum: float = 0.99,
        norm_eps: float = 1e-5,
    ):
        initial_weights = np.asarray(initial_weights)
        if initial_weights.shape[0] != cfg.n_bins:
            raise ShapeError(
                f"filterbank has {initial_weights.shape[0]} rows, framing gives {cfg.n_bins} bins"
            )
        super().__init__(initial_weights.shape[1], norm_momentum, norm_eps)
        self.cfg = cfg
        self.window = window
        self.fb = FilterbankMatrix(
            weights=Tensor(initial_weights, requires_grad=True, name="W"), eta=eta
        )

    def parameters(self) -> Dict[str, Tensor]:
        return {"W": self.fb.weights}

    def pre_features(self, signals: SignalBatch) -> Tensor:
        spec = power_spectrogram(as_signal_batch(signals), self.cfg, self.window)
        return fbmatrix_forward(spec, self.fb, self.channel_mask)


class GammachirpFrontend(Frontend):
    """Time-domain gammachirp filterbank with a Parseval cochleagram."""

    def __init__(
        self,
        params: GammachirpParams,
        cfg: FramingConfig,
        mode: CochleagramMode = "parseval_rect",
        eta: float = ETA,
        normalize_impulse: bool = True,
        normalize_each_forward: bool = True,
        norm_momentum: float = 0.99,
        norm_eps: float = 1e-5,
    ):
        if mode not in COCHLEAGRAM_MODES:
            raise ValueError(f"Unknown cochleagram mode: {mode}")
        super().__init__(params.n_channels, norm_momentum, norm_eps)
        self.params = params
        self.cfg = cfg
        self.mode = mode
        self.eta = eta
        self.normalize_impulse = normalize_impulse
        self.frozen_peak: Optional[np.ndarray] = None
        if normalize_impulse and not normalize_each_forward:
            self.frozen_peak = kernel_peaks(params, cfg.sample_rate)

    def parameters(self) -> Dict[str, Tensor]:
        return self.params.tensors()

    def set_trainable(self, trainable: bool) -> None:
        self.trainable = trainable
        self.params.set_trainable(trainable)

    def kernels(self) -> np.ndarray:
        return gammachirp_kernels(
            self.params, self.cfg.sample_rate, self.normalize_impulse, self.frozen_peak
        ).data

    def pre_features(self, signals: SignalBatch) -> Tensor:
        return gc_forward(
            signals,
            self.params,
            self.cfg,
            self.mode,
            self.eta,
            self.normalize_impulse,
            self.frozen_peak,
            self.channel_mask,
        )

    def summary(self) -> Dict[str, Any]:
        summary = super().summary()
        eff = self.params.effective(self.cfg.sample_rate)
        summary.update(
            mode=self.mode,
            n=float(eff["n"][0]),
            b=float(eff["b"][0]),
            c=float(eff["c"][0]),
            chirp_trainable=self.params.chirp_trainable,
        )
        return summary


class FusedFrontend(Frontend):
    """
    Two front-ends combined into one feature tensor.

    "stack" places the two (T, K) maps in separate input channels
    (B, T, K, 2); "concat" joins them along the filterbank axis (B, T, 2K, 1).
    Each member keeps its own feature normalization and trainability.
    """

    def __init__(self, first: Frontend, second: Frontend, mode: FusionMode = "stack"):
        if mode not in ("stack", "concat"):
            raise ValueError(f"Unknown fusion mode: {mode}")
        if mode == "stack" and first.n_channels != second.n_channels:
            raise ShapeError(
                f"stacked fusion needs equal K, got {first.n_channels} and {second.n_channels}"
            )
        self.members: List[Frontend] = [first, second]
        self.mode = mode
        self.channel_mask = None
        self.trainable = first.trainable or second.trainable

    @property
    def n_channels(self) -> int:
        return self.members[0].n_channels

    @property
    def n_feature_maps(self) -> int:
        return 2 if self.mode == "stack" else 1

    @property
    def output_channels(self) -> int:
        return sum(m.n_channels for m in self.members) if self.mode == "concat" else self.n_channels

    def pre_features(self, signals: SignalBatch) -> Tensor:
        """Members' unnormalized features: (B, T, K, 2) stacked, (B, T, K1 + K2) joined."""
        batch = as_signal_batch(signals)
        first, second = (m.pre_features(batch) for m in self.members)
        if self.mode == "concat":
            return self._join(first, second, axis=2)
        return self._join(
            ad.reshape(first, first.shape + (1,)), ad.reshape(second, second.shape + (1,)), axis=3
        )

    def parameters(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for prefix, member in zip(("a", "b"), self.members):
            out.update({f"{prefix}.{name}": t for name, t in member.parameters().items()})
        return out

    def forward(self, signals: SignalBatch, training: bool) -> Tensor:
        batch = as_signal_batch(signals)
        first, second = (m.forward(batch, training) for m in self.members)
        return self._join(first, second, axis=3 if self.mode == "stack" else 2)

    @staticmethod
    def _join(first: Tensor, second: Tensor, axis: int) -> Tensor:
        if first.shape[1] != second.shape[1]:
            raise ShapeError(
                f"fused front-ends disagree on frame count: {first.shape} and {second.shape}"
            )
        return ad.concat([first, second], axis=axis)

    def set_trainable(self, trainable: bool) -> None:
        for member in self.members:
            member.set_trainable(trainable)
        self.trainable = trainable

    def set_member_trainable(self, index: int, trainable: bool) -> None:
        self.members[index].set_trainable(trainable)
        self.trainable = any(m.trainable for m in self.members)

    def set_channel_mask(self, mask: Optional[np.ndarray]) -> None:
        for member in self.members:
            member.set_channel_mask(mask)

    def buffers(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for prefix, member in zip(("a", "b"), self.members):
            out.update({f"{prefix}.{k}": v for k, v in member.buffers().items()})
        return out

    def state_dict(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for prefix, member in zip(("a", "b"), self.members):
            out.update({f"{prefix}.{k}": v for k, v in member.state_dict().items()})
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for prefix, member in zip(("a", "b"), self.members):
            member.load_state_dict(
                {k[len(prefix) + 1 :]: v for k, v in state.items() if k.startswith(prefix + ".")}
            )

    def summary(self) -> Dict[str, Any]:
        return {
            "kind": "FusedFrontend",
            "mode": self.mode,
            "members": [m.summary() for m in self.members],
        }


def export_filterbank_csv(frontend: FilterbankMatrixFrontend, path: Path) -> Path:
    """Effective filterbank relu(W), one column per channel."""
    return save_filterbank_csv(frontend.fb.effective(), path)


def export_gammachirp_csv(params: GammachirpParams, sample_rate: int, path: Path) -> Path:
    """One row per channel: gain, center frequency, ERB, and the shared n, b, c."""
    eff = params.effective(sample_rate)
    rows = [
        [
            k + 1,
            float(eff["a"][k]),
            float(eff["f_hz"][k]),
            float(eff["erb_hz"][k]),
            float(eff["n"][0]),
            float(eff["b"][0]),
            float(eff["c"][0]),
        ]
        for k in range(params.n_channels)
    ]
    return write_csv(Path(path), ["channel", "a", "f_hz", "erb_hz", "n", "b", "c"], rows)


def export_kernels_csv(frontend: GammachirpFrontend, path: Path) -> Path:
    """Impulse responses, one column per channel and one row per sample."""
    return write_matrix_csv(Path(path), frontend.kernels().T.astype(np.float64))
