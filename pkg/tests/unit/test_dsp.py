from pathlib import Path

import numpy as np
import pytest

from fbkws.dsp import (
    FramingConfig,
    center_frequencies,
    erb,
    frame_signal,
    hz_to_mel,
    load_filterbank_csv,
    log_mel,
    make_linear_filterbank,
    make_mel_filterbank,
    make_reference_filterbank,
    mel_to_hz,
    one_sided_weights,
    power_spectrogram,
    save_filterbank_csv,
    window_function,
)
from fbkws.exceptions import ShapeError


def test_default_framing_geometry(framing: FramingConfig) -> None:
    assert framing.n_bins == 241
    assert framing.n_frames(16000) == 98


def test_framing_rejects_bad_hop() -> None:
    with pytest.raises(ValueError):
        FramingConfig(frame_length=480, hop=0)
    with pytest.raises(ValueError):
        FramingConfig(frame_length=160, hop=480)


def test_signal_shorter_than_frame(framing: FramingConfig) -> None:
    with pytest.raises(ShapeError):
        power_spectrogram(np.zeros(100), framing)


def test_frame_signal_batch_shape(framing: FramingConfig, rng: np.random.Generator) -> None:
    frames = frame_signal(rng.standard_normal((2, 16000)), framing)
    assert frames.shape == (2, 98, 480)


def test_frames_start_at_hop_multiples(framing: FramingConfig) -> None:
    signal = np.arange(16000, dtype=np.float64)
    frames = frame_signal(signal, framing)
    assert frames[0, 0] == 0.0
    assert frames[1, 0] == 160.0
    assert frames[-1, -1] == 97 * 160 + 479


def test_zero_clip_gives_zero_spectrogram(framing: FramingConfig) -> None:
    spec = power_spectrogram(np.zeros(16000), framing)
    assert spec.values.shape == (98, 241)
    assert spec.n_frames == 98
    assert spec.n_bins == 241
    assert np.all(spec.values == 0.0)


def test_parseval_rectangular_window(framing: FramingConfig, rng: np.random.Generator) -> None:
    # Setup
    signal = rng.standard_normal(16000)

    # Execute
    spec = power_spectrogram(signal, framing, window="rectangular").values
    frames = frame_signal(signal, framing)

    # Assert
    spectral = (spec * one_sided_weights(framing.frame_length)).sum(axis=-1)
    temporal = framing.frame_length * (frames**2).sum(axis=-1)
    np.testing.assert_allclose(spectral, temporal, rtol=1e-10)


def test_hann_window_is_periodic() -> None:
    window = window_function("hann", 8)
    assert window[0] == 0.0
    assert window[4] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        window_function("kaiser", 8)  # type: ignore[arg-type]


def test_mel_scales() -> None:
    assert hz_to_mel(1000.0, "htk") == pytest.approx(1000.0, abs=0.1)
    assert hz_to_mel(1000.0, "slaney") == pytest.approx(15.0)
    freqs = np.array([0.0, 440.0, 1000.0, 4000.0, 8000.0])
    for scale in ("htk", "slaney"):
        np.testing.assert_allclose(mel_to_hz(hz_to_mel(freqs, scale), scale), freqs, atol=1e-9)


def test_erb_values() -> None:
    assert erb(0.0) == pytest.approx(24.7)
    assert erb(1000.0) == pytest.approx(132.7)
    assert erb(8000.0) == pytest.approx(888.7)


def test_slaney_center_frequencies_of_speech_band() -> None:
    centers = center_frequencies(40, 0.0, 8000.0, "mel", "slaney")
    assert centers[19] == pytest.approx(1626.0, abs=1.0)
    assert centers[25] == pytest.approx(2564.0, abs=1.0)
    assert np.all(np.diff(centers) > 0)


def test_linear_center_frequencies() -> None:
    centers = center_frequencies(3, 0.0, 8000.0, "linear")
    np.testing.assert_allclose(centers, [2000.0, 4000.0, 6000.0])


def test_mel_filterbank_shape_and_peaks() -> None:
    fb = make_mel_filterbank(241, 40, 16000)
    assert fb.weights.shape == (241, 40)
    assert fb.n_channels == 40
    assert fb.scale == "mel"
    assert np.all(fb.weights >= 0.0)
    np.testing.assert_allclose(fb.weights.max(axis=0), 1.0)
    assert np.all(np.diff(np.argmax(fb.weights, axis=0)) > 0)


def test_area_normalized_columns_sum_to_one() -> None:
    fb = make_linear_filterbank(241, 40, 16000, normalize="area")
    np.testing.assert_allclose(fb.weights.sum(axis=0), 1.0)


def test_filterbank_rejects_bad_band_and_collapse() -> None:
    with pytest.raises(ValueError):
        make_mel_filterbank(241, 40, 16000, f_min=5000.0, f_max=4000.0)
    with pytest.raises(ValueError):
        make_mel_filterbank(241, 40, 16000, f_max=9000.0)
    with pytest.raises(ValueError):
        make_mel_filterbank(241, 200, 16000)


def test_log_mel_of_silence_is_floor(framing: FramingConfig) -> None:
    fb = make_reference_filterbank("mel", framing, 40)
    features = log_mel(np.zeros(16000), fb, framing)
    assert features.shape == (98, 40)
    np.testing.assert_allclose(features, -50.0)


def test_log_mel_bin_mismatch(framing: FramingConfig) -> None:
    fb = make_mel_filterbank(129, 20, 16000)
    with pytest.raises(ShapeError):
        log_mel(np.zeros(16000), fb, framing)


def test_filterbank_csv_round_trip(tmp_path: Path) -> None:
    weights = make_linear_filterbank(241, 40, 16000).weights
    path = save_filterbank_csv(weights, tmp_path / "fb.csv")
    np.testing.assert_allclose(load_filterbank_csv(path), weights, rtol=1e-9)
    assert path.read_text().splitlines()[0].startswith("ch")
