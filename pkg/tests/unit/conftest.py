from pathlib import Path
from typing import Callable, Dict, List

import numpy as np
import pytest
import soundfile as sf

from fbkws.config import FbkwsConfig
from fbkws.data import AudioClip
from fbkws.dsp import FramingConfig

SAMPLE_RATE = 16000
TONES = {0: 500.0, 1: 1500.0, 2: 3000.0, 3: 5000.0}


def tone(freq: float, seed: int, amplitude: float = 0.3, noise: float = 0.01) -> np.ndarray:
    rng = np.random.default_rng(seed)
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    phase = rng.uniform(0, 2 * np.pi)
    return amplitude * np.sin(2 * np.pi * freq * t + phase) + noise * rng.standard_normal(
        SAMPLE_RATE
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def framing() -> FramingConfig:
    return FramingConfig()


@pytest.fixture
def make_clip() -> Callable[..., AudioClip]:
    def factory(label: int = 0, speaker: str = "spk0", seed: int = 0) -> AudioClip:
        return AudioClip(
            samples=tone(TONES[label % len(TONES)], seed),
            sample_rate=SAMPLE_RATE,
            label=label,
            speaker_id=speaker,
            path=f"w{label}/{speaker}_nohash_{seed}.wav",
        )

    return factory


@pytest.fixture
def toy_clips(make_clip: Callable[..., AudioClip]) -> List[AudioClip]:
    """Three tone classes, ten speakers, two clips each."""
    clips = []
    for speaker in range(10):
        for label in range(3):
            for take in range(2):
                clips.append(
                    make_clip(label, f"spk{speaker}", seed=100 * speaker + 10 * label + take)
                )
    return clips


def _write(path: Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), samples, sample_rate, subtype="PCM_16")


@pytest.fixture
def wav_corpus(tmp_path: Path) -> Path:
    """
    yes/no/up keywords plus the filler word "bed", six speakers, one take
    each, a background-noise file, one short file and one unreadable file.
    """
    root = tmp_path / "corpus"
    words: Dict[str, float] = {"yes": 500.0, "no": 1500.0, "up": 3000.0, "bed": 5000.0}
    for w_index, (word, freq) in enumerate(words.items()):
        for speaker in range(6):
            _write(
                root / word / f"s{speaker:02d}ab_nohash_0.wav",
                tone(freq, seed=10 * w_index + speaker),
            )
    _write(root / "yes" / "short00_nohash_0.wav", tone(500.0, seed=99)[:8000])
    (root / "no" / "broken00_nohash_0.wav").write_bytes(b"not a wav file")
    _write(
        root / "_background_noise_" / "white.wav",
        0.1 * np.random.default_rng(5).standard_normal(2 * SAMPLE_RATE),
    )
    return root


@pytest.fixture
def tiny_config() -> FbkwsConfig:
    """Fast settings for protocol tests: one epoch, small batches, short kernels."""
    return FbkwsConfig.from_dict(
        {
            "gammachirp": {"kernel_length": 256},
            "training": {"epochs": 1, "batch_size": 8},
            "augmentation": {"enabled": False},
            "data": {"workers": 1},
            "experiments": {"repetitions": 2, "workers": 1, "preset": "small"},
        }
    )
