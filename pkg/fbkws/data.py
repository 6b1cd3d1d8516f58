"""
Dataset ingestion module.

Loads one-second keyword clips laid out one directory per word, maps words to
the 11-class keyword/filler problem, builds speaker-disjoint splits and
applies training-time augmentation.
"""

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import soundfile as sf

from .exceptions import ClipError, DatasetError, SplitError

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
CLIP_SECONDS = 1.0
NOISE_DIR = "_background_noise_"
SPLIT_NAMES = ("train", "validation", "test")

DEFAULT_KEYWORDS: Tuple[str, ...] = (
    "yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go",
)
DEFAULT_FILLER_WORDS: FrozenSet[str] = frozenset(
    {
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
        "nine", "bed", "bird", "cat", "dog", "happy", "house", "marvin",
        "sheila", "tree", "wow", "backward", "forward", "follow", "learn",
        "visual",
    }
)


@dataclass(frozen=True)
class AudioClip:
    """
    Fixed-length mono waveform with its label.

    Attributes:
        samples (np.ndarray): Exactly sample_rate × 1 s values in [-1, 1]
        sample_rate (int): Hz
        label (int): Class index
        speaker_id (str): Opaque speaker hash
        path (str): Path relative to the corpus root, empty for synthetic clips
    """

    samples: np.ndarray
    sample_rate: int
    label: int
    speaker_id: str
    path: str = ""

    def __post_init__(self) -> None:
        expected = int(round(self.sample_rate * CLIP_SECONDS))
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1 or len(samples) != expected:
            raise ClipError(
                f"clip must hold {expected} mono samples, got shape {samples.shape}"
            )
        if not np.all(np.isfinite(samples)) or np.abs(samples).max() > 1.0:
            raise ClipError(
                f"clip samples must be finite and within [-1, 1], peak {np.abs(samples).max():.4g}"
            )
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class LabelMap:
    """
    Keyword and filler vocabulary.

    The filler class index equals the number of keywords (10 for the default
    map, so 11 classes in total).
    """

    keywords: Tuple[str, ...] = DEFAULT_KEYWORDS
    filler_words: FrozenSet[str] = DEFAULT_FILLER_WORDS

    @classmethod
    def default(cls) -> "LabelMap":
        return cls()

    def subset(self, n_keywords: int, filler: bool = True) -> "LabelMap":
        """First n keywords, optionally keeping the filler class."""
        if not 1 <= n_keywords <= len(self.keywords):
            raise ValueError(f"n_keywords must be in 1..{len(self.keywords)}")
        return LabelMap(
            keywords=self.keywords[:n_keywords],
            filler_words=self.filler_words if filler else frozenset(),
        )

    @property
    def filler_index(self) -> int:
        return len(self.keywords)

    @property
    def has_filler(self) -> bool:
        return bool(self.filler_words)

    @property
    def n_classes(self) -> int:
        return len(self.keywords) + (1 if self.has_filler else 0)

    @property
    def class_names(self) -> List[str]:
        names = list(self.keywords)
        if self.has_filler:
            names.append("_filler_")
        return names

    def label_of(self, word: str) -> Optional[int]:
        """Class index of a word, or None when the word is not in the map."""
        if word in self.keywords:
            return self.keywords.index(word)
        if word in self.filler_words:
            return self.filler_index
        return None


@dataclass(frozen=True)
class ClipLoadError:
    """A file that could not be loaded."""

    path: str
    reason: str


@dataclass(frozen=True)
class LoadedDataset:
    """Clips read from a corpus root plus the per-file failures."""

    clips: Tuple[AudioClip, ...]
    errors: Tuple[ClipLoadError, ...] = ()

    def __len__(self) -> int:
        return len(self.clips)

    def __iter__(self) -> Iterator[AudioClip]:
        return iter(self.clips)


@dataclass(frozen=True)
class DatasetSplit:
    """Speaker-disjoint train/validation/test partition."""

    train: Tuple[AudioClip, ...]
    validation: Tuple[AudioClip, ...]
    test: Tuple[AudioClip, ...]
    split_fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    def part(self, name: str) -> Tuple[AudioClip, ...]:
        if name not in SPLIT_NAMES:
            raise ValueError(f"Unknown split: {name}")
        return tuple(getattr(self, name))

    def realized_fractions(self) -> Tuple[float, float, float]:
        total = len(self.train) + len(self.validation) + len(self.test)
        return (
            len(self.train) / total,
            len(self.validation) / total,
            len(self.test) / total,
        )


@dataclass(frozen=True)
class AugmentConfig:
    """
    Time shift plus background-noise mixing.

    Attributes:
        enabled (bool): Identity transform when False
        shift_ms (float): Maximum absolute shift
        noise_prob (float): Probability of mixing a noise segment
        noise_max_gain (float): Noise amplitude factor drawn from U[0, max]
    """

    enabled: bool = True
    shift_ms: float = 100.0
    noise_prob: float = 0.8
    noise_max_gain: float = 0.1


@dataclass(frozen=True)
class SubsetSpec:
    """Desk-scale restriction, e.g. "3kw+filler,cap=200/class"."""

    n_keywords: int
    filler: bool = True
    cap_per_class: Optional[int] = None

    _PATTERN = re.compile(r"^\s*(\d+)kw(\+filler)?\s*(?:,\s*cap=(\d+)(?:/class)?)?\s*$")

    @classmethod
    def parse(cls, text: str) -> "SubsetSpec":
        match = cls._PATTERN.match(text)
        if not match:
            raise ValueError(
                f"Invalid subset spec {text!r}; expected e.g. '3kw+filler,cap=200/class'"
            )
        cap = int(match.group(3)) if match.group(3) else None
        return cls(n_keywords=int(match.group(1)), filler=bool(match.group(2)), cap_per_class=cap)

    def label_map(self, base: Optional[LabelMap] = None) -> LabelMap:
        return (base or LabelMap.default()).subset(self.n_keywords, self.filler)


def speaker_id_from_filename(filename: str) -> str:
    """Speaker hash: the part of the file name before the first underscore."""
    return Path(filename).name.split("_", 1)[0]


def _read_wav(path: Path, sample_rate: int) -> np.ndarray:
    info = sf.info(str(path))
    if info.samplerate != sample_rate:
        raise ClipError(f"sample rate {info.samplerate} Hz, expected {sample_rate} Hz")
    if info.channels != 1:
        raise ClipError(f"{info.channels} channels, expected mono")
    samples, _ = sf.read(str(path), dtype="float64", always_2d=False)
    return np.asarray(samples, dtype=np.float64)


def _fit_length(samples: np.ndarray, length: int) -> np.ndarray:
    if len(samples) > length:
        raise ClipError(f"{len(samples)} samples, longer than {length}")
    if len(samples) < length:
        samples = np.pad(samples, (0, length - len(samples)))
    return samples


def _load_one(
    root: Path, path: Path, label: int, sample_rate: int
) -> Tuple[Optional[AudioClip], Optional[ClipLoadError]]:
    relative = path.relative_to(root).as_posix()
    try:
        samples = _fit_length(_read_wav(path, sample_rate), int(sample_rate * CLIP_SECONDS))
        clip = AudioClip(
            samples=samples,
            sample_rate=sample_rate,
            label=label,
            speaker_id=speaker_id_from_filename(path.name),
            path=relative,
        )
        return clip, None
    except (ClipError, RuntimeError, ValueError) as e:
        logger.warning(f"Skipping {relative}: {str(e)}")
        return None, ClipLoadError(path=relative, reason=str(e))


def load_dataset(
    root: Path,
    label_map: LabelMap,
    sample_rate: int = SAMPLE_RATE,
    workers: int = 1,
) -> LoadedDataset:
    """
    Load every WAV file under one-directory-per-word layout.

    Args:
        root (Path): Corpus root
        label_map (LabelMap): Word to class mapping; words outside it are ignored
        sample_rate (int): Required sample rate
        workers (int): Reader threads; output order does not depend on it

    Returns:
        LoadedDataset: Clips ordered by relative path and per-file errors

    Raises:
        DatasetError: If root does not exist
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"Dataset root not found: {root}")

    try:
        jobs: List[Tuple[Path, int]] = []
        for word_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            if word_dir.name == NOISE_DIR:
                continue
            label = label_map.label_of(word_dir.name)
            if label is None:
                continue
            jobs.extend((wav, label) for wav in sorted(word_dir.glob("*.wav")))

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(
                    pool.map(lambda job: _load_one(root, job[0], job[1], sample_rate), jobs)
                )
        else:
            results = [_load_one(root, wav, label, sample_rate) for wav, label in jobs]

        clips = tuple(clip for clip, _ in results if clip is not None)
        errors = tuple(err for _, err in results if err is not None)
        logger.info(f"Loaded {len(clips)} clips from {root} ({len(errors)} unreadable)")
        return LoadedDataset(clips=clips, errors=errors)
    except Exception as e:
        logger.error(f"Failed to load dataset from {root}: {str(e)}")
        raise


def load_noise_pool(root: Path, sample_rate: int = SAMPLE_RATE) -> List[np.ndarray]:
    """
    Read background noise recordings of any length.

    Args:
        root (Path): Corpus root containing _background_noise_/
        sample_rate (int): Required sample rate

    Returns:
        List[np.ndarray]: Noise waveforms at least one clip long
    """
    noise_dir = Path(root) / NOISE_DIR
    pool: List[np.ndarray] = []
    if not noise_dir.is_dir():
        logger.warning(f"No noise directory under {root}; noise mixing disabled")
        return pool
    min_length = int(sample_rate * CLIP_SECONDS)
    for wav in sorted(noise_dir.glob("*.wav")):
        try:
            samples = _read_wav(wav, sample_rate)
        except (ClipError, RuntimeError) as e:
            logger.warning(f"Skipping noise file {wav.name}: {str(e)}")
            continue
        if len(samples) >= min_length:
            pool.append(samples)
    return pool


def class_histogram(clips: Sequence[AudioClip], n_classes: int) -> np.ndarray:
    """Clip count per class."""
    return np.bincount([c.label for c in clips], minlength=n_classes)


def apply_subset(
    clips: Sequence[AudioClip], subset: SubsetSpec, seed: int
) -> List[AudioClip]:
    """
    Keep at most cap_per_class clips per class, chosen with a seeded shuffle.

    Labels must already follow subset.label_map().
    """
    if subset.cap_per_class is None:
        return list(clips)
    rng = np.random.default_rng(seed)
    by_class: Dict[int, List[AudioClip]] = {}
    for clip in clips:
        by_class.setdefault(clip.label, []).append(clip)
    kept: List[AudioClip] = []
    for label in sorted(by_class):
        members = by_class[label]
        order = rng.permutation(len(members))[: subset.cap_per_class]
        kept.extend(members[i] for i in sorted(order))
    return kept


def split_by_speaker(
    clips: Sequence[AudioClip],
    fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """
    Partition clips so no speaker appears in two splits.

    Speakers are shuffled with the seed and assigned in order: a speaker goes
    to the first split whose cumulative clip target has not been reached.

    Args:
        clips: Clips to partition
        fractions: Target train/validation/test fractions, summing to 1
        seed (int): Shuffle seed

    Returns:
        DatasetSplit: Deterministic for a fixed seed

    Raises:
        SplitError: If fractions do not sum to 1 or fewer than 3 speakers exist
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must be three values summing to 1, got {fractions}")

    by_speaker: Dict[str, List[AudioClip]] = {}
    for clip in clips:
        by_speaker.setdefault(clip.speaker_id, []).append(clip)
    speakers = sorted(by_speaker)
    if len(speakers) < 3:
        raise SplitError(f"need at least 3 speakers to split, got {len(speakers)}")

    order = np.random.default_rng(seed).permutation(len(speakers))
    shuffled = [speakers[i] for i in order]
    total = len(clips)
    bounds = (fractions[0] * total, (fractions[0] + fractions[1]) * total)

    assigned: List[List[str]] = [[], [], []]
    seen = 0
    for speaker in shuffled:
        if seen < bounds[0] - 1e-9:
            assigned[0].append(speaker)
        elif seen < bounds[1] - 1e-9:
            assigned[1].append(speaker)
        else:
            assigned[2].append(speaker)
        seen += len(by_speaker[speaker])

    # Every split needs at least one speaker: borrow from the largest one.
    for target in range(3):
        if not assigned[target]:
            donor = max(range(3), key=lambda i: len(assigned[i]))
            assigned[target].append(assigned[donor].pop())

    parts = [
        tuple(clip for speaker in sorted(group) for clip in by_speaker[speaker])
        for group in assigned
    ]
    return DatasetSplit(
        train=parts[0], validation=parts[1], test=parts[2], split_fractions=tuple(fractions)
    )


def export_split_manifest(split: DatasetSplit, path: Path) -> Path:
    """Write one `relative/path<TAB>split` line per clip."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for name in SPLIT_NAMES:
            for clip in split.part(name):
                f.write(f"{clip.path}\t{name}\n")
    return path


def import_split_manifest(path: Path, clips: Sequence[AudioClip]) -> DatasetSplit:
    """
    Rebuild a split from a manifest and the loaded clips.

    Raises:
        SplitError: On unknown split names or clips missing from the manifest
    """
    by_path = {clip.path: clip for clip in clips}
    parts: Dict[str, List[AudioClip]] = {name: [] for name in SPLIT_NAMES}
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            relative, _, name = line.partition("\t")
            if name not in parts:
                raise SplitError(f"{path}:{line_no}: unknown split {name!r}")
            if relative not in by_path:
                logger.warning(f"{path}:{line_no}: clip {relative} not loaded, skipped")
                continue
            parts[name].append(by_path[relative])
    listed = sum(len(v) for v in parts.values())
    if listed != len(by_path):
        raise SplitError(f"manifest covers {listed} of {len(by_path)} loaded clips")
    return DatasetSplit(
        train=tuple(parts["train"]),
        validation=tuple(parts["validation"]),
        test=tuple(parts["test"]),
    )


def shift_samples(samples: np.ndarray, shift: int) -> np.ndarray:
    """Delay (positive) or advance (negative) a signal with zero fill."""
    out = np.zeros_like(samples)
    if shift > 0:
        out[shift:] = samples[:-shift]
    elif shift < 0:
        out[:shift] = samples[-shift:]
    else:
        out[:] = samples
    return out


def mix_noise(samples: np.ndarray, noise: np.ndarray, gain: float) -> np.ndarray:
    """Add a scaled noise segment and clip the result to [-1, 1]."""
    return np.clip(samples + gain * noise, -1.0, 1.0)


def augment(
    clip: AudioClip,
    noise_pool: Sequence[np.ndarray],
    rng: np.random.Generator,
    config: Optional[AugmentConfig] = None,
) -> AudioClip:
    """
    Random time shift and, with probability noise_prob, background noise.

    Args:
        clip (AudioClip): Input clip
        noise_pool: Noise waveforms; noise mixing is skipped when empty
        rng (np.random.Generator): Per-call generator
        config (AugmentConfig, optional): Recipe, defaults when omitted

    Returns:
        AudioClip: Same length and label as the input
    """
    config = config or AugmentConfig()
    if not config.enabled:
        return clip

    max_shift = int(round(config.shift_ms * clip.sample_rate / 1000.0))
    shift = int(rng.integers(-max_shift, max_shift + 1)) if max_shift > 0 else 0
    samples = shift_samples(clip.samples, shift)

    if noise_pool and rng.random() < config.noise_prob:
        noise = noise_pool[int(rng.integers(len(noise_pool)))]
        start = int(rng.integers(0, len(noise) - len(samples) + 1))
        gain = float(rng.uniform(0.0, config.noise_max_gain))
        samples = mix_noise(samples, noise[start : start + len(samples)], gain)

    return replace(clip, samples=samples)
