from pathlib import Path
from typing import Callable, List

import numpy as np
import pytest
import soundfile as sf

from fbkws.data import (
    AudioClip,
    AugmentConfig,
    LabelMap,
    SubsetSpec,
    apply_subset,
    augment,
    class_histogram,
    export_split_manifest,
    import_split_manifest,
    load_dataset,
    load_noise_pool,
    mix_noise,
    shift_samples,
    speaker_id_from_filename,
    split_by_speaker,
)
from fbkws.exceptions import ClipError, DatasetError, SplitError


def test_default_label_map_has_eleven_classes() -> None:
    label_map = LabelMap.default()
    assert label_map.n_classes == 11
    assert label_map.label_of("yes") == 0
    assert label_map.label_of("go") == 9
    assert label_map.label_of("marvin") == 10
    assert label_map.label_of("silence") is None
    assert label_map.class_names[-1] == "_filler_"


def test_subset_label_map() -> None:
    label_map = LabelMap.default().subset(3)
    assert label_map.keywords == ("yes", "no", "up")
    assert label_map.n_classes == 4
    assert label_map.label_of("bed") == 3
    assert LabelMap.default().subset(3, filler=False).n_classes == 3
    with pytest.raises(ValueError):
        LabelMap.default().subset(0)


def test_subset_spec_parse() -> None:
    spec = SubsetSpec.parse("3kw+filler,cap=200/class")
    assert spec == SubsetSpec(n_keywords=3, filler=True, cap_per_class=200)
    assert SubsetSpec.parse("2kw").cap_per_class is None
    assert not SubsetSpec.parse("2kw").filler
    with pytest.raises(ValueError):
        SubsetSpec.parse("three keywords")


def test_audio_clip_rejects_wrong_length() -> None:
    with pytest.raises(ClipError):
        AudioClip(samples=np.zeros(15999), sample_rate=16000, label=0, speaker_id="a")


@pytest.mark.parametrize("bad", [1.0001, -1.5, np.nan, np.inf])
def test_audio_clip_rejects_out_of_range_samples(bad: float) -> None:
    # Setup
    samples = np.zeros(16000)
    samples[123] = bad

    # Execute / Assert
    with pytest.raises(ClipError, match=r"\[-1, 1\]"):
        AudioClip(samples=samples, sample_rate=16000, label=0, speaker_id="a")


def test_audio_clip_accepts_full_scale() -> None:
    samples = np.where(np.arange(16000) % 2 == 0, 1.0, -1.0)
    clip = AudioClip(samples=samples, sample_rate=16000, label=0, speaker_id="a")
    assert np.abs(clip.samples).max() == 1.0


def test_audio_clip_samples_are_read_only(make_clip: Callable[..., AudioClip]) -> None:
    clip = make_clip()
    with pytest.raises(ValueError):
        clip.samples[0] = 1.0


def test_speaker_id_from_filename() -> None:
    assert speaker_id_from_filename("yes/abc_nohash_0.wav") == "abc"
    assert speaker_id_from_filename("0a7c2a8d_nohash_1.wav") == "0a7c2a8d"


def test_load_single_file_layout(tmp_path: Path) -> None:
    root = tmp_path / "one"
    (root / "yes").mkdir(parents=True)
    sf.write(str(root / "yes" / "abc_nohash_0.wav"), np.zeros(16000), 16000)

    loaded = load_dataset(root, LabelMap.default())

    assert len(loaded) == 1
    clip = loaded.clips[0]
    assert clip.label == 0
    assert clip.speaker_id == "abc"
    assert clip.path == "yes/abc_nohash_0.wav"


def test_load_dataset_pads_short_and_reports_unreadable(wav_corpus: Path) -> None:
    # Execute
    loaded = load_dataset(wav_corpus, LabelMap.default().subset(3))

    # Assert
    assert len(loaded) == 6 * 4 + 1
    assert [e.path for e in loaded.errors] == ["no/broken00_nohash_0.wav"]
    short = next(c for c in loaded.clips if c.speaker_id == "short00")
    assert len(short.samples) == 16000
    assert np.all(short.samples[8000:] == 0.0)
    assert [c.path for c in loaded.clips] == sorted(c.path for c in loaded.clips)


def test_load_dataset_reports_out_of_range_float_wav(wav_corpus: Path) -> None:
    # Setup
    hot = np.full(16000, 0.2)
    hot[500] = 1.5
    sf.write(str(wav_corpus / "up" / "hot00_nohash_0.wav"), hot, 16000, subtype="FLOAT")

    # Execute
    loaded = load_dataset(wav_corpus, LabelMap.default().subset(3))

    # Assert
    assert "up/hot00_nohash_0.wav" in [e.path for e in loaded.errors]
    error = next(e for e in loaded.errors if e.path == "up/hot00_nohash_0.wav")
    assert "[-1, 1]" in error.reason
    assert all(c.speaker_id != "hot00" for c in loaded.clips)


def test_load_dataset_order_independent_of_workers(wav_corpus: Path) -> None:
    serial = load_dataset(wav_corpus, LabelMap.default().subset(3), workers=1)
    threaded = load_dataset(wav_corpus, LabelMap.default().subset(3), workers=4)
    assert [c.path for c in serial.clips] == [c.path for c in threaded.clips]


def test_load_dataset_missing_root(tmp_path: Path) -> None:
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing", LabelMap.default())


def test_load_noise_pool(wav_corpus: Path, tmp_path: Path) -> None:
    pool = load_noise_pool(wav_corpus)
    assert len(pool) == 1
    assert len(pool[0]) == 32000
    assert load_noise_pool(tmp_path) == []


def test_split_ten_speakers_exact(make_clip: Callable[..., AudioClip]) -> None:
    clips = [make_clip(0, f"spk{i}", seed=i) for i in range(10)]

    split = split_by_speaker(clips, (0.8, 0.1, 0.1), seed=0)

    assert (len(split.train), len(split.validation), len(split.test)) == (8, 1, 1)


def test_split_is_speaker_disjoint_and_complete(toy_clips: List[AudioClip]) -> None:
    split = split_by_speaker(toy_clips, seed=3)

    names = ("train", "validation", "test")
    speakers = [{c.speaker_id for c in split.part(name)} for name in names]
    assert not speakers[0] & speakers[1]
    assert not speakers[0] & speakers[2]
    assert not speakers[1] & speakers[2]
    assert sum(len(split.part(n)) for n in ("train", "validation", "test")) == len(toy_clips)
    assert sum(split.realized_fractions()) == pytest.approx(1.0)


def test_split_is_deterministic(toy_clips: List[AudioClip]) -> None:
    a = split_by_speaker(toy_clips, seed=7)
    b = split_by_speaker(toy_clips, seed=7)
    assert [c.path for c in a.test] == [c.path for c in b.test]


def test_split_errors(make_clip: Callable[..., AudioClip]) -> None:
    clips = [make_clip(0, "only", seed=i) for i in range(5)]
    with pytest.raises(SplitError):
        split_by_speaker(clips)
    with pytest.raises(SplitError):
        split_by_speaker(clips, (0.5, 0.5, 0.5))


def test_split_manifest_round_trip(toy_clips: List[AudioClip], tmp_path: Path) -> None:
    split = split_by_speaker(toy_clips, seed=1)
    path = export_split_manifest(split, tmp_path / "split.tsv")

    restored = import_split_manifest(path, toy_clips)

    assert [c.path for c in restored.train] == [c.path for c in split.train]
    assert [c.path for c in restored.test] == [c.path for c in split.test]
    first = path.read_text().splitlines()[0]
    assert first.endswith("\ttrain")


def test_split_manifest_rejects_unknown_split(
    toy_clips: List[AudioClip], tmp_path: Path
) -> None:
    path = tmp_path / "bad.tsv"
    path.write_text(f"{toy_clips[0].path}\tholdout\n")
    with pytest.raises(SplitError):
        import_split_manifest(path, toy_clips)


def test_apply_subset_caps_each_class(toy_clips: List[AudioClip]) -> None:
    capped = apply_subset(toy_clips, SubsetSpec(3, True, 5), seed=0)
    assert class_histogram(capped, 3).tolist() == [5, 5, 5]
    again = apply_subset(toy_clips, SubsetSpec(3, True, 5), seed=0)
    assert [c.path for c in again] == [c.path for c in capped]
    assert len(apply_subset(toy_clips, SubsetSpec(3), seed=0)) == len(toy_clips)


def test_shift_positive_zero_fills_start() -> None:
    shifted = shift_samples(np.ones(16000), 1600)
    assert np.all(shifted[:1600] == 0.0)
    assert np.all(shifted[1600:] == 1.0)
    advanced = shift_samples(np.ones(10), -3)
    assert advanced.tolist() == [1.0] * 7 + [0.0] * 3


def test_mix_noise_clips_to_unit_range() -> None:
    mixed = mix_noise(np.full(4, 0.95), np.ones(4), 0.1)
    assert np.all(mixed == 1.0)


def test_augment_keeps_length_and_label(
    make_clip: Callable[..., AudioClip], rng: np.random.Generator
) -> None:
    clip = make_clip(label=2)
    noise = [0.1 * rng.standard_normal(40000)]
    for _ in range(5):
        out = augment(clip, noise, rng)
        assert len(out.samples) == len(clip.samples)
        assert out.label == clip.label
        assert np.max(np.abs(out.samples)) <= 1.0


def test_augment_disabled_is_identity(
    make_clip: Callable[..., AudioClip], rng: np.random.Generator
) -> None:
    clip = make_clip()
    assert augment(clip, [], rng, AugmentConfig(enabled=False)) is clip
