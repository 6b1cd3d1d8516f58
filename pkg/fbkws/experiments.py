"""
Experiment protocol.

Named training regimes, repeated seeded trials with Student-t confidence
intervals, feature fusion, filter removal and report persistence.

Regime names:

    FxBy_z [+ FxBy_z ...]   filterbank-matrix front-end; x/y in {t, f} say
                            whether the front-end/back-end train, z epochs
    GC[x]_Iy-S[_z]          gammachirp front-end, trainable if x == t,
                            constant (y == c) or random (y == r) init of
                            n, b, c, Mel or Linear center-frequency spacing S
    GT[x]_Iy-S[_z]          gammatone variant, c fixed to 0

The back-end always trains in gammachirp regimes; their epoch count comes
from the training configuration unless a `_z` suffix is given.
"""

import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import yaml
from scipy import stats

from . import autodiff as ad
from .autodiff import GradCheckReport, default_dtype
from .backend import (
    N_CLASSES,
    EvaluationResult,
    TrainedSystem,
    TrainingStage,
    build_model,
    evaluate,
    train_stages,
    write_history_csv,
)
from .config import FbkwsConfig
from .data import (
    DatasetSplit,
    LabelMap,
    SubsetSpec,
    apply_subset,
    class_histogram,
    export_split_manifest,
    import_split_manifest,
    load_dataset,
    load_noise_pool,
    split_by_speaker,
)
from .dsp import FrequencyScale, center_frequencies, make_reference_filterbank
from .exceptions import ExperimentNameError, TrialError
from .frontends import (
    FilterbankMatrixFrontend,
    Frontend,
    FusedFrontend,
    FusionMode,
    GammachirpFrontend,
    ParamInit,
    export_filterbank_csv,
    export_gammachirp_csv,
    init_gammachirp,
)
from .utils import format_timestamp, spawn_rngs, write_csv, write_matrix_csv

logger = logging.getLogger(__name__)

FrontendKind = Literal["fbmatrix", "gammachirp", "gammatone"]
ReportKind = Literal["single", "fusion", "removal"]

CI_FORMULA = "t_{0.975, R-1} * s / sqrt(R)"
MODEL_SELECTION = "final-epoch parameters; validation accuracy is logged only"


@dataclass(frozen=True)
class StageSpec:
    """Trainability and length of one stage; epochs None means the configured default."""

    frontend_trainable: bool
    backend_trainable: bool
    epochs: Optional[int] = None


@dataclass(frozen=True)
class FrontendSpec:
    """
    Which front-end a regime uses.

    `scale` is None for the filterbank matrix, whose initialization comes
    from the configuration.
    """

    kind: FrontendKind
    param_init: ParamInit = "constant"
    scale: Optional[FrequencyScale] = None


@dataclass(frozen=True)
class ParsedName:
    frontend: FrontendSpec
    stages: Tuple[StageSpec, ...]

    @property
    def frontend_ever_trained(self) -> bool:
        return any(s.frontend_trainable for s in self.stages)


@dataclass(frozen=True)
class ExperimentSpec:
    """A parsed regime plus the protocol settings of its trials."""

    name: str
    parsed: ParsedName
    preset: str = "small"
    repetitions: int = 10
    base_seed: int = 0

    @classmethod
    def from_name(
        cls, name: str, preset: str = "small", repetitions: int = 10, base_seed: int = 0
    ) -> "ExperimentSpec":
        if repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {repetitions}")
        parsed = parse_experiment_name(name)
        return cls(format_experiment_name(parsed), parsed, preset, repetitions, base_seed)

    @property
    def seeds(self) -> List[int]:
        return list(range(self.base_seed, self.base_seed + self.repetitions))


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str) -> ExperimentNameError:
        return ExperimentNameError(message, self.text, self.pos)

    def skip_spaces(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self, literal: str) -> bool:
        return self.text.startswith(literal, self.pos)

    def expect(self, literal: str) -> None:
        if not self.peek(literal):
            raise self.error(f"expected {literal!r}")
        self.pos += len(literal)

    def choice(self, options: Sequence[str]) -> str:
        for option in sorted(options, key=len, reverse=True):
            if self.peek(option):
                self.pos += len(option)
                return option
        raise self.error(f"expected one of {list(options)}")

    def integer(self) -> int:
        match = re.match(r"\d+", self.text[self.pos :])
        if not match:
            raise self.error("expected an epoch count")
        value = int(match.group(0))
        if value < 1:
            raise self.error("epoch count must be positive")
        self.pos += len(match.group(0))
        return value


def parse_experiment_name(name: str) -> ParsedName:
    """
    Parse a regime name into a front-end choice and training stages.

    Args:
        name (str): e.g. "FfBt_26 + FtBf_10" or "GC[t]_Ic-Mel"

    Returns:
        ParsedName: Front-end and stage list

    Raises:
        ExperimentNameError: On malformed input, with the failing position
    """
    cursor = _Cursor(name)
    cursor.skip_spaces()
    if cursor.at_end():
        raise cursor.error("empty experiment name")

    if cursor.peek("GC") or cursor.peek("GT"):
        prefix = cursor.choice(["GC", "GT"])
        cursor.expect("[")
        trained = cursor.choice(["t", "f"]) == "t"
        cursor.expect("]")
        cursor.expect("_I")
        param_init: ParamInit = "constant" if cursor.choice(["c", "r"]) == "c" else "random"
        cursor.expect("-")
        scale: FrequencyScale = "mel" if cursor.choice(["Mel", "Linear"]) == "Mel" else "linear"
        epochs = None
        if cursor.peek("_"):
            cursor.expect("_")
            epochs = cursor.integer()
        cursor.skip_spaces()
        if not cursor.at_end():
            raise cursor.error("unexpected trailing text")
        kind: FrontendKind = "gammachirp" if prefix == "GC" else "gammatone"
        return ParsedName(
            frontend=FrontendSpec(kind=kind, param_init=param_init, scale=scale),
            stages=(StageSpec(trained, True, epochs),),
        )

    stages: List[StageSpec] = []
    while True:
        start = cursor.pos
        cursor.expect("F")
        frontend = cursor.choice(["t", "f"]) == "t"
        cursor.expect("B")
        backend = cursor.choice(["t", "f"]) == "t"
        cursor.expect("_")
        epochs = cursor.integer()
        if not (frontend or backend):
            raise ExperimentNameError("stage trains neither front-end nor back-end", name, start)
        stages.append(StageSpec(frontend, backend, epochs))
        cursor.skip_spaces()
        if cursor.at_end():
            break
        cursor.expect("+")
        cursor.skip_spaces()
    return ParsedName(frontend=FrontendSpec(kind="fbmatrix"), stages=tuple(stages))


def format_experiment_name(parsed: ParsedName) -> str:
    """Canonical text of a parsed name; parse(format(p)) == p."""
    flag = {True: "t", False: "f"}
    if parsed.frontend.kind == "fbmatrix":
        return " + ".join(
            f"F{flag[s.frontend_trainable]}B{flag[s.backend_trainable]}_{s.epochs}"
            for s in parsed.stages
        )
    stage = parsed.stages[0]
    prefix = "GC" if parsed.frontend.kind == "gammachirp" else "GT"
    init = "c" if parsed.frontend.param_init == "constant" else "r"
    scale = "Mel" if parsed.frontend.scale == "mel" else "Linear"
    suffix = f"_{stage.epochs}" if stage.epochs is not None else ""
    return f"{prefix}[{flag[stage.frontend_trainable]}]_I{init}-{scale}{suffix}"


def resolve_stages(parsed: ParsedName, default_epochs: int) -> List[TrainingStage]:
    return [
        TrainingStage(s.epochs or default_epochs, s.frontend_trainable, s.backend_trainable)
        for s in parsed.stages
    ]


def fused_stages(
    first: ParsedName, second: ParsedName, default_epochs: int
) -> List[TrainingStage]:
    """
    Merge two schedules stage by stage.

    Each member keeps its own front-end flag; the back-end trains when either
    schedule trains it.

    Raises:
        ValueError: If the schedules differ in stage count or epochs
    """
    a_stages = resolve_stages(first, default_epochs)
    b_stages = resolve_stages(second, default_epochs)
    if len(a_stages) != len(b_stages):
        raise ValueError(
            f"fused regimes need the same number of stages, got {len(a_stages)} and {len(b_stages)}"
        )
    merged = []
    for index, (a, b) in enumerate(zip(a_stages, b_stages), start=1):
        if a.epochs != b.epochs:
            raise ValueError(f"stage {index}: epoch counts differ ({a.epochs} vs {b.epochs})")
        merged.append(
            TrainingStage(
                a.epochs,
                (bool(a.frontend_trainable), bool(b.frontend_trainable)),
                a.backend_trainable or b.backend_trainable,
            )
        )
    return merged


@dataclass(frozen=True)
class ChannelRange:
    """
    1-based inclusive filterbank channel interval; (0, 0) is the empty range.
    """

    first: int = 0
    last: int = 0

    @classmethod
    def parse(cls, text: str) -> "ChannelRange":
        text = text.strip()
        if text.lower() in ("", "none"):
            return cls()
        match = re.fullmatch(r"(\d+)(?::(\d+))?", text)
        if not match:
            raise ValueError(f"Invalid channel range {text!r}; expected 'a:b' or 'none'")
        first = int(match.group(1))
        last = int(match.group(2) or first)
        if not 1 <= first <= last:
            raise ValueError(f"Invalid channel range {text!r}; need 1 <= a <= b")
        return cls(first, last)

    @property
    def is_empty(self) -> bool:
        return self.first == 0

    @property
    def label(self) -> str:
        return "none" if self.is_empty else f"{self.first}:{self.last}"

    def validate(self, n_channels: int) -> None:
        if not self.is_empty and not 1 <= self.first <= self.last <= n_channels:
            raise ValueError(f"channel range {self.label} outside 1..{n_channels}")

    def mask(self, n_channels: int) -> np.ndarray:
        self.validate(n_channels)
        mask = np.ones(n_channels)
        if not self.is_empty:
            mask[self.first - 1 : self.last] = 0.0
        return mask


def parse_ranges(text: str) -> List[ChannelRange]:
    """Comma-separated ranges, e.g. "none,20:26,1:40"."""
    return [ChannelRange.parse(part) for part in text.split(",")]


def confidence_interval(values: Sequence[float], level: float = 0.95) -> Optional[float]:
    """
    Student-t half-width t_{(1+level)/2, R-1} · s / sqrt(R).

    Returns:
        float or None: None when fewer than two values are given
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return None
    t_crit = stats.t.ppf((1.0 + level) / 2.0, len(values) - 1)
    return float(t_crit * values.std(ddof=1) / np.sqrt(len(values)))


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text).strip("_")


@dataclass
class ExperimentReport:
    """Aggregate of repeated trials of one regime."""

    name: str
    kind: ReportKind
    preset: str
    seeds: List[int]
    accuracies: List[float]
    mean: float
    ci95: Optional[float]
    parameters: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)
    removed_channels: str = "none"
    n_classes: int = 11
    class_names: List[str] = field(default_factory=list)
    test_size: int = 0
    created: str = ""
    ci_formula: str = CI_FORMULA
    model_selection: str = MODEL_SELECTION

    @property
    def repetitions(self) -> int:
        return len(self.seeds)

    @property
    def ci_defined(self) -> bool:
        return self.ci95 is not None

    def interval(self) -> Tuple[float, float]:
        half = self.ci95 or 0.0
        return self.mean - half, self.mean + half

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "preset": self.preset,
            "repetitions": self.repetitions,
            "seeds": list(self.seeds),
            "accuracies": [float(a) for a in self.accuracies],
            "mean": float(self.mean),
            "ci95": None if self.ci95 is None else float(self.ci95),
            "ci_defined": self.ci_defined,
            "ci_formula": self.ci_formula,
            "model_selection": self.model_selection,
            "parameters": self.parameters,
            "removed_channels": self.removed_channels,
            "n_classes": self.n_classes,
            "class_names": list(self.class_names),
            "test_size": self.test_size,
            "created": self.created,
        }

    def save(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(
            out_dir / "trials.csv",
            ["seed", "test_accuracy"],
            [[s, float(a)] for s, a in zip(self.seeds, self.accuracies)],
        )
        path = out_dir / "report.yaml"
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)
        return path

    @classmethod
    def load(cls, path: Path) -> "ExperimentReport":
        path = Path(path)
        if path.is_dir():
            path = path / "report.yaml"
        with open(path) as f:
            raw = yaml.safe_load(f)
        return cls(
            name=raw["name"],
            kind=raw["kind"],
            preset=raw["preset"],
            seeds=list(raw["seeds"]),
            accuracies=[float(a) for a in raw["accuracies"]],
            mean=float(raw["mean"]),
            ci95=None if raw.get("ci95") is None else float(raw["ci95"]),
            parameters=raw.get("parameters") or {},
            removed_channels=raw.get("removed_channels", "none"),
            n_classes=int(raw.get("n_classes", 11)),
            class_names=list(raw.get("class_names") or []),
            test_size=int(raw.get("test_size", 0)),
            created=raw.get("created", ""),
            ci_formula=raw.get("ci_formula", CI_FORMULA),
            model_selection=raw.get("model_selection", MODEL_SELECTION),
        )


@dataclass(frozen=True)
class OverlapVerdict:
    reference: str
    other: str
    reference_interval: Tuple[float, float]
    other_interval: Tuple[float, float]
    overlap: bool

    @property
    def verdict(self) -> str:
        if self.overlap:
            return "confidence intervals overlap: no significant difference"
        return "confidence intervals are disjoint: difference is significant"


def compare_reports(reference: ExperimentReport, other: ExperimentReport) -> OverlapVerdict:
    """CI-overlap check; an undefined interval counts as the bare mean."""
    lo_a, hi_a = reference.interval()
    lo_b, hi_b = other.interval()
    return OverlapVerdict(
        reference=reference.name,
        other=other.name,
        reference_interval=(lo_a, hi_a),
        other_interval=(lo_b, hi_b),
        overlap=lo_a <= hi_b and lo_b <= hi_a,
    )


@dataclass(frozen=True)
class PreparedData:
    split: DatasetSplit
    label_map: LabelMap
    noise_pool: Tuple[np.ndarray, ...] = ()


def prepare_data(
    root: Path,
    config: FbkwsConfig,
    subset: Optional[SubsetSpec] = None,
    out_dir: Optional[Path] = None,
    manifest: Optional[Path] = None,
) -> PreparedData:
    """
    Load, restrict and split a corpus.

    Args:
        root (Path): Corpus root (one directory per word)
        config (FbkwsConfig): Supplies sample rate, split fractions and seed
        subset (SubsetSpec, optional): Desk-scale keyword subset and class cap
        out_dir (Path, optional): Where to write split.tsv
        manifest (Path, optional): Reuse an existing split manifest

    Returns:
        PreparedData: Split, label map and noise pool
    """
    label_map = subset.label_map() if subset else LabelMap.default()
    sample_rate = config.framing().sample_rate
    loaded = load_dataset(root, label_map, sample_rate, int(config.get("data.workers")))
    clips = list(loaded.clips)
    if subset is not None:
        clips = apply_subset(clips, subset, int(config.get("data.split_seed")))
    if manifest is not None:
        split = import_split_manifest(manifest, clips)
    else:
        split = split_by_speaker(
            clips, config.split_fractions(), int(config.get("data.split_seed"))
        )
    logger.info(
        f"Split sizes: train {len(split.train)}, validation {len(split.validation)}, "
        f"test {len(split.test)}; class counts "
        f"{class_histogram(clips, label_map.n_classes).tolist()}"
    )
    if out_dir is not None:
        export_split_manifest(split, Path(out_dir) / "split.tsv")
    noise = load_noise_pool(root, sample_rate) if config.get("augmentation.enabled") else []
    return PreparedData(split=split, label_map=label_map, noise_pool=tuple(noise))


def reference_center_frequencies(fspec: FrontendSpec, config: FbkwsConfig) -> np.ndarray:
    """Initial center frequencies (Hz) of a front-end's channels."""
    framing = config.framing()
    fb = config.section("filterbank")
    f_max = fb["f_max"] or framing.sample_rate / 2.0
    scale = fspec.scale or fb["init_scale"]
    return center_frequencies(int(fb["n_channels"]), float(fb["f_min"]), f_max, scale,
                              fb["mel_scale"])


def build_frontend(
    fspec: FrontendSpec, config: FbkwsConfig, rng: np.random.Generator
) -> Frontend:
    """Instantiate a front-end from its spec and the configuration."""
    framing = config.framing()
    fb = config.section("filterbank")
    norm = config.section("feature_norm")
    n_channels = int(fb["n_channels"])
    if fspec.kind == "fbmatrix":
        reference = make_reference_filterbank(
            fb["init_scale"], framing, n_channels, float(fb["f_min"]), fb["f_max"], fb["mel_scale"]
        )
        return FilterbankMatrixFrontend(
            reference.weights,
            framing,
            window=config.get("framing.spectrogram_window"),
            eta=float(fb["eta"]),
            norm_momentum=float(norm["momentum"]),
            norm_eps=float(norm["eps"]),
        )
    gc = config.section("gammachirp")
    params = init_gammachirp(
        fspec.scale or "mel",
        fspec.param_init,
        n_channels,
        framing.sample_rate,
        rng,
        mel_scale=fb["mel_scale"],
        chirp=fspec.kind == "gammachirp",
        kernel_length=int(gc["kernel_length"]),
        f_min=float(fb["f_min"]),
        f_max=fb["f_max"],
    )
    return GammachirpFrontend(
        params,
        framing,
        mode=gc["cochleagram_mode"],
        eta=float(fb["eta"]),
        normalize_impulse=bool(gc["normalize_impulse"]),
        normalize_each_forward=bool(gc["normalize_each_forward"]),
        norm_momentum=float(norm["momentum"]),
        norm_eps=float(norm["eps"]),
    )


def learned_parameters(frontend: Frontend, sample_rate: int) -> Dict[str, np.ndarray]:
    """Effective front-end parameters keyed by name (fused members prefixed a./b.)."""
    if isinstance(frontend, FusedFrontend):
        out: Dict[str, np.ndarray] = {}
        for prefix, member in zip(("a", "b"), frontend.members):
            out.update(
                {f"{prefix}.{k}": v for k, v in learned_parameters(member, sample_rate).items()}
            )
        return out
    if isinstance(frontend, FilterbankMatrixFrontend):
        return {"W": frontend.fb.effective().astype(np.float64)}
    if isinstance(frontend, GammachirpFrontend):
        return frontend.params.effective(sample_rate)
    return {}


def _export_frontend(frontend: Frontend, out_dir: Path, sample_rate: int, prefix: str = "") -> None:
    if isinstance(frontend, FusedFrontend):
        for tag, member in zip(("a_", "b_"), frontend.members):
            _export_frontend(member, out_dir, sample_rate, tag)
    elif isinstance(frontend, FilterbankMatrixFrontend):
        export_filterbank_csv(frontend, out_dir / f"{prefix}filterbank.csv")
    elif isinstance(frontend, GammachirpFrontend):
        export_gammachirp_csv(frontend.params, sample_rate, out_dir / f"{prefix}gammachirp.csv")


@dataclass(frozen=True)
class TrialJob:
    """Everything one isolated trial needs; picklable for process pools."""

    label: str
    regimes: Tuple[ParsedName, ...]
    preset: str
    seed: int
    split: DatasetSplit
    n_classes: int
    config_data: Dict[str, Any]
    out_dir: Path
    noise_pool: Tuple[np.ndarray, ...] = ()
    removal: ChannelRange = ChannelRange()
    fusion_mode: FusionMode = "stack"


@dataclass(frozen=True)
class TrialResult:
    seed: int
    accuracy: float
    confusion: np.ndarray
    learned: Dict[str, np.ndarray]


def run_trial(job: TrialJob) -> TrialResult:
    """
    Train and test one seeded replica and write its artifacts.

    Artifacts in out_dir/seed_XXXX: model.fbkw, history.csv, confusion.csv
    and the learned front-end CSVs.
    """
    config = FbkwsConfig.from_dict(job.config_data)
    framing = config.framing()
    tcfg = config.train_config(seed=job.seed)
    init_rng, train_rng = spawn_rngs(job.seed, 2)
    trial_dir = Path(job.out_dir) / f"seed_{job.seed:04d}"

    with default_dtype(tcfg.precision):
        members = [build_frontend(p.frontend, config, init_rng) for p in job.regimes]
        if len(members) == 2:
            frontend: Frontend = FusedFrontend(members[0], members[1], job.fusion_mode)
            stages = fused_stages(job.regimes[0], job.regimes[1], tcfg.epochs)
        else:
            frontend = members[0]
            stages = resolve_stages(job.regimes[0], tcfg.epochs)
        if not job.removal.is_empty:
            frontend.set_channel_mask(job.removal.mask(frontend.n_channels))

        n_frames = framing.n_frames(len(job.split.train[0].samples))
        rcfg = config.resnet_config(
            job.preset, job.n_classes, (n_frames, frontend.output_channels),
            frontend.n_feature_maps,
        )
        system = TrainedSystem(frontend, build_model(rcfg, init_rng))
        train_stages(
            system, job.split, tcfg, stages, train_rng, job.noise_pool, config.augment_config()
        )
        result = evaluate(system, job.split.test, tcfg.batch_size, job.n_classes)

    system.save(trial_dir / "model.fbkw")
    write_history_csv(system.history, trial_dir / "history.csv")
    write_matrix_csv(trial_dir / "confusion.csv", result.confusion, prefix="pred")
    _export_frontend(frontend, trial_dir, framing.sample_rate)
    logger.info(f"{job.label} seed {job.seed}: test accuracy {result.accuracy:.4f}")
    return TrialResult(
        seed=job.seed,
        accuracy=result.accuracy,
        confusion=result.confusion,
        learned=learned_parameters(frontend, framing.sample_rate),
    )


def _execute(jobs: Sequence[TrialJob], workers: int) -> List[TrialResult]:
    results: List[TrialResult] = []
    if workers <= 1:
        for job in jobs:
            try:
                results.append(run_trial(job))
            except Exception as e:
                logger.error(f"Trial {job.label} seed {job.seed} failed: {str(e)}")
                raise TrialError(str(e), job.seed, e) from e
        return results

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_trial, job) for job in jobs]
        for job, future in zip(jobs, futures):
            try:
                results.append(future.result())
            except Exception as e:
                logger.error(f"Trial {job.label} seed {job.seed} failed: {str(e)}")
                for pending in futures:
                    pending.cancel()
                raise TrialError(str(e), job.seed, e) from e
    return results


def summarize_parameters(
    trials: Sequence[TrialResult], out_dir: Path
) -> Dict[str, Dict[str, Optional[float]]]:
    """
    Aggregate learned front-end parameters across trials.

    Scalars (n, b, c) get mean and ci95 in the returned summary. Per-channel
    vectors are averaged into learned_<prefix>gammachirp.csv and matrices
    into learned_<prefix>filterbank.csv.
    """
    if not trials or not trials[0].learned:
        return {}
    summary: Dict[str, Dict[str, Optional[float]]] = {}
    keys = list(trials[0].learned)
    prefixes = sorted({k.rsplit(".", 1)[0] + "." if "." in k else "" for k in keys})
    for prefix in prefixes:
        names = [k for k in keys if (k.rsplit(".", 1)[0] + "." if "." in k else "") == prefix]
        channel_columns: Dict[str, np.ndarray] = {}
        for key in names:
            stacked = np.stack([t.learned[key] for t in trials])
            short = key[len(prefix) :]
            if stacked.ndim == 3:
                write_matrix_csv(
                    Path(out_dir) / f"learned_{prefix.replace('.', '_')}filterbank.csv",
                    stacked.mean(axis=0),
                )
            elif stacked.shape[1] == 1:
                values = stacked[:, 0]
                summary[key] = {"mean": float(values.mean()), "ci95": confidence_interval(values)}
            else:
                channel_columns[short] = stacked.mean(axis=0)
        if channel_columns:
            n_channels = len(next(iter(channel_columns.values())))
            header = ["channel"] + list(channel_columns)
            rows = [
                [k + 1] + [float(channel_columns[c][k]) for c in channel_columns]
                for k in range(n_channels)
            ]
            write_csv(
                Path(out_dir) / f"learned_{prefix.replace('.', '_')}gammachirp.csv", header, rows
            )
    return summary


def _run_protocol(
    label: str,
    kind: ReportKind,
    regimes: Tuple[ParsedName, ...],
    preset: str,
    seeds: Sequence[int],
    data: PreparedData,
    out_dir: Path,
    config: FbkwsConfig,
    workers: Optional[int] = None,
    removal: ChannelRange = ChannelRange(),
    fusion_mode: Optional[str] = None,
) -> ExperimentReport:
    if not data.split.test:
        raise ValueError("test split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = fusion_mode or config.get("experiments.fusion_mode")
    jobs = [
        TrialJob(
            label=label,
            regimes=regimes,
            preset=preset,
            seed=seed,
            split=data.split,
            n_classes=data.label_map.n_classes,
            config_data=config.as_dict(),
            out_dir=out_dir,
            noise_pool=data.noise_pool,
            removal=removal,
            fusion_mode=mode,
        )
        for seed in seeds
    ]
    n_workers = int(workers if workers is not None else config.get("experiments.workers"))
    logger.info(f"Running {label}: {len(jobs)} trials with {max(n_workers, 1)} worker(s)")
    trials = sorted(_execute(jobs, n_workers), key=lambda t: t.seed)

    for regime in regimes:
        if regime.frontend.kind == "fbmatrix":
            framing = config.framing()
            fb = config.section("filterbank")
            reference = make_reference_filterbank(
                fb["init_scale"], framing, int(fb["n_channels"]), float(fb["f_min"]),
                fb["f_max"], fb["mel_scale"],
            )
            write_matrix_csv(out_dir / "reference_filterbank.csv", reference.weights)
            break

    accuracies = [t.accuracy for t in trials]
    report = ExperimentReport(
        name=label,
        kind=kind,
        preset=preset,
        seeds=[t.seed for t in trials],
        accuracies=accuracies,
        mean=float(np.mean(accuracies)),
        ci95=confidence_interval(accuracies),
        parameters=summarize_parameters(trials, out_dir),
        removed_channels=removal.label,
        n_classes=data.label_map.n_classes,
        class_names=data.label_map.class_names,
        test_size=len(data.split.test),
        created=format_timestamp(),
    )
    report.save(out_dir)
    ci_text = f"± {report.ci95:.4f}" if report.ci95 is not None else "(ci undefined, R=1)"
    logger.info(f"{label}: mean test accuracy {report.mean:.4f} {ci_text}")
    return report


def run_experiment(
    spec: ExperimentSpec,
    data: PreparedData,
    out_dir: Path,
    config: FbkwsConfig,
    workers: Optional[int] = None,
) -> ExperimentReport:
    """
    Repeated seeded trials of one regime.

    Args:
        spec (ExperimentSpec): Regime, preset, repetitions and base seed
        data (PreparedData): Split and noise pool
        out_dir (Path): Root for this experiment's artifacts
        config (FbkwsConfig): Configuration
        workers (int, optional): Parallel trials, configuration default when omitted

    Returns:
        ExperimentReport: Persisted to out_dir/report.yaml

    Raises:
        TrialError: If any trial fails; carries its seed
    """
    return _run_protocol(
        spec.name, "single", (spec.parsed,), spec.preset, spec.seeds, data,
        Path(out_dir), config, workers,
    )


def run_fusion(
    spec_a: ExperimentSpec,
    spec_b: ExperimentSpec,
    data: PreparedData,
    out_dir: Path,
    config: FbkwsConfig,
    mode: Optional[str] = None,
    workers: Optional[int] = None,
) -> ExperimentReport:
    """
    Repeated trials with two front-ends feeding one back-end.

    Preset, repetitions and seeds come from spec_a.

    Raises:
        ValueError: If the stage schedules cannot be merged
        ShapeError: If the front-ends disagree on the frame count
    """
    fused_stages(spec_a.parsed, spec_b.parsed, config.train_config().epochs)
    label = f"Fusion({spec_a.name} | {spec_b.name})"
    return _run_protocol(
        label, "fusion", (spec_a.parsed, spec_b.parsed), spec_a.preset, spec_a.seeds, data,
        Path(out_dir), config, workers, fusion_mode=mode,
    )


@dataclass(frozen=True)
class RemovalRow:
    channels: ChannelRange
    f_low: Optional[float]
    f_high: Optional[float]
    report: ExperimentReport


@dataclass
class RemovalReport:
    """Accuracy as a function of the removed channel range."""

    name: str
    rows: List[RemovalRow]

    def save(self, out_dir: Path) -> Path:
        return write_csv(
            Path(out_dir) / "removal.csv",
            ["range", "first", "last", "f_low", "f_high", "mean", "ci95", "repetitions"],
            [
                [
                    r.channels.label,
                    r.channels.first,
                    r.channels.last,
                    "" if r.f_low is None else r.f_low,
                    "" if r.f_high is None else r.f_high,
                    r.report.mean,
                    "" if r.report.ci95 is None else r.report.ci95,
                    r.report.repetitions,
                ]
                for r in self.rows
            ],
        )


def run_filter_removal(
    spec: ExperimentSpec,
    ranges: Sequence[ChannelRange],
    data: PreparedData,
    out_dir: Path,
    config: FbkwsConfig,
    workers: Optional[int] = None,
) -> RemovalReport:
    """
    Repeat a fixed-front-end regime with filterbank channels zeroed out.

    Removal zeroes columns so the back-end input keeps its shape. The empty
    range reproduces the unmodified pipeline.

    Raises:
        ValueError: If the regime trains its front-end or a range is out of bounds
    """
    if spec.parsed.frontend_ever_trained:
        raise ValueError(f"filter removal needs a fixed front-end; {spec.name} trains it")
    n_channels = int(config.get("filterbank.n_channels"))
    for channel_range in ranges:
        channel_range.validate(n_channels)
    centers = reference_center_frequencies(spec.parsed.frontend, config)

    out_dir = Path(out_dir)
    rows: List[RemovalRow] = []
    for channel_range in ranges:
        sub_dir = out_dir / f"removal_{_slug(channel_range.label.replace(':', '-'))}"
        report = _run_protocol(
            spec.name, "removal", (spec.parsed,), spec.preset, spec.seeds, data, sub_dir,
            config, workers, removal=channel_range,
        )
        f_low = None if channel_range.is_empty else float(centers[channel_range.first - 1])
        f_high = None if channel_range.is_empty else float(centers[channel_range.last - 1])
        rows.append(RemovalRow(channel_range, f_low, f_high, report))

    removal = RemovalReport(spec.name, rows)
    removal.save(out_dir)
    return removal


def evaluate_with_removal(
    system: TrainedSystem,
    clips: Sequence[Any],
    channel_range: ChannelRange,
    batch_size: int = 64,
) -> EvaluationResult:
    """Evaluate an already trained system with channels removed at test time."""
    previous = system.frontend.channel_mask
    system.frontend.set_channel_mask(channel_range.mask(system.frontend.n_channels))
    try:
        return evaluate(system, clips, batch_size)
    finally:
        system.frontend.set_channel_mask(previous)


def experiment_dir(root: Path, name: str) -> Path:
    """Directory of an experiment under an output root."""
    return Path(root) / _slug(name)


def gradient_fidelity(
    kind: Literal["fbmatrix", "gammachirp"],
    config: FbkwsConfig,
    seed: int = 0,
    batch_size: int = 4,
    n_blocks: int = 2,
    step: float = 1e-4,
    tolerance: float = 1e-4,
    n_triples: int = 5,
) -> GradCheckReport:
    """
    Finite-difference check of the full loss in double precision.

    Checks a 10×5 slice of W for the filterbank matrix, or the shared n, b, c
    plus `n_triples` sampled (a, f, ERB) channels for the gammachirp bank, on
    random one-second signals through a reduced "small" back-end. W is moved
    off zero first so every checked entry lies on the smooth side of relu.
    """
    framing = config.framing()
    rng = np.random.default_rng(seed)
    with default_dtype("float64"):
        frontend = build_frontend(FrontendSpec(kind=kind, scale="mel"), config, rng)
        if isinstance(frontend, FilterbankMatrixFrontend):
            weights = frontend.fb.weights
            weights.data = weights.data + rng.uniform(0.01, 0.05, size=weights.shape)
        n_frames = framing.n_frames(framing.sample_rate)
        rcfg = replace(
            config.resnet_config("small", N_CLASSES, (n_frames, frontend.output_channels)),
            n_res_blocks=n_blocks,
        )
        model = build_model(rcfg, rng)
        signals = 0.1 * rng.standard_normal((batch_size, framing.sample_rate))
        labels = rng.integers(0, N_CLASSES, size=batch_size)

        def loss() -> ad.Tensor:
            features = frontend.forward(signals, training=True)
            return ad.softmax_crossentropy(model.forward(features, training=True), labels)

        params = frontend.parameters()
        if isinstance(frontend, FilterbankMatrixFrontend):
            indices: Dict[str, Sequence[Tuple[int, ...]]] = {
                "W": [(i, j) for i in range(20, 30) for j in range(5, 10)]
            }
        else:
            channels = sorted(rng.choice(frontend.n_channels, n_triples, replace=False).tolist())
            indices = {name: [(0,)] for name in ("n_raw", "b_raw", "c")}
            indices.update({name: [(k,) for k in channels] for name in ("a", "f_norm", "erb_norm")})
            params = {name: params[name] for name in indices}
        return ad.grad_check(loss, params, step=step, tolerance=tolerance, indices=indices)
