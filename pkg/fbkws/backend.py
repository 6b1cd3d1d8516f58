"""
Residual keyword classifier and its training loop.

The back-end is a small residual CNN over (T, K, C) feature maps. Training
runs Adam on categorical cross-entropy through the front-end and back-end
together; either part can be frozen per stage.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tape, Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import AudioClip, AugmentConfig, DatasetSplit, augment
from .exceptions import DatasetError, ShapeError
from .frontends import Frontend, FusedFrontend
from .utils import write_csv

logger = logging.getLogger(__name__)

N_CLASSES = 11


@dataclass(frozen=True)
class ResNetConfig:
    """
    Residual back-end geometry.

    Attributes:
        n_res_blocks (int): Residual blocks after the stem
        channels (int): Feature maps in every convolution
        dilation (bool): Grow dilation as 2**(block // 3)
        n_classes (int): Output logits
        input_shape (Tuple[int, int]): (T, K) of the feature map
        in_channels (int): Stacked feature maps (2 for fusion)
        zero_init_head (bool): Start the final affine layer at zero
    """

    n_res_blocks: int
    channels: int
    dilation: bool = False
    n_classes: int = N_CLASSES
    input_shape: Tuple[int, int] = (98, 40)
    in_channels: int = 1
    zero_init_head: bool = False

    def __post_init__(self) -> None:
        if self.n_res_blocks < 0 or self.channels < 1 or self.n_classes < 2:
            raise ValueError(f"Invalid back-end geometry: {self}")


PRESETS: Dict[str, Dict[str, Any]] = {
    "large": {"n_res_blocks": 6, "channels": 45, "dilation": True},
    "small": {"n_res_blocks": 3, "channels": 19, "dilation": False},
}


def preset_config(
    name: str,
    n_classes: int = N_CLASSES,
    input_shape: Tuple[int, int] = (98, 40),
    in_channels: int = 1,
    presets: Optional[Dict[str, Dict[str, Any]]] = None,
) -> ResNetConfig:
    table = presets or PRESETS
    if name not in table:
        raise ValueError(f"Unknown back-end preset {name!r}; expected one of {sorted(table)}")
    return ResNetConfig(
        n_classes=n_classes, input_shape=tuple(input_shape), in_channels=in_channels, **table[name]
    )


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimizer and schedule settings.

    Attributes:
        epochs (int): Passes over the training split
        batch_size (int): Minibatch size
        learning_rate (float): Adam step size
        beta1 (float): First-moment decay
        beta2 (float): Second-moment decay
        epsilon (float): Adam denominator floor
        seed (int): Root of the trial RNG hierarchy
        precision (str): Float width used for training
        target_train_accuracy (float, optional): Stop once an epoch reaches it
        keep_best (bool): Restore the best-validation epoch at the end
    """

    epochs: int = 26
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    seed: int = 0
    precision: str = "float32"
    target_train_accuracy: Optional[float] = None
    keep_best: bool = False


@dataclass(frozen=True)
class TrainingStage:
    """
    One block of epochs with fixed trainability.

    `frontend_trainable` may be a tuple with one flag per fused member.
    """

    epochs: int
    frontend_trainable: Union[bool, Tuple[bool, ...]]
    backend_trainable: bool

    @property
    def any_frontend_trainable(self) -> bool:
        flags = self.frontend_trainable
        return any(flags) if isinstance(flags, tuple) else bool(flags)


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    stage: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float


class Conv2d:
    """Bias-free 3×3 convolution with He-normal initialization."""

    def __init__(
        self, in_channels: int, out_channels: int, rng: np.random.Generator, dilation: int = 1,
        kernel_size: int = 3,
    ):
        fan_in = kernel_size * kernel_size * in_channels
        weights = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                             (kernel_size, kernel_size, in_channels, out_channels))
        self.weight = Tensor(weights, requires_grad=True)
        self.dilation = dilation

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.dilation)


class BatchNorm:
    """Batch normalization with learned scale and shift."""

    def __init__(self, channels: int, momentum: float = 0.99, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.state = BatchNormState(channels, momentum=momentum, eps=eps)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ad.batchnorm(x, self.state, training, self.gamma, self.beta)


class Dense:
    """Affine map to logits."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 zero_init: bool = False):
        if zero_init:
            weights = np.zeros((in_features, out_features))
        else:
            limit = np.sqrt(6.0 / (in_features + out_features))
            weights = rng.uniform(-limit, limit, (in_features, out_features))
        self.weight = Tensor(weights, requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.weight) + self.bias


class ResNet:
    """
    stem conv → relu → blocks [conv → bn → relu → conv → bn, + skip, relu]
    → global average pool over (T, K) → dense.
    """

    def __init__(self, cfg: ResNetConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stem = Conv2d(cfg.in_channels, cfg.channels, rng)
        self.blocks: List[Tuple[Conv2d, BatchNorm, Conv2d, BatchNorm]] = []
        for i in range(cfg.n_res_blocks):
            dilation = 2 ** (i // 3) if cfg.dilation else 1
            self.blocks.append(
                (
                    Conv2d(cfg.channels, cfg.channels, rng, dilation),
                    BatchNorm(cfg.channels),
                    Conv2d(cfg.channels, cfg.channels, rng, dilation),
                    BatchNorm(cfg.channels),
                )
            )
        self.head = Dense(cfg.channels, cfg.n_classes, rng, zero_init=cfg.zero_init_head)
        self.trainable = True

    def forward(self, x: Tensor, training: bool) -> Tensor:
        """(B, T, K, C) features → (B, n_classes) logits."""
        if x.ndim != 4 or x.shape[3] != self.cfg.in_channels:
            raise ShapeError(
                f"back-end expects (B, T, K, {self.cfg.in_channels}) input, got {x.shape}"
            )
        _check_receptive_field(x.shape[1:3])
        h = ad.relu(self.stem(x))
        for conv1, bn1, conv2, bn2 in self.blocks:
            y = ad.relu(bn1(conv1(h), training))
            y = bn2(conv2(y), training)
            h = ad.relu(y + h)
        pooled = ad.mean(h, axis=(1, 2))
        return self.head(pooled)

    def parameters(self) -> Dict[str, Tensor]:
        params = {"stem.weight": self.stem.weight}
        for i, (conv1, bn1, conv2, bn2) in enumerate(self.blocks):
            params.update(
                {
                    f"block{i}.conv1.weight": conv1.weight,
                    f"block{i}.bn1.gamma": bn1.gamma,
                    f"block{i}.bn1.beta": bn1.beta,
                    f"block{i}.conv2.weight": conv2.weight,
                    f"block{i}.bn2.gamma": bn2.gamma,
                    f"block{i}.bn2.beta": bn2.beta,
                }
            )
        params["head.weight"] = self.head.weight
        params["head.bias"] = self.head.bias
        return params

    def norm_states(self) -> Dict[str, BatchNormState]:
        states = {}
        for i, (_, bn1, _, bn2) in enumerate(self.blocks):
            states[f"block{i}.bn1"] = bn1.state
            states[f"block{i}.bn2"] = bn2.state
        return states

    @property
    def statistics_ready(self) -> bool:
        """True once every batch norm has running statistics."""
        return all(state.initialized for state in self.norm_states().values())

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.parameters().values()))

    def set_trainable(self, trainable: bool) -> None:
        self.trainable = trainable
        for tensor in self.parameters().values():
            tensor.requires_grad = trainable

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: t.data for name, t in self.parameters().items()}
        for prefix, bn_state in self.norm_states().items():
            for key, values in bn_state.buffers().items():
                state[f"{prefix}.{key}"] = values
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, tensor in self.parameters().items():
            values = np.asarray(state[name])
            if values.shape != tensor.shape:
                raise ShapeError(f"{name}: stored {values.shape}, expected {tensor.shape}")
            tensor.data = values.astype(tensor.data.dtype)
        for prefix, bn_state in self.norm_states().items():
            bn_state.load_buffers(
                {k: state[f"{prefix}.{k}"] for k in ("running_mean", "running_var", "initialized")}
            )


def _check_receptive_field(shape: Tuple[int, int]) -> None:
    if shape[0] < 3 or shape[1] < 3:
        raise ShapeError(f"feature map {tuple(shape)} is smaller than the 3×3 stem")


def build_model(cfg: ResNetConfig, rng: np.random.Generator) -> ResNet:
    """
    Construct a back-end in the current default dtype.

    Raises:
        ShapeError: If the input is smaller than the stem receptive field
    """
    _check_receptive_field(cfg.input_shape)
    model = ResNet(cfg, rng)
    logger.info(
        f"Built back-end: {cfg.n_res_blocks} blocks, {cfg.channels} channels, "
        f"{model.parameter_count()} parameters"
    )
    return model


class Adam:
    """
    Adam with Keras-style bias correction folded into the step size.

    Only tensors that require gradients and received one are updated, so
    frozen parameters stay bitwise unchanged.
    """

    def __init__(
        self,
        params: Dict[str, Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-7,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.iterations = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.iterations += 1
        t = self.iterations
        lr_t = self.learning_rate * np.sqrt(1 - self.beta2**t) / (1 - self.beta1**t)
        for name, tensor in self.params.items():
            if not tensor.requires_grad or tensor.grad is None:
                continue
            g = tensor.grad
            m = self.m.get(name, np.zeros_like(tensor.data))
            v = self.v.get(name, np.zeros_like(tensor.data))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            update = lr_t * m / (np.sqrt(v) + self.epsilon)
            tensor.data = (tensor.data - update).astype(tensor.data.dtype)

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None


@dataclass(frozen=True)
class EvaluationResult:
    accuracy: float
    confusion: np.ndarray
    n_examples: int


@dataclass
class TrainedSystem:
    """A front-end and back-end pair plus the history that produced it."""

    frontend: Frontend
    model: ResNet
    history: List[HistoryRow] = field(default_factory=list)

    def logits(self, signals: np.ndarray, batch_size: int = 64) -> np.ndarray:
        outputs = []
        for start in range(0, len(signals), batch_size):
            chunk = signals[start : start + batch_size]
            feats = self.frontend.forward(chunk, training=False)
            outputs.append(self.model.forward(feats, training=False).data)
        return np.concatenate(outputs, axis=0)

    def predict(self, signals: np.ndarray, batch_size: int = 64) -> np.ndarray:
        return np.argmax(self.logits(signals, batch_size), axis=1)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"frontend.{k}": v for k, v in self.frontend.state_dict().items()}
        state.update({f"backend.{k}": v for k, v in self.model.state_dict().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.frontend.load_state_dict(
            {k[len("frontend.") :]: v for k, v in state.items() if k.startswith("frontend.")}
        )
        self.model.load_state_dict(
            {k[len("backend.") :]: v for k, v in state.items() if k.startswith("backend.")}
        )

    def save(self, path: Path) -> Path:
        return save_checkpoint(self.state_dict(), path)

    def load(self, path: Path) -> None:
        self.load_state_dict(load_checkpoint(path))


def _stack(clips: Sequence[AudioClip]) -> Tuple[np.ndarray, np.ndarray]:
    return (
        np.stack([c.samples for c in clips]),
        np.array([c.label for c in clips], dtype=np.int64),
    )


def evaluate(
    system: TrainedSystem,
    clips: Sequence[AudioClip],
    batch_size: int = 64,
    n_classes: Optional[int] = None,
) -> EvaluationResult:
    """
    Accuracy and confusion matrix (rows = true class) in evaluation mode.

    Raises:
        ValueError: If the split is empty
    """
    if not clips:
        raise ValueError("cannot evaluate on an empty split")
    signals, labels = _stack(clips)
    predictions = system.predict(signals, batch_size)
    n_classes = n_classes or system.model.cfg.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    accuracy = float(np.mean(predictions == labels))
    return EvaluationResult(accuracy=accuracy, confusion=confusion, n_examples=len(clips))


def _apply_stage(system: TrainedSystem, stage: TrainingStage) -> None:
    flags = stage.frontend_trainable
    if isinstance(flags, tuple):
        if not isinstance(system.frontend, FusedFrontend) or len(flags) != 2:
            raise ValueError(f"per-member trainability {flags} needs a fused front-end")
        for index, flag in enumerate(flags):
            system.frontend.set_member_trainable(index, flag)
    else:
        system.frontend.set_trainable(flags)
    system.model.set_trainable(stage.backend_trainable)


def train(
    system: TrainedSystem,
    split: DatasetSplit,
    tcfg: TrainConfig,
    stage: TrainingStage,
    rng: np.random.Generator,
    noise_pool: Sequence[np.ndarray] = (),
    augment_config: Optional[AugmentConfig] = None,
    stage_index: int = 1,
    first_epoch: int = 1,
) -> TrainedSystem:
    """
    Run one stage of minibatch Adam on categorical cross-entropy.

    The optimizer starts fresh; gradients reach only the parts the stage
    marks trainable. Shuffling and augmentation draw from `rng`.
    A frozen back-end runs its batch norms on the running statistics, which
    stay unchanged once set.

    Args:
        system (TrainedSystem): Front-end and back-end to update in place
        split (DatasetSplit): Train split is used for updates, validation
                              for the per-epoch accuracy
        tcfg (TrainConfig): Optimizer settings
        stage (TrainingStage): Epoch count and trainability
        rng (np.random.Generator): Stage generator
        noise_pool: Background noise waveforms for augmentation
        augment_config (AugmentConfig, optional): Augmentation recipe
        stage_index (int): Stage number recorded in the history
        first_epoch (int): Global number of this stage's first epoch

    Returns:
        TrainedSystem: The same system with history rows appended

    Raises:
        ValueError: If neither part is trainable
        DatasetError: If the training split is empty
    """
    if not (stage.any_frontend_trainable or stage.backend_trainable):
        raise ValueError("a training stage must make the front-end or the back-end trainable")
    train_clips = list(split.train)
    if not train_clips:
        raise DatasetError("training split is empty")

    _apply_stage(system, stage)
    params = dict(system.model.parameters())
    params.update({f"frontend.{k}": v for k, v in system.frontend.parameters().items()})
    optimizer = Adam(params, tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.epsilon)
    best: Optional[Tuple[float, Dict[str, np.ndarray]]] = None

    for offset in range(stage.epochs):
        epoch = first_epoch + offset
        order = rng.permutation(len(train_clips))
        total_loss, correct = 0.0, 0
        for start in range(0, len(order), tcfg.batch_size):
            batch = [
                augment(train_clips[i], noise_pool, rng, augment_config)
                for i in order[start : start + tcfg.batch_size]
            ]
            signals, labels = _stack(batch)
            with Tape() as tape:
                feats = system.frontend.forward(signals, training=True)
                backend_training = stage.backend_trainable or not system.model.statistics_ready
                logits = system.model.forward(feats, training=backend_training)
                loss = ad.softmax_crossentropy(logits, labels)
            tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            total_loss += float(loss.data) * len(batch)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == labels))

        train_loss = total_loss / len(train_clips)
        train_accuracy = correct / len(train_clips)
        val_accuracy = (
            evaluate(system, split.validation, tcfg.batch_size).accuracy
            if split.validation
            else float("nan")
        )
        system.history.append(
            HistoryRow(epoch, stage_index, train_loss, train_accuracy, val_accuracy)
        )
        logger.info(
            f"epoch {epoch}: loss {train_loss:.4f}, train acc {train_accuracy:.4f}, "
            f"val acc {val_accuracy:.4f}",
            extra={
                "epoch": epoch,
                "stage": stage_index,
                "train_loss": train_loss,
                "train_accuracy": train_accuracy,
                "val_accuracy": val_accuracy,
                "seed": tcfg.seed,
            },
        )
        if not np.isfinite(train_loss):
            raise FloatingPointError(f"training loss diverged at epoch {epoch}")
        if tcfg.keep_best and split.validation and (best is None or val_accuracy > best[0]):
            best = (val_accuracy, {k: v.copy() for k, v in system.state_dict().items()})
        if tcfg.target_train_accuracy is not None and train_accuracy >= tcfg.target_train_accuracy:
            logger.info(f"Reached target train accuracy at epoch {epoch}")
            break

    if best is not None:
        system.load_state_dict(best[1])
        logger.info(f"Restored best validation accuracy {best[0]:.4f}")
    return system


def train_stages(
    system: TrainedSystem,
    split: DatasetSplit,
    tcfg: TrainConfig,
    stages: Sequence[TrainingStage],
    rng: np.random.Generator,
    noise_pool: Sequence[np.ndarray] = (),
    augment_config: Optional[AugmentConfig] = None,
) -> TrainedSystem:
    """Run stages in order, each warm-started from the previous one."""
    epoch = 1
    for index, stage in enumerate(stages, start=1):
        logger.info(
            f"Stage {index}: {stage.epochs} epochs, front-end trainable "
            f"{stage.frontend_trainable}, back-end trainable {stage.backend_trainable}"
        )
        train(system, split, tcfg, stage, rng, noise_pool, augment_config, index, epoch)
        epoch = (system.history[-1].epoch + 1) if system.history else epoch
    return system


def write_history_csv(history: Sequence[HistoryRow], path: Path) -> Path:
    return write_csv(
        Path(path),
        ["epoch", "stage", "train_loss", "train_accuracy", "val_accuracy"],
        [[r.epoch, r.stage, r.train_loss, r.train_accuracy, r.val_accuracy] for r in history],
    )
