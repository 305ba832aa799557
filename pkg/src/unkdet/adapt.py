"""Mean-teacher adaptation to the target domain, plus source pretraining.

The teacher runs on weakly augmented images (flip only) and labels them;
the student trains on strongly augmented views (flip + noise + channel
scaling + one erased patch) against those labels; after each optimizer
step the teacher follows the student by exponential moving average.  The
flip coin is shared between the weak and strong views of an image so the
teacher's boxes remain valid for the student.

Four method flavors gate the optional machinery: ``mt-conf`` (plain decode,
confidence-only labeling), ``collab-only``, ``paul-only``, ``collapaul``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .collab import forward
from .errors import ConfigError, ParameterError, UsageError
from .losses import detection_loss
from .model import (
    DetectorConfig,
    clone_params,
    init_params,
    is_collab_tensor,
    make_proposals,
    param_shapes,
    positional_codes,
)
from .pseudolabel import (
    PseudoLabelConfig,
    confidence_only_pipeline,
    pseudo_label_pipeline,
)

METHODS = ("mt-conf", "collab-only", "paul-only", "collapaul")


def method_uses_collab(method: str) -> bool:
    return method in ("collab-only", "collapaul")


def method_uses_paul(method: str) -> bool:
    return method in ("paul-only", "collapaul")


@dataclass(frozen=True)
class AugmentSpec:
    mode: str = "weak"              # weak: flip only; strong: all corruptions
    flip_probability: float = 0.5
    noise_sigma: float = 0.05
    scale_low: float = 0.8
    scale_high: float = 1.2
    erase_size: int = 8
    erase_fill: float = 0.5

    def __post_init__(self):
        if self.mode not in ("weak", "strong"):
            raise ConfigError(f"unknown augmentation mode {self.mode!r}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError("flip_probability must lie in [0,1]")
        if self.noise_sigma < 0 or self.erase_size < 0:
            raise ConfigError("noise_sigma and erase_size must be >= 0")
        if not 0.0 < self.scale_low <= self.scale_high:
            raise ConfigError("need 0 < scale_low <= scale_high")


WEAK = AugmentSpec(mode="weak")
STRONG = AugmentSpec(mode="strong")


def augment(image: np.ndarray, spec: AugmentSpec,
            rng: np.random.Generator) -> np.ndarray:
    """Random view of a C x H x W image in [0,1]; preserves dtype and range."""
    out = np.array(image, dtype=np.float64, copy=True)
    if rng.random() < spec.flip_probability:
        out = out[:, :, ::-1]
    if spec.mode == "strong":
        out = out + rng.normal(0.0, spec.noise_sigma, out.shape)
        out = out * rng.uniform(spec.scale_low, spec.scale_high,
                                (out.shape[0], 1, 1))
        size = min(spec.erase_size, out.shape[1], out.shape[2])
        if size > 0:
            y0 = int(rng.integers(0, out.shape[1] - size + 1))
            x0 = int(rng.integers(0, out.shape[2] - size + 1))
            out[:, y0:y0 + size, x0:x0 + size] = spec.erase_fill
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.99             # teacher EMA momentum
    learning_rate: float = 1e-3
    steps: int = 200
    batch_size: int = 4
    seed: int = 0
    method: str = "collapaul"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0,1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if self.method not in METHODS:
            raise ConfigError(
                f"method must be one of {METHODS}, got {self.method!r}")


@dataclass
class AdamState:
    """Adaptive-moment optimizer state; one slot pair per tensor."""
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t) for k, t in params.items()},
            v={k: np.zeros_like(t) for k, t in params.items()},
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, learning_rate: float) -> None:
    """One bias-corrected update, in place on params and state."""
    if set(grads) - set(params):
        raise ParameterError("gradient for unknown tensor")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, tensor in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor)
        m = state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        tensor -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def ema_update(teacher: dict[str, np.ndarray], student: dict[str, np.ndarray],
               alpha: float) -> dict[str, np.ndarray]:
    """t' = alpha * t + (1 - alpha) * s for every tensor; returns a new dict."""
    if set(teacher) != set(student):
        raise ParameterError("teacher/student tensor names differ")
    out = {}
    for name, t in teacher.items():
        s = student[name]
        if t.shape != s.shape:
            raise ParameterError(f"tensor {name} shape differs")
        out[name] = alpha * t + (1.0 - alpha) * s
    return out


@dataclass
class TeacherStudent:
    student: dict[str, np.ndarray]
    teacher: dict[str, np.ndarray]
    alpha: float = 0.99

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError("alpha must lie in (0,1)")
        if set(self.student) != set(self.teacher):
            raise ParameterError("teacher/student tensor names differ")

    @classmethod
    def from_source(cls, source_params: dict[str, np.ndarray],
                    config: DetectorConfig, rng: np.random.Generator,
                    alpha: float = 0.99) -> "TeacherStudent":
        """Student = source detector + freshly initialized collab tensors.

        Collaborative tensors are (re)drawn here regardless of the source
        checkpoint: they belong to the adaptation stage, not to source
        pretraining.  Teacher starts as an exact copy of the student.
        """
        student: dict[str, np.ndarray] = {}
        for name, shape in param_shapes(config).items():
            if is_collab_tensor(name):
                if name.endswith((".b", ".b1", ".b2")):
                    student[name] = np.zeros(shape)
                else:
                    student[name] = rng.uniform(-1.0, 1.0, shape) / np.sqrt(shape[0])
            elif name in source_params:
                tensor = np.asarray(source_params[name], dtype=np.float64)
                if tensor.shape != shape:
                    raise ParameterError(f"tensor {name} has shape "
                                         f"{tensor.shape}, expected {shape}")
                student[name] = tensor.copy()
            else:
                raise ParameterError(f"source params missing tensor {name}")
        return cls(student=student, teacher=clone_params(student), alpha=alpha)


def _batch_loss(scenes_and_labels, params, config, use_collab, codes):
    """Mean detection loss over (image, classes, boxes) triples on one tape."""
    total = None
    for image, classes, boxes in scenes_and_labels:
        out = forward(image, params, config, use_collab=use_collab, codes=codes)
        term = detection_loss(out.logits, out.boxes, classes, boxes)
        total = term if total is None else total + term
    return total * (1.0 / len(scenes_and_labels))


def _taped_step(scenes_and_labels, params, optimizer, learning_rate,
                config, use_collab, codes):
    """Forward/backward over a batch and one optimizer step; returns loss."""
    tape = ad.Tape()
    leaves = {name: tape.leaf(tensor) for name, tensor in params.items()}
    total = _batch_loss(scenes_and_labels, leaves, config, use_collab, codes)
    ad.backward(tape, total)
    grads = {name: leaf.grad for name, leaf in leaves.items()}
    adam_step(params, grads, optimizer, learning_rate)
    return float(total.value)


def pretrain_source(scenes, config: TrainConfig,
                    detector_config: DetectorConfig = DetectorConfig(),
                    loss_log: list | None = None,
                    capture: dict | None = None) -> dict[str, np.ndarray]:
    """Supervised training on labeled source scenes; plain decode only.

    ``loss_log``, if given, receives the pre-update batch loss of every
    step; its first entry is therefore the loss of the initialized model.
    ``capture``, if given, receives the final ``"optimizer"`` state and
    ``"rng"`` generator so callers can persist them.
    """
    if not scenes:
        raise UsageError("source dataset is empty; generate data first")
    rng = np.random.default_rng(config.seed)
    params = init_params(detector_config, rng, include_collab=False)
    optimizer = AdamState.for_params(params)
    codes = positional_codes(detector_config)
    for _ in range(config.steps):
        idx = rng.integers(0, len(scenes), config.batch_size)
        batch = [(scenes[i].image, scenes[i].classes, scenes[i].boxes)
                 for i in idx]
        loss = _taped_step(batch, params, optimizer, config.learning_rate,
                           detector_config, False, codes)
        if loss_log is not None:
            loss_log.append(loss)
    if capture is not None:
        capture.update(optimizer=optimizer, rng=rng)
    return params


def adaptation_step(batch, ts: TeacherStudent, config: TrainConfig,
                    detector_config: DetectorConfig,
                    label_config: PseudoLabelConfig | None = None,
                    optimizer: AdamState | None = None,
                    rng: np.random.Generator | None = None,
                    codes: np.ndarray | None = None,
                    ) -> tuple[float, TeacherStudent]:
    """One teacher-label / student-update / EMA transaction over a batch."""
    label_config = label_config if label_config is not None else PseudoLabelConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    optimizer = optimizer if optimizer is not None else AdamState.for_params(ts.student)
    use_collab = method_uses_collab(config.method)
    label = pseudo_label_pipeline if method_uses_paul(config.method) \
        else confidence_only_pipeline

    student_batch = []
    for scene in batch:
        coin = 1.0 if rng.random() < 0.5 else 0.0  # flip shared across views
        weak = augment(scene.image, replace(WEAK, flip_probability=coin), rng)
        strong = augment(scene.image, replace(STRONG, flip_probability=coin), rng)
        teacher_out = forward(weak, ts.teacher, detector_config,
                              use_collab=use_collab, codes=codes)
        proposals = make_proposals(teacher_out.features, teacher_out.logits,
                                   teacher_out.boxes)
        classes, boxes = label(proposals, label_config).classes_and_boxes()
        student_batch.append((strong, classes, boxes))

    loss = _taped_step(student_batch, ts.student, optimizer,
                       config.learning_rate, detector_config, use_collab, codes)
    teacher = ema_update(ts.teacher, ts.student, config.alpha)
    return loss, TeacherStudent(ts.student, teacher, ts.alpha)


def adapt_target(scenes, source_params: dict[str, np.ndarray],
                 config: TrainConfig,
                 detector_config: DetectorConfig = DetectorConfig(),
                 label_config: PseudoLabelConfig | None = None,
                 loss_log: list | None = None,
                 capture: dict | None = None) -> TeacherStudent:
    """Full unlabeled-target adaptation run; pure function of its inputs.

    ``capture``, if given, receives the final ``"optimizer"`` state and
    ``"rng"`` generator so callers can persist them.
    """
    if not scenes:
        raise UsageError("target dataset is empty; generate data first")
    rng = np.random.default_rng(config.seed)
    ts = TeacherStudent.from_source(source_params, detector_config, rng,
                                    config.alpha)
    optimizer = AdamState.for_params(ts.student)
    codes = positional_codes(detector_config)
    for _ in range(config.steps):
        idx = rng.integers(0, len(scenes), config.batch_size)
        batch = [scenes[i] for i in idx]
        loss, ts = adaptation_step(batch, ts, config, detector_config,
                                   label_config, optimizer, rng, codes)
        if loss_log is not None:
            loss_log.append(loss)
    if capture is not None:
        capture.update(optimizer=optimizer, rng=rng)
    return ts
