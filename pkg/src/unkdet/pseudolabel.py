"""Unknown-object pseudo-labeling from teacher proposals.

Proposals confidently predicting a known class become known pseudo-labels.
The remaining proposals are scored by how well they align, after projection
onto the principal axes of the known features, with the known set: a
proposal whose mean cosine similarity reaches the known-set average (or
whose unknown-class confidence clears a threshold) is labeled unknown.

With fewer than two known proposals the axis statistics are undefined and
selection falls back to the confidence test alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import instrument
from .errors import DegenerateInputError, ParameterError, ShapeError
from .linalg import cosine_similarity, svd
from .model import Box, Proposal


@dataclass(frozen=True)
class PseudoLabelConfig:
    known_threshold: float = 0.3
    epsilon: float = 0.3        # unknown-class confidence floor
    p_max: int = 8              # axes kept: min(p_max, N_k, D)
    center: bool = False        # subtract the known-feature mean before the SVD
    mask_mode: str = "or"       # how the two masks merge: "or" | "and"

    def __post_init__(self):
        if not 0.0 < self.known_threshold < 1.0:
            raise ParameterError("known_threshold must lie in (0,1)")
        if not 0.0 < self.epsilon < 1.0:
            raise ParameterError("epsilon must lie in (0,1)")
        if self.p_max < 1:
            raise ParameterError("p_max must be positive")
        if self.mask_mode not in ("or", "and"):
            raise ParameterError(f"unknown mask_mode {self.mask_mode!r}")


@dataclass(frozen=True)
class PseudoLabel:
    box: Box
    class_id: int
    proposal_index: int


@dataclass(frozen=True)
class PseudoLabelSet:
    known: list[PseudoLabel] = field(default_factory=list)
    unknown: list[PseudoLabel] = field(default_factory=list)

    def classes_and_boxes(self) -> tuple[np.ndarray, np.ndarray]:
        """Label arrays (known first) in the form the detection loss takes."""
        labels = self.known + self.unknown
        classes = np.array([lab.class_id for lab in labels], dtype=np.intp)
        boxes = np.array([lab.box.as_array() for lab in labels]).reshape(-1, 4)
        return classes, boxes

    def __len__(self) -> int:
        return len(self.known) + len(self.unknown)


@dataclass(frozen=True)
class PrincipalAxes:
    axes: np.ndarray      # p x D, orthonormal rows
    offset: np.ndarray    # subtracted before projection; zeros when uncentered

    @property
    def count(self) -> int:
        return self.axes.shape[0]

    def project(self, features: np.ndarray) -> np.ndarray:
        return (features - self.offset) @ self.axes.T


@dataclass(frozen=True)
class ObjectnessScores:
    s_kn: np.ndarray
    s_re: np.ndarray
    delta: float


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def assign_known(proposals: list[Proposal], threshold: float
                 ) -> tuple[list[PseudoLabel], np.ndarray]:
    """Split proposals into known pseudo-labels and remaining indices.

    A proposal is known when its best known-class probability reaches the
    threshold; its label is that argmax class with the predicted box kept
    verbatim.
    """
    if not 0.0 < threshold < 1.0:
        raise ParameterError("threshold must lie in (0,1)")
    known: list[PseudoLabel] = []
    remaining: list[int] = []
    for i, prop in enumerate(proposals):
        known_probs = _sigmoid(prop.logits[:-1])
        if known_probs.max() >= threshold:
            known.append(PseudoLabel(box=prop.box,
                                     class_id=int(known_probs.argmax()) + 1,
                                     proposal_index=i))
        else:
            remaining.append(i)
    return known, np.asarray(remaining, dtype=np.intp)


def principal_axes(f_kn: np.ndarray, p_max: int, center: bool = False) -> PrincipalAxes:
    """Top right singular vectors of the known features, p = min(p_max, N_k, D)."""
    f_kn = np.asarray(f_kn, dtype=np.float64)
    if f_kn.ndim != 2:
        raise ShapeError("known features must be 2-D")
    n_k, dim = f_kn.shape
    if n_k < 2:
        raise DegenerateInputError(f"need at least 2 known features, got {n_k}")
    if p_max < 1:
        raise ParameterError("p_max must be positive")
    instrument.bump("paul.principal_axes")
    offset = f_kn.mean(axis=0) if center else np.zeros(dim)
    p = min(p_max, n_k, dim)
    return PrincipalAxes(axes=svd(f_kn - offset).vt[:p], offset=offset)


def objectness_scores(f_kn: np.ndarray, f_re: np.ndarray,
                      axes: PrincipalAxes) -> ObjectnessScores:
    """Mean projected cosine similarity against the known set.

    Known proposals are scored against the other knowns (divisor N_k - 1);
    remaining proposals against all knowns (divisor N_k).  The threshold
    delta is the mean known score.
    """
    f_kn = np.asarray(f_kn, dtype=np.float64)
    f_re = np.asarray(f_re, dtype=np.float64).reshape(-1, f_kn.shape[1])
    n_k = f_kn.shape[0]
    if n_k < 2:
        raise DegenerateInputError(f"need at least 2 known features, got {n_k}")
    proj_kn = axes.project(f_kn)
    proj_re = axes.project(f_re)
    s_kn = np.array([
        sum(cosine_similarity(proj_kn[i], proj_kn[j]) for j in range(n_k) if j != i)
        / (n_k - 1)
        for i in range(n_k)
    ])
    s_re = np.array([
        sum(cosine_similarity(row, proj_kn[j]) for j in range(n_k)) / n_k
        for row in proj_re
    ])
    return ObjectnessScores(s_kn=s_kn, s_re=s_re, delta=float(s_kn.mean()))


def unknown_mask(scores: ObjectnessScores | None, unknown_conf: np.ndarray,
                 epsilon: float, mask_mode: str = "or") -> np.ndarray:
    """Merge the objectness and confidence tests into one selection mask.

    ``scores=None`` marks the degenerate known set; only the confidence
    test applies then.
    """
    if not 0.0 < epsilon < 1.0:
        raise ParameterError("epsilon must lie in (0,1)")
    unknown_conf = np.asarray(unknown_conf, dtype=np.float64).reshape(-1)
    m_conf = unknown_conf >= epsilon
    if scores is None:
        return m_conf
    if scores.s_re.shape[0] != unknown_conf.shape[0]:
        raise ShapeError("objectness scores and confidences disagree in length")
    m_obj = scores.s_re >= scores.delta
    if mask_mode == "and":
        return m_obj & m_conf
    return m_obj | m_conf


def assign_unknown(proposals: list[Proposal], remaining_indices: np.ndarray,
                   mask: np.ndarray) -> list[PseudoLabel]:
    """Emit an unknown-class pseudo-label for each selected remaining proposal."""
    remaining_indices = np.asarray(remaining_indices, dtype=np.intp)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] != remaining_indices.shape[0]:
        raise ShapeError("mask length must match the remaining set")
    labels = []
    for idx, keep in zip(remaining_indices, mask):
        if keep:
            prop = proposals[idx]
            labels.append(PseudoLabel(box=prop.box,
                                      class_id=len(prop.logits),
                                      proposal_index=int(idx)))
    return labels


def pseudo_label_pipeline(proposals: list[Proposal],
                          config: PseudoLabelConfig) -> PseudoLabelSet:
    """Full per-image labeling: known split, axis scores, mask, unknown labels."""
    label_set, _ = _run_pipeline(proposals, config)
    return label_set


def pipeline_debug_record(proposals: list[Proposal],
                          config: PseudoLabelConfig) -> dict:
    """The pipeline's intermediate quantities as a JSON-ready record."""
    _, record = _run_pipeline(proposals, config)
    return record


def confidence_only_pipeline(proposals: list[Proposal],
                             config: PseudoLabelConfig) -> PseudoLabelSet:
    """Baseline labeling: knowns by threshold, unknowns by confidence alone.

    A remaining proposal becomes unknown iff its unknown-class sigmoid
    reaches epsilon; no principal-axis machinery is involved.
    """
    instrument.bump("label.confidence_only")
    known, remaining = assign_known(proposals, config.known_threshold)
    unknown_conf = np.array([_sigmoid(proposals[i].logits[-1]) for i in remaining])
    mask = unknown_mask(None, unknown_conf, config.epsilon, config.mask_mode)
    unknown = assign_unknown(proposals, remaining, mask)
    return PseudoLabelSet(known=known, unknown=unknown)


def _run_pipeline(proposals, config):
    instrument.bump("paul.pipeline")
    known, remaining = assign_known(proposals, config.known_threshold)
    unknown_conf = np.array([_sigmoid(proposals[i].logits[-1]) for i in remaining])
    scores = None
    if len(known) >= 2:
        f_kn = np.stack([proposals[lab.proposal_index].feature for lab in known])
        f_re = np.array([proposals[i].feature for i in remaining]).reshape(
            -1, f_kn.shape[1]
        )
        axes = principal_axes(f_kn, config.p_max, config.center)
        scores = objectness_scores(f_kn, f_re, axes)
    mask = unknown_mask(scores, unknown_conf, config.epsilon, config.mask_mode)
    unknown = assign_unknown(proposals, remaining, mask)
    record = {
        "n_known": len(known),
        "n_remaining": int(remaining.size),
        "s_kn": [] if scores is None else [float(v) for v in scores.s_kn],
        "s_re": [] if scores is None else [float(v) for v in scores.s_re],
        "delta": None if scores is None else scores.delta,
        "mask_conf": [bool(v) for v in unknown_conf >= config.epsilon],
        "mask": [bool(v) for v in mask],
        "known_indices": [lab.proposal_index for lab in known],
        "unknown_indices": [lab.proposal_index for lab in unknown],
    }
    return PseudoLabelSet(known=known, unknown=unknown), record
