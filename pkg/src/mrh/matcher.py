"""Cohort-normalized matching, threshold calibration and dynamic system selection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .dictionary import VisualDictionary
from .errors import ConfigError, InvariantError, MRHError
from .image import GrayImage
from .signature import FaceSignature, SignatureConfig, build_signature, d_raw, d_raw_many

Label = Literal["A", "B"]
Decision = Literal["same", "different"]
DECISIONS = ("same", "different")


class DegenerateCohortError(MRHError, ZeroDivisionError):
    """Both faces sit at zero distance from every cohort face."""


@dataclass(frozen=True)
class CohortSet:
    cohorts: tuple

    def __post_init__(self):
        cohorts = tuple(self.cohorts)
        if not cohorts:
            raise ConfigError("cohort set is empty")
        ids = {c.config_id for c in cohorts}
        if len(ids) != 1:
            raise ConfigError(f"cohort signatures mix {len(ids)} configurations")
        object.__setattr__(self, "cohorts", cohorts)

    @property
    def M(self) -> int:
        return len(self.cohorts)

    @property
    def config_id(self) -> int:
        return self.cohorts[0].config_id


def d_norm(x: FaceSignature, y: FaceSignature, cohorts: CohortSet) -> float:
    """Raw distance divided by the mean distance of both faces to the cohort."""
    num = d_raw(x, y)
    cs = list(cohorts.cohorts)
    denom = (np.sum(d_raw_many(x, cs)) + np.sum(d_raw_many(y, cs))) / (2 * len(cs))
    if denom == 0.0:
        raise DegenerateCohortError("both faces coincide with every cohort face; normalization is undefined")
    return float(num / denom)


def _accuracies(values: np.ndarray, same: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    # rule: same iff value < t
    order = np.argsort(values, kind="stable")
    v = values[order]
    s = same[order]
    n_same_below = np.concatenate([[0], np.cumsum(s)])
    n_diff_below = np.concatenate([[0], np.cumsum(~s)])
    k = np.searchsorted(v, thresholds, side="left")
    total_diff = n_diff_below[-1]
    correct = n_same_below[k] + (total_diff - n_diff_below[k])
    return correct / len(values)


def threshold_candidates(values) -> np.ndarray:
    u = np.unique(np.asarray(values, dtype=np.float64))
    mids = (u[:-1] + u[1:]) / 2.0
    # any cut in (0, min] decides alike; stay positive so distances keep a valid threshold
    low = u[0] / 2.0 if u[0] > 0 else u[0] - 1.0
    return np.concatenate([[low], mids, [u[-1] + 1.0]])


def calibrate_threshold(scores: Sequence) -> float:
    """Accuracy-maximizing cut for the rule ``same iff score < t``.

    ``scores`` is a sequence of ``(value, label)`` with label ``"same"`` or
    ``"different"``. Ties go to the smallest threshold.
    """
    if not scores:
        raise ConfigError("no scores to calibrate on")
    values = np.array([float(v) for v, _ in scores])
    labels = [lab for _, lab in scores]
    bad = [lab for lab in labels if lab not in DECISIONS]
    if bad:
        raise ConfigError(f"unknown label {bad[0]!r}")
    same = np.array([lab == "same" for lab in labels])
    if same.all() or not same.any():
        raise ConfigError("calibration needs at least one score of each label")
    cand = threshold_candidates(values)
    acc = _accuracies(values, same, cand)
    return float(cand[int(np.argmax(acc))])


def accuracy_at(scores: Sequence, threshold: float) -> float:
    values = np.array([float(v) for v, _ in scores])
    same = np.array([lab == "same" for _, lab in scores])
    return float(_accuracies(values, same, np.array([threshold]))[0])


@dataclass(frozen=True)
class VerificationResult:
    selected: Label
    distance: float
    decision: Decision


@dataclass(frozen=True)
class RecognitionSystem:
    """One MRH chain at a fixed intermediate format size."""

    cfg: SignatureConfig
    dictionary: VisualDictionary
    cohorts: CohortSet
    threshold: float
    name: Label = "A"

    def __post_init__(self):
        cfg = self.cfg if self.cfg.dict_id else self.cfg.bind(self.dictionary)
        if cfg.dict_id != self.dictionary.digest():
            raise ConfigError("system config is bound to a different dictionary")
        object.__setattr__(self, "cfg", cfg)
        if self.cohorts.config_id != cfg.config_id:
            raise ConfigError("cohort signatures were built under a different configuration")
        if not self.threshold > 0:
            raise InvariantError(f"threshold must be positive, got {self.threshold}")

    def signature(self, img: GrayImage) -> FaceSignature:
        return build_signature(img, self.dictionary, self.cfg)

    def score(self, x: FaceSignature, y: FaceSignature) -> float:
        return d_norm(x, y, self.cohorts)

    def decide(self, distance: float) -> VerificationResult:
        return VerificationResult(self.name, distance, "same" if distance < self.threshold else "different")


def verify(sys: RecognitionSystem, img1: GrayImage, img2: GrayImage) -> VerificationResult:
    return sys.decide(sys.score(sys.signature(img1), sys.signature(img2)))


def route(label1: Label, label2: Label) -> Label:
    """System A only when both images look high resolution."""
    return "A" if (label1 == "A" and label2 == "A") else "B"


@dataclass(frozen=True)
class DynamicSystem:
    system_a: RecognitionSystem
    system_b: RecognitionSystem
    detector: object  # ResolutionDetector; typed loosely to avoid an import cycle

    def __post_init__(self):
        if not self.system_a.cfg.if_size > self.system_b.cfg.if_size:
            raise ConfigError("system A must use a larger intermediate format than system B")

    def select(self, img1: GrayImage, img2: GrayImage) -> RecognitionSystem:
        label = route(self.detector.classify(img1), self.detector.classify(img2))
        return self.system_a if label == "A" else self.system_b


def dynamic_verify(dyn: DynamicSystem, img1: GrayImage, img2: GrayImage) -> VerificationResult:
    return verify(dyn.select(img1, img2), img1, img2)
