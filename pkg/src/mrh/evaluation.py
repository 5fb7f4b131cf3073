"""Fold-based evaluation: detector confusion and three-system verification accuracy."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dct import feature_matrix
from .detector import ResolutionDetector, build_reference_sets
from .dictionary import TrainConfig, train
from .errors import ConfigError, FormatError, InvariantError, MRHError
from .image import GrayImage, degrade, read_pgm, resize_bilinear
from .matcher import CohortSet, RecognitionSystem, calibrate_threshold, route
from .signature import SignatureConfig, build_signature

log = logging.getLogger(__name__)

LABELS = ("same", "different")
SYSTEMS = ("A", "B", "dynamic")


@dataclass(frozen=True)
class PairRecord:
    fold: int
    path_1: str
    path_2: str
    label: str


def parse_pairs(data: bytes) -> list[PairRecord]:
    """Parse ``fold,path_1,path_2,label`` lines."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"pairs file is not valid UTF-8: {exc}") from None
    records = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4 or not parts[1] or not parts[2]:
            raise FormatError(f"line {lineno}: expected 'fold,path_1,path_2,label', got {line!r}")
        try:
            fold = int(parts[0])
        except ValueError:
            raise FormatError(f"line {lineno}: fold {parts[0]!r} is not an integer") from None
        if fold < 0:
            raise FormatError(f"line {lineno}: negative fold {fold}")
        if parts[3] not in LABELS:
            raise FormatError(f"line {lineno}: unknown label {parts[3]!r} (expected same|different)")
        records.append(PairRecord(fold, parts[1], parts[2], parts[3]))
    _check_folds(records)
    return records


def _check_folds(records):
    if not records:
        raise FormatError("pairs file contains no records")
    folds = sorted({r.fold for r in records})
    missing = sorted(set(range(folds[-1] + 1)) - set(folds))
    if missing:
        first = {}
        for lineno, r in enumerate(records, 1):
            first.setdefault(r.fold, lineno)
        raise FormatError(
            f"non-contiguous folds: missing {missing}; present folds {folds} "
            f"(first records at {', '.join(f'fold {f}: record {first[f]}' for f in folds)})"
        )


def parse_lfw_pairs(data: bytes, ext: str = "pgm") -> list[PairRecord]:
    """Adapter for the LFW ``pairs.txt`` layout (header ``<sets>\\t<n>``)."""
    lines = [ln for ln in data.decode("utf-8").splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty LFW pairs file")
    try:
        n_sets, n_per = (int(t) for t in lines[0].split())
    except ValueError:
        raise FormatError(f"line 1: bad LFW header {lines[0]!r}") from None
    expected = 1 + n_sets * 2 * n_per
    if len(lines) != expected:
        raise FormatError(f"LFW pairs file has {len(lines)} lines, header implies {expected}")

    def path(name, idx):
        return f"{name}/{name}_{int(idx):04d}.{ext}"

    records = []
    pos = 1
    for s in range(n_sets):
        for label in LABELS:
            for _ in range(n_per):
                tok = lines[pos].split()
                pos += 1
                try:
                    if label == "same" and len(tok) == 3:
                        records.append(PairRecord(s, path(tok[0], tok[1]), path(tok[0], tok[2]), label))
                    elif label == "different" and len(tok) == 4:
                        records.append(PairRecord(s, path(tok[0], tok[1]), path(tok[2], tok[3]), label))
                    else:
                        raise ValueError
                except ValueError:
                    raise FormatError(f"line {pos}: malformed LFW {label} pair {lines[pos - 1]!r}") from None
    return records


@dataclass(frozen=True)
class ExperimentConfig:
    resolutions: tuple = (64, 32, 16, 8)
    folds: int = 10
    seed: int = 0
    canonical: int = 64
    if_size_a: int = 64
    if_size_b: int = 32
    region_rows: int = 3
    region_cols: int = 3
    step: int = 4
    words_a: int = 1024
    words_b: int = 1024
    words_detector: int = 1024
    reference_size: int = 32
    reference_low_res: int = 16
    cohort_size: int = 32
    max_train_features: int = 100000
    em_iters: int = 100
    kmeans_iters: int = 10
    rel_tol: float = 1e-5
    detector_train_resolutions: tuple = (64, 16)
    system_train_resolutions: tuple = (64,)
    degrade_both: bool = False
    corpus_root: str = "."

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolutions)
        object.__setattr__(self, "resolutions", res)
        for name in ("detector_train_resolutions", "system_train_resolutions"):
            vals = tuple(int(r) for r in getattr(self, name))
            if not vals or any(r < 1 or r > self.canonical for r in vals):
                raise ConfigError(f"{name} must be non-empty with entries in [1, {self.canonical}]")
            object.__setattr__(self, name, vals)
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if not res:
            raise ConfigError("resolutions must be non-empty")
        bad = [r for r in res if r < 1 or r > self.canonical]
        if bad:
            raise ConfigError(f"resolutions {bad} outside [1, {self.canonical}]")
        if not self.if_size_a > self.if_size_b:
            raise ConfigError("if_size_a must exceed if_size_b")
        if min(self.reference_size, self.cohort_size, self.words_a, self.words_b, self.words_detector) < 1:
            raise ConfigError("sizes and word counts must be positive")

    @classmethod
    def desk(cls, **overrides) -> ExperimentConfig:
        base = dict(folds=3, words_a=128, words_b=128, words_detector=128, max_train_features=30000)
        base.update(overrides)
        return cls(**base)

    def signature_config(self, if_size: int) -> SignatureConfig:
        return SignatureConfig(if_size, self.region_rows, self.region_cols, self.step)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("resolutions", "detector_train_resolutions", "system_train_resolutions"):
            d[k] = list(d[k])
        return d


def _coerce(value: str, typ):
    if typ is bool:
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(value)
    if typ is tuple:
        return tuple(int(t) for t in value.replace(",", " ").split())
    return typ(value.strip())


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Flat ``key = value`` file; keys mirror :class:`ExperimentConfig` fields."""
    types = {f.name: type(f.default) for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(value, types[key])
        except ValueError:
            raise ConfigError(f"config line {lineno}: bad value {value!r} for {key}") from None
    values.update(overrides)
    return ExperimentConfig(**values)


def format_config(cfg: ExperimentConfig) -> str:
    out = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(map(str, v))
        elif isinstance(v, bool):
            v = str(v).lower()
        out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"


def fold_split(records, test_fold: int):
    """Train/test image paths for one fold; paths used by the test fold never train."""
    test = [r for r in records if r.fold == test_fold]
    train_recs = [r for r in records if r.fold != test_fold]
    test_paths = {p for r in test for p in (r.path_1, r.path_2)}
    train_paths = sorted({p for r in train_recs for p in (r.path_1, r.path_2)} - test_paths)
    train_recs = [r for r in train_recs if r.path_1 not in test_paths and r.path_2 not in test_paths]
    return train_recs, test, train_paths, sorted(test_paths)


class _Images:
    def __init__(self, root):
        self.root = Path(root)
        self._cache = {}

    def __call__(self, rel: str) -> GrayImage:
        img = self._cache.get(rel)
        if img is None:
            p = Path(rel)
            try:
                img = read_pgm(p if p.is_absolute() else self.root / p)
            except OSError as exc:
                raise MRHError(f"cannot read image {rel!r}: {exc}") from None
            except MRHError as exc:
                raise type(exc)(f"{rel}: {exc}") from None
            self._cache[rel] = img
        return img


def _pmap(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _train_dictionary(images, paths, if_size, words, cfg: ExperimentConfig, stream, threads, resolutions=None):
    resolutions = resolutions or (cfg.canonical,)

    def feats_of(p):
        base = resize_bilinear(images(p), cfg.canonical, cfg.canonical)
        views = [degrade(base, r, cfg.canonical) if r != cfg.canonical else base for r in resolutions]
        return np.concatenate([feature_matrix(resize_bilinear(v, if_size, if_size), cfg.step)[2] for v in views])

    feats = _pmap(feats_of, paths, threads)
    x = np.concatenate(feats)
    rng = np.random.default_rng([cfg.seed, *stream])
    if cfg.max_train_features and x.shape[0] > cfg.max_train_features:
        x = x[np.sort(rng.choice(x.shape[0], cfg.max_train_features, replace=False))]
    tc = TrainConfig(G=words, seed=int(rng.integers(2**31)), max_em_iters=cfg.em_iters,
                     rel_tol=cfg.rel_tol, kmeans_iters=cfg.kmeans_iters)
    return train(x, tc, threads)


def _sample(paths, k, cfg, stream, purpose):
    if len(paths) < k:
        raise ConfigError(f"need {k} training images for {purpose}, only {len(paths)} available")
    rng = np.random.default_rng([cfg.seed, *stream])
    return [paths[i] for i in np.sort(rng.choice(len(paths), k, replace=False))]


@dataclass
class FoldModels:
    detector: ResolutionDetector
    systems: dict = field(default_factory=dict)
    dictionaries: dict = field(default_factory=dict)


class _Probe:
    """Canonical-size probe images and signature caches for one fold."""

    def __init__(self, images, cfg: ExperimentConfig):
        self.images = images
        self.cfg = cfg
        self._img = {}
        self._sig = {}
        self._label = {}

    def image(self, path, r):
        key = (path, r)
        if key not in self._img:
            c = self.cfg.canonical
            base = resize_bilinear(self.images(path), c, c)
            self._img[key] = degrade(base, r, c) if r != c else base
        return self._img[key]

    def signature(self, system: RecognitionSystem, path, r):
        key = (system.name, path, r)
        if key not in self._sig:
            self._sig[key] = system.signature(self.image(path, r))
        return self._sig[key]

    def label(self, detector, path, r):
        key = (path, r)
        if key not in self._label:
            self._label[key] = detector.classify(self.image(path, r))
        return self._label[key]


def _pair_views(rec: PairRecord, r: int, cfg: ExperimentConfig):
    r1 = r if cfg.degrade_both else cfg.canonical
    return (rec.path_1, r1), (rec.path_2, r)


def build_detector(images, train_paths, cfg: ExperimentConfig, fold: int, threads=1, dict_a=None):
    shareable = (
        cfg.words_detector == cfg.words_a and cfg.if_size_a == cfg.canonical
        and cfg.detector_train_resolutions == cfg.system_train_resolutions
    )
    if dict_a is not None and shareable:
        d = dict_a
    else:
        d = _train_dictionary(images, train_paths, cfg.canonical, cfg.words_detector, cfg, (fold, 3), threads,
                              cfg.detector_train_resolutions)
    ref_paths = _sample(train_paths, cfg.reference_size, cfg, (fold, 4), "reference images")
    refs = build_reference_sets(
        [images(p) for p in ref_paths], d, cfg.signature_config(cfg.canonical).bind(d),
        canonical=cfg.canonical, low_res=cfg.reference_low_res,
    )
    return ResolutionDetector(refs, d)


def train_fold(images, train_recs, train_paths, cfg: ExperimentConfig, fold: int, threads=1) -> FoldModels:
    dicts = {
        "A": _train_dictionary(images, train_paths, cfg.if_size_a, cfg.words_a, cfg, (fold, 1), threads,
                               cfg.system_train_resolutions),
        "B": _train_dictionary(images, train_paths, cfg.if_size_b, cfg.words_b, cfg, (fold, 2), threads,
                               cfg.system_train_resolutions),
    }
    detector = build_detector(images, train_paths, cfg, fold, threads, dict_a=dicts["A"])
    cohort_paths = _sample(train_paths, cfg.cohort_size, cfg, (fold, 5), "cohorts")
    models = FoldModels(detector, dictionaries=dicts)

    probe = _Probe(images, cfg)
    for name, if_size in (("A", cfg.if_size_a), ("B", cfg.if_size_b)):
        scfg = cfg.signature_config(if_size).bind(dicts[name])
        cohort_sigs = _pmap(
            lambda p: build_signature(probe.image(p, cfg.canonical), dicts[name], scfg), cohort_paths, threads
        )
        # provisional threshold; replaced after calibration
        system = RecognitionSystem(scfg, dicts[name], CohortSet(tuple(cohort_sigs)), 1.0, name)
        scores = _score_pairs(probe, system, train_recs, cfg, threads)
        threshold = calibrate_threshold(scores)
        models.systems[name] = RecognitionSystem(scfg, dicts[name], system.cohorts, threshold, name)
    return models


def _score_pairs(probe: _Probe, system, recs, cfg, threads):
    views = [(rec, _pair_views(rec, r, cfg)) for r in cfg.resolutions for rec in recs]
    needed = sorted({v for _, pair in views for v in pair})
    _pmap(lambda v: probe.signature(system, *v), needed, threads)
    return [
        (system.score(probe.signature(system, *v1), probe.signature(system, *v2)), rec.label)
        for rec, (v1, v2) in views
    ]


def _confusion(labels):
    a = 100.0 * sum(1 for lab in labels if lab == "A") / len(labels)
    return {"a_pct": a, "b_pct": 100.0 - a}


def evaluate_detector_fold(detector, test_recs, cfg, images, threads=1):
    """Per-resolution A/B percentages for the second image of each test pair."""
    probe = _Probe(images, cfg)
    out = {}
    for r in cfg.resolutions:
        labels = _pmap(lambda rec: probe.label(detector, rec.path_2, r), test_recs, threads)
        out[r] = _confusion(labels)
    return out


def evaluate_fold(models: FoldModels, test_recs, cfg: ExperimentConfig, images, threads=1):
    """Per-pair decisions for every system and resolution on one test fold."""
    probe = _Probe(images, cfg)
    decisions = {s: {} for s in SYSTEMS}
    confusion = {}
    for r in cfg.resolutions:
        views = [_pair_views(rec, r, cfg) for rec in test_recs]
        for name in ("A", "B"):
            sysm = models.systems[name]
            needed = sorted({v for pair in views for v in pair})
            _pmap(lambda v: probe.signature(sysm, *v), needed, threads)
            decisions[name][r] = [
                sysm.decide(sysm.score(probe.signature(sysm, *v1), probe.signature(sysm, *v2))).decision
                for v1, v2 in views
            ]
        needed = sorted({v for pair in views for v in pair})
        _pmap(lambda v: probe.label(models.detector, *v), needed, threads)
        routes = [route(probe.label(models.detector, *v1), probe.label(models.detector, *v2)) for v1, v2 in views]
        decisions["dynamic"][r] = [decisions[lab][r][i] for i, lab in enumerate(routes)]
        confusion[r] = _confusion([probe.label(models.detector, *v2) for _, v2 in views])
    return decisions, confusion


def pair_accuracy(decisions, records) -> float:
    correct = sum(1 for d, rec in zip(decisions, records) if d == rec.label)
    return correct / len(records)


@dataclass(frozen=True)
class Report:
    config: dict
    detector_confusion: dict
    accuracy: dict
    thresholds: dict
    provenance: dict
    per_fold: dict = field(default_factory=dict)

    def __post_init__(self):
        for system, rows in self.accuracy.items():
            vals = [v for k, v in rows.items() if k != "average"]
            for v in vals + [rows.get("average", 0.0)]:
                if not (0.0 <= v <= 1.0) or math.isnan(v):
                    raise InvariantError(f"accuracy {v!r} for system {system} outside [0, 1]")
            if vals and "average" in rows and abs(rows["average"] - float(np.mean(vals))) > 1e-12:
                raise InvariantError(f"average for system {system} is not the mean of its rows")
        for r, row in self.detector_confusion.items():
            if abs(row["a_pct"] + row["b_pct"] - 100.0) > 1e-9:
                raise InvariantError(f"detector confusion row {r} does not sum to 100%")

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "detector_confusion": self.detector_confusion,
            "accuracy": self.accuracy,
            "thresholds": self.thresholds,
            "provenance": self.provenance,
            "per_fold": self.per_fold,
        }


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.10g}")
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_report(report: Report) -> bytes:
    """Canonical JSON: sorted keys, at most 10 significant digits per number."""
    text = json.dumps(_canonical(report.to_dict()), sort_keys=True, indent=2, allow_nan=False)
    return (text + "\n").encode("utf-8")


ACCURACY_DECIMALS = 8


def _mean_rows(per_fold_values: list[dict], resolutions):
    # quantized so the average of the emitted rows is itself exactly emittable
    return {r: round(float(np.mean([fv[r] for fv in per_fold_values])), ACCURACY_DECIMALS) for r in resolutions}


def _provenance(cfg, records, failures):
    return {
        "package_version": __version__,
        "pairs": len(records),
        "folds_completed": cfg.folds - len(failures),
        "failures": failures,
        "cohort_size": cfg.cohort_size,
        "notes": "cohort size and provenance chosen by this tool; decision rule same iff d_norm < threshold",
    }


def _check_records(records, cfg):
    n = max(r.fold for r in records) + 1
    if n != cfg.folds:
        raise ConfigError(f"pairs file has {n} folds, config expects {cfg.folds}")


def run_detector_experiment(cfg: ExperimentConfig, records, threads: int = 1) -> dict:
    """Detector confusion table: resolution -> {a_pct, b_pct}, averaged over folds."""
    _check_records(records, cfg)
    images = _Images(cfg.corpus_root)
    per_fold = []
    for k in range(cfg.folds):
        train_recs, test_recs, train_paths, _ = fold_split(records, k)
        detector = build_detector(images, train_paths, cfg, k, threads)
        per_fold.append(evaluate_detector_fold(detector, test_recs, cfg, images, threads))
        log.info("fold %d detector: %s", k, per_fold[-1])
    return {
        r: {"a_pct": float(np.mean([f[r]["a_pct"] for f in per_fold])),
            "b_pct": float(np.mean([f[r]["b_pct"] for f in per_fold]))}
        for r in cfg.resolutions
    }


def run_verification_experiment(cfg: ExperimentConfig, records, threads: int = 1) -> Report:
    _check_records(records, cfg)
    images = _Images(cfg.corpus_root)
    fold_acc = {s: [] for s in SYSTEMS}
    fold_conf = []
    thresholds = {}
    failures = []
    per_fold = {}
    for k in range(cfg.folds):
        train_recs, test_recs, train_paths, _ = fold_split(records, k)
        try:
            models = train_fold(images, train_recs, train_paths, cfg, k, threads)
            decisions, confusion = evaluate_fold(models, test_recs, cfg, images, threads)
        except MRHError as exc:
            log.warning("fold %d failed: %s", k, exc)
            failures.append({"fold": k, "error": str(exc)})
            continue
        thresholds[k] = {name: models.systems[name].threshold for name in ("A", "B")}
        accs = {s: {r: pair_accuracy(decisions[s][r], test_recs) for r in cfg.resolutions} for s in SYSTEMS}
        for s in SYSTEMS:
            fold_acc[s].append(accs[s])
        fold_conf.append(confusion)
        per_fold[k] = {"accuracy": accs, "detector_confusion": confusion}
        log.info("fold %d accuracy: %s", k, accs)
    if not fold_conf:
        raise MRHError(f"all folds failed: {failures}")

    accuracy = {}
    for s in SYSTEMS:
        rows = _mean_rows(fold_acc[s], cfg.resolutions)
        rows["average"] = float(np.mean([rows[r] for r in cfg.resolutions]))
        accuracy[s] = rows
    confusion = {
        r: {"a_pct": float(np.mean([c[r]["a_pct"] for c in fold_conf])),
            "b_pct": float(np.mean([c[r]["b_pct"] for c in fold_conf]))}
        for r in cfg.resolutions
    }
    for row in confusion.values():
        row["b_pct"] = 100.0 - row["a_pct"]
    return Report(cfg.to_dict(), confusion, accuracy, thresholds, _provenance(cfg, records, failures), per_fold)
