"""Command-line entry point (``mrh``).

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .dct import feature_matrix
from .detector import build_reference_sets, detect, format_reference_manifest, load_reference_sets
from .dictionary import TrainConfig, load_dict, save_dict, train
from .errors import ConfigError, FormatError, MRHError
from .evaluation import ExperimentConfig, format_config, parse_config, parse_lfw_pairs, parse_pairs
from .evaluation import run_verification_experiment, write_report
from .image import degrade, read_pgm, resize_bilinear, save_pgm
from .matcher import CohortSet, d_norm
from .signature import SignatureConfig, build_signature, d_raw, read_signature, save_signature

log = logging.getLogger("mrh")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def atomic_write(path, data: bytes):
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def read_manifest(path) -> list[Path]:
    """Newline-delimited paths; relative entries resolve against the manifest's directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MRHError(f"cannot read manifest {path}: {exc.strerror}") from None
    out = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            p = Path(line)
            out.append(p if p.is_absolute() else path.parent / p)
    return out


def _read_bytes(path, what):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise MRHError(f"cannot read {what} {path}: {exc.strerror}") from None


def _image(path):
    try:
        return read_pgm(path)
    except OSError as exc:
        raise MRHError(f"cannot read image {path}: {exc.strerror}") from None
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _dictionary(path):
    try:
        return load_dict(_read_bytes(path, "dictionary"))
    except MRHError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def _regions(text):
    try:
        rows, cols = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"regions must look like RxC, got {text!r}") from None
    if rows < 1 or cols < 1:
        raise argparse.ArgumentTypeError(f"region grid must be at least 1x1, got {text!r}")
    return rows, cols


def _sig_config(args) -> SignatureConfig:
    try:
        return SignatureConfig(args.if_size, args.regions[0], args.regions[1], args.step)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_degrade(args):
    if args.res < 1 or args.res > args.canonical:
        raise UsageError(f"--res {args.res} must be in [1, --canonical {args.canonical}]")
    img = _image(args.input)
    atomic_write(args.out, save_pgm(degrade(img, args.res, args.canonical)))


def cmd_train_dict(args):
    paths = read_manifest(args.images)
    if not paths:
        raise MRHError(f"image manifest {args.images} is empty")
    feats = [feature_matrix(resize_bilinear(_image(p), args.if_size, args.if_size), args.step)[2] for p in paths]
    x = np.concatenate(feats)
    if x.shape[0] < args.words:
        raise MRHError(f"insufficient data: {x.shape[0]} feature vectors from {args.images} for {args.words} words")
    cfg = TrainConfig(G=args.words, seed=args.seed, max_em_iters=args.max_iters)
    log.info("training %d-word dictionary on %d features", args.words, x.shape[0])
    atomic_write(args.out, save_dict(train(x, cfg, args.threads)))


def cmd_signature(args):
    d = _dictionary(args.dict)
    sig = build_signature(_image(args.image), d, _sig_config(args).bind(d))
    atomic_write(args.out, save_signature(sig))


def cmd_compare(args):
    d = _dictionary(args.dict)
    paths = read_manifest(args.cohorts)
    if not paths:
        raise UsageError(f"cohort manifest {args.cohorts} is empty")
    cfg = _sig_config(args).bind(d)
    cohorts = CohortSet(tuple(read_signature(p) for p in paths))
    x = build_signature(_image(args.a), d, cfg)
    y = build_signature(_image(args.b), d, cfg)
    print(f"d_raw={d_raw(x, y):.10g}")
    print(f"d_norm={d_norm(x, y, cohorts):.10g}")


def cmd_detect(args):
    d = _dictionary(args.dict)
    cfg = _sig_config(args).bind(d)
    try:
        refs = load_reference_sets(args.refs, cfg)
    except FormatError as exc:
        raise UsageError(f"{args.refs}: {exc}") from None
    except OSError as exc:
        raise UsageError(f"cannot read reference manifest {args.refs}: {exc.strerror}") from None
    res = detect(refs, _image(args.image), d, args.canonical)
    print(f"label={res.label} d_avg_A={res.d_avg_a:.10g} d_avg_B={res.d_avg_b:.10g}")


def cmd_build_refs(args):
    d = _dictionary(args.dict)
    cfg = _sig_config(args).bind(d)
    paths = read_manifest(args.images)
    if not paths:
        raise UsageError(f"image manifest {args.images} is empty")
    refs = build_reference_sets([_image(p) for p in paths], d, cfg, args.canonical, args.low_res)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names_a, names_b = [], []
    for i, (sa, sb) in enumerate(zip(refs.set_a, refs.set_b)):
        names_a.append(f"ref_a_{i:04d}.sig")
        names_b.append(f"ref_b_{i:04d}.sig")
        atomic_write(out / names_a[-1], save_signature(sa))
        atomic_write(out / names_b[-1], save_signature(sb))
    atomic_write(out / "refs.txt", format_reference_manifest(names_a, names_b).encode())


def cmd_evaluate(args):
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise MRHError(f"cannot read config {args.config}: {exc.strerror}") from None
    try:
        cfg = parse_config(text, corpus_root=str(args.corpus))
    except (ConfigError, TypeError) as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    data = _read_bytes(args.pairs, "pairs file")
    try:
        records = parse_lfw_pairs(data, args.lfw_ext) if args.lfw else parse_pairs(data)
    except FormatError as exc:
        raise FormatError(f"{args.pairs}: {exc}") from None
    report = run_verification_experiment(cfg, records, args.threads)
    atomic_write(args.out, write_report(report))


def cmd_make_corpus(args):
    from .corpus import format_pairs, generate_corpus, make_pairs

    out = Path(args.out_dir)
    layout = generate_corpus(out, args.identities, args.images, args.seed)
    records = make_pairs(layout, args.folds, args.pairs_per_fold, args.seed)
    atomic_write(out / "pairs.csv", format_pairs(records).encode())
    cfg = ExperimentConfig.desk(folds=args.folds, seed=args.seed)
    text = format_config(cfg).replace(f"corpus_root = {cfg.corpus_root}\n", "")
    atomic_write(out / "desk.cfg", text.encode())
    all_paths = [p for name in sorted(layout) for p in layout[name]]
    atomic_write(out / "images.txt", ("\n".join(all_paths) + "\n").encode())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrh", description="Multi-region histogram face verification with resolution detection.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    def sig_flags(sp, with_canonical=False):
        sp.add_argument("--regions", type=_regions, default=(3, 3), metavar="RxC", help="region grid")
        sp.add_argument("--step", type=int, default=4, help="block step in pixels")
        sp.add_argument("--if-size", type=int, default=64, help="intermediate format size")
        if with_canonical:
            sp.add_argument("--canonical", type=int, default=64, help="canonical detector image size")

    def threads(sp):
        sp.add_argument("--threads", type=int, default=1, help="worker threads; output does not depend on it")

    s = sub.add_parser("degrade", help="reduce underlying resolution, keep canonical size", formatter_class=fmt)
    s.add_argument("--in", dest="input", required=True, help="input PGM")
    s.add_argument("--out", required=True, help="output PGM")
    s.add_argument("--res", type=int, required=True, help="underlying resolution")
    s.add_argument("--canonical", type=int, default=64, help="output size")
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("train-dict", help="train the visual dictionary", formatter_class=fmt)
    s.add_argument("--images", required=True, help="manifest of PGM paths")
    s.add_argument("--out", required=True, help="dictionary file to write")
    s.add_argument("--words", type=int, default=1024, help="number of Gaussian components")
    s.add_argument("--if-size", type=int, default=64, help="intermediate format size")
    s.add_argument("--step", type=int, default=4, help="block step in pixels")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.add_argument("--max-iters", type=int, default=100, help="EM iteration cap")
    threads(s)
    s.set_defaults(func=cmd_train_dict)

    s = sub.add_parser("signature", help="compute a face signature", formatter_class=fmt)
    s.add_argument("--dict", required=True, help="dictionary file")
    s.add_argument("--image", required=True, help="input PGM")
    s.add_argument("--out", required=True, help="signature file to write")
    sig_flags(s)
    threads(s)
    s.set_defaults(func=cmd_signature)

    s = sub.add_parser("compare", help="raw and cohort-normalized distance of two images", formatter_class=fmt)
    s.add_argument("--dict", required=True, help="dictionary file")
    s.add_argument("--cohorts", required=True, help="manifest of cohort signature files")
    s.add_argument("--a", required=True, help="first PGM")
    s.add_argument("--b", required=True, help="second PGM")
    sig_flags(s)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("detect", help="classify an image's underlying resolution as A or B", formatter_class=fmt)
    s.add_argument("--dict", required=True, help="detector dictionary file")
    s.add_argument("--refs", required=True, help="reference manifest with [A] and [B] sections")
    s.add_argument("--image", required=True, help="probe PGM")
    sig_flags(s, with_canonical=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("build-refs", help="build detector reference signatures and manifest", formatter_class=fmt)
    s.add_argument("--dict", required=True, help="detector dictionary file")
    s.add_argument("--images", required=True, help="manifest of high-resolution PGMs")
    s.add_argument("--out-dir", required=True, help="directory for signatures and refs.txt")
    s.add_argument("--low-res", type=int, default=16, help="underlying resolution of the B set")
    sig_flags(s, with_canonical=True)
    s.set_defaults(func=cmd_build_refs)

    s = sub.add_parser("evaluate", help="run the fold-based verification experiment", formatter_class=fmt)
    s.add_argument("--config", required=True, help="flat key = value experiment config")
    s.add_argument("--pairs", required=True, help="pairs CSV (fold,path_1,path_2,label)")
    s.add_argument("--corpus", required=True, help="root directory for image paths")
    s.add_argument("--out", required=True, help="report JSON to write")
    s.add_argument("--lfw", action="store_true", help="read --pairs in the LFW pairs.txt layout")
    s.add_argument("--lfw-ext", default="pgm", help="image extension for LFW-layout paths")
    threads(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("make-corpus", help="write a synthetic desk-scale corpus", formatter_class=fmt)
    s.add_argument("--out-dir", required=True, help="output directory")
    s.add_argument("--identities", type=int, default=48, help="number of synthetic persons")
    s.add_argument("--images", type=int, default=8, help="images per person")
    s.add_argument("--folds", type=int, default=3, help="person-disjoint folds")
    s.add_argument("--pairs-per-fold", type=int, default=300, help="pairs per fold, half same-person")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.set_defaults(func=cmd_make_corpus)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print(f"mrh {args.command}: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except UsageError as exc:
        print(f"mrh {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (MRHError, ValueError, OSError) as exc:
        print(f"mrh {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
