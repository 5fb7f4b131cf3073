import numpy as np
import pytest

from mrh.detector import (
    ReferenceSets, ResolutionDetector, build_reference_sets, classify, d_avg, detect, format_reference_manifest,
    load_reference_sets, parse_reference_manifest,
)
from mrh.errors import ConfigError, FormatError
from mrh.image import GrayImage, degrade
from mrh.signature import FaceSignature, SignatureConfig, build_signature, save_signature


def test_reference_set_sizes(face_images, detector_dict):
    refs = build_reference_sets(face_images[:32], detector_dict, SignatureConfig())
    assert len(refs.set_a) == len(refs.set_b) == 32


def test_reference_sets_deterministic(face_images, detector_dict):
    a = build_reference_sets(face_images[:4], detector_dict, SignatureConfig())
    b = build_reference_sets(face_images[:4], detector_dict, SignatureConfig())
    assert a == b


def test_reference_sets_from_constant_image(detector_dict):
    refs = build_reference_sets([GrayImage(np.full((64, 64), 0.5))], detector_dict, SignatureConfig())
    for s in refs.set_a + refs.set_b:
        np.testing.assert_allclose(s.regions.sum(axis=1), 1, atol=1e-9)


def test_reference_sets_reject_empty(detector_dict):
    with pytest.raises(ConfigError):
        build_reference_sets([], detector_dict, SignatureConfig())


def test_d_avg_examples():
    q = FaceSignature(np.array([[1.0, 0.0]]), 3)
    assert d_avg(q, [q]) == 0.0
    x = FaceSignature(np.array([[0.9, 0.1]]), 3)  # d_raw(q, x) = 0.2
    y = FaceSignature(np.array([[0.8, 0.2]]), 3)  # d_raw(q, y) = 0.4
    assert d_avg(q, [x, y]) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ConfigError):
        d_avg(q, [])


def test_tie_goes_to_a(detector_dict):
    img = GrayImage(np.random.default_rng(0).random((64, 64)))
    cfg = SignatureConfig().bind(detector_dict)
    s = build_signature(img, detector_dict, cfg)
    refs = ReferenceSets((s,), (s,), cfg)
    res = detect(refs, img, detector_dict)
    assert res.d_avg_a == res.d_avg_b and res.label == "A"


def test_classify_sharp_and_blurred(face_images, detector_dict):
    refs = build_reference_sets(face_images[:32], detector_dict, SignatureConfig())
    held_out = face_images[32:]
    assert [classify(refs, degrade(img, 8), detector_dict) for img in held_out] == ["B"] * len(held_out)
    sharp = [classify(refs, img, detector_dict) for img in held_out]
    assert sharp.count("A") >= 0.9 * len(held_out)


def test_classify_depends_only_on_canonical_rescale(face_images, detector_dict):
    from mrh.image import resize_bilinear

    refs = build_reference_sets(face_images[:8], detector_dict, SignatureConfig())
    img = face_images[40]
    canon = resize_bilinear(resize_bilinear(img, 100, 100), 64, 64)
    det = ResolutionDetector(refs, detector_dict)
    assert det.detect(canon) == detect(refs, canon, detector_dict)
    # affine intensity change of the probe does not move the decision
    assert det.classify(img.affine(0.5, 0.1)) == det.classify(img)


def test_manifest_round_trip(tmp_path, face_images, detector_dict):
    refs = build_reference_sets(face_images[:3], detector_dict, SignatureConfig())
    names_a, names_b = [], []
    for i, (sa, sb) in enumerate(zip(refs.set_a, refs.set_b)):
        (tmp_path / f"a{i}.sig").write_bytes(save_signature(sa))
        (tmp_path / f"b{i}.sig").write_bytes(save_signature(sb))
        names_a.append(f"a{i}.sig")
        names_b.append(f"b{i}.sig")
    (tmp_path / "refs.txt").write_text(format_reference_manifest(names_a, names_b))
    loaded = load_reference_sets(tmp_path / "refs.txt", refs.cfg)
    assert loaded == refs


@pytest.mark.parametrize("text, match", [
    ("a.sig\n[A]\nb.sig\n[B]\nc.sig\n", "before any"),
    ("[A]\na.sig\n", r"\[B\]"),
    ("[A]\na.sig\n[C]\nb.sig\n", "unknown section"),
])
def test_manifest_errors(text, match):
    with pytest.raises(FormatError, match=match):
        parse_reference_manifest(text)
