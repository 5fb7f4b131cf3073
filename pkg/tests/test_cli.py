import subprocess
import sys

import pytest

from mrh.cli import build_parser, main
from mrh.dictionary import load_dict
from mrh.image import read_pgm
from mrh.signature import read_signature


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, small_corpus):
    root, layout = small_corpus
    ws = tmp_path_factory.mktemp("cli")
    paths = [root / p for name in sorted(layout)[:10] for p in layout[name][:1]]
    (ws / "images.txt").write_text("".join(f"{p}\n" for p in paths))
    assert main(["train-dict", "--images", str(ws / "images.txt"), "--out", str(ws / "dict.bin"),
                 "--words", "16", "--max-iters", "20"]) == 0
    return ws, paths


def test_degrade(tmp_path, workspace):
    _, paths = workspace
    out = tmp_path / "deg.pgm"
    assert main(["degrade", "--in", str(paths[0]), "--out", str(out), "--res", "16"]) == 0
    img = read_pgm(out)
    assert (img.width, img.height) == (64, 64)


def test_degrade_errors(tmp_path, workspace, capsys):
    _, paths = workspace
    out = tmp_path / "deg.pgm"
    assert main(["degrade", "--in", str(paths[0]), "--out", str(out), "--res", "128", "--canonical", "64"]) == 1
    assert "--res 128" in capsys.readouterr().err
    assert main(["degrade", "--in", str(tmp_path / "missing.pgm"), "--out", str(out), "--res", "8"]) == 2
    assert "missing.pgm" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_flag_is_usage_error(capsys):
    assert main(["degrade", "--bogus"]) == 1
    assert main(["nonsense"]) == 1


def test_train_dict(workspace, tmp_path):
    ws, _ = workspace
    d = load_dict((ws / "dict.bin").read_bytes())
    assert d.G == 16
    again = tmp_path / "again.bin"
    assert main(["train-dict", "--images", str(ws / "images.txt"), "--out", str(again),
                 "--words", "16", "--max-iters", "20", "--threads", "8"]) == 0
    assert again.read_bytes() == (ws / "dict.bin").read_bytes()


def test_train_dict_insufficient(workspace, tmp_path, capsys):
    ws, paths = workspace
    (tmp_path / "two.txt").write_text(f"{paths[0]}\n{paths[1]}\n")  # 450 features
    out = tmp_path / "d.bin"
    assert main(["train-dict", "--images", str(tmp_path / "two.txt"), "--out", str(out), "--words", "1024"]) == 2
    assert "insufficient" in capsys.readouterr().err
    assert not out.exists()
    (tmp_path / "empty.txt").write_text("")
    assert main(["train-dict", "--images", str(tmp_path / "empty.txt"), "--out", str(out)]) == 2


def test_signature(workspace, tmp_path):
    ws, paths = workspace
    a, b = tmp_path / "a.sig", tmp_path / "b.sig"
    for out in (a, b):
        assert main(["signature", "--dict", str(ws / "dict.bin"), "--image", str(paths[0]), "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert read_signature(a).R == 9


def test_signature_dimension_mismatch(workspace, tmp_path):
    ws, paths = workspace
    data = bytearray((ws / "dict.bin").read_bytes())
    data[12:16] = (14).to_bytes(4, "little")
    (tmp_path / "bad.bin").write_bytes(bytes(data))
    assert main(["signature", "--dict", str(tmp_path / "bad.bin"), "--image", str(paths[0]),
                 "--out", str(tmp_path / "x.sig")]) == 2
    assert not (tmp_path / "x.sig").exists()


def _cohorts(ws, paths, tmp_path):
    names = []
    for i, p in enumerate(paths[5:9]):
        out = tmp_path / f"c{i}.sig"
        assert main(["signature", "--dict", str(ws / "dict.bin"), "--image", str(p), "--out", str(out)]) == 0
        names.append(out.name)
    (tmp_path / "cohorts.txt").write_text("\n".join(names) + "\n")
    return tmp_path / "cohorts.txt"


def test_compare(workspace, tmp_path, capsys):
    ws, paths = workspace
    manifest = _cohorts(ws, paths, tmp_path)
    capsys.readouterr()
    assert main(["compare", "--dict", str(ws / "dict.bin"), "--cohorts", str(manifest),
                 "--a", str(paths[0]), "--b", str(paths[0])]) == 0
    assert capsys.readouterr().out == "d_raw=0\nd_norm=0\n"
    assert main(["compare", "--dict", str(ws / "dict.bin"), "--cohorts", str(manifest),
                 "--a", str(paths[0]), "--b", str(paths[1])]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split("=")[0] for ln in lines] == ["d_raw", "d_norm"]
    assert all(0 < float(ln.split("=")[1]) for ln in lines)
    (tmp_path / "empty.txt").write_text("")
    assert main(["compare", "--dict", str(ws / "dict.bin"), "--cohorts", str(tmp_path / "empty.txt"),
                 "--a", str(paths[0]), "--b", str(paths[1])]) == 1


def test_detect(workspace, tmp_path, capsys, face_images):
    ws, paths = workspace
    refdir = tmp_path / "refs"
    assert main(["build-refs", "--dict", str(ws / "dict.bin"), "--images", str(ws / "images.txt"),
                 "--out-dir", str(refdir)]) == 0
    probe = tmp_path / "probe.pgm"
    assert main(["degrade", "--in", str(paths[-1]), "--out", str(probe), "--res", "8"]) == 0
    capsys.readouterr()
    assert main(["detect", "--dict", str(ws / "dict.bin"), "--refs", str(refdir / "refs.txt"),
                 "--image", str(probe)]) == 0
    out = capsys.readouterr().out.strip()
    label, da, db = out.split()
    assert label == "label=B"
    assert da.startswith("d_avg_A=") and db.startswith("d_avg_B=")
    (tmp_path / "bad.txt").write_text("x.sig\n")
    assert main(["detect", "--dict", str(ws / "dict.bin"), "--refs", str(tmp_path / "bad.txt"),
                 "--image", str(probe)]) == 1


def test_evaluate(small_corpus, tmp_path, capsys):
    root, _ = small_corpus
    cfg = tmp_path / "desk.cfg"
    cfg.write_text("folds = 3\nwords_a = 16\nwords_b = 16\nwords_detector = 16\n"
                   "reference_size = 8\ncohort_size = 8\nem_iters = 10\n")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["evaluate", "--config", str(cfg), "--pairs", str(root / "pairs.csv"), "--corpus", str(root)]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--threads", "8"]) == 0
    assert a.read_bytes() == b.read_bytes()
    bad = tmp_path / "bad.csv"
    bad.write_text("0,a.pgm,b.pgm,same\n2,c.pgm,d.pgm,same\n")
    assert main(["evaluate", "--config", str(cfg), "--pairs", str(bad), "--corpus", str(root),
                 "--out", str(tmp_path / "c.json")]) == 2
    assert "non-contiguous" in capsys.readouterr().err
    assert not (tmp_path / "c.json").exists()


def test_help_documents_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, sp in sub.choices.items():
        text = sp.format_help()
        for action in sp._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
            if action.help and action.default not in (None, False) and action.dest != "help":
                assert "default" in text


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mrh", "degrade", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "--canonical" in out.stdout
