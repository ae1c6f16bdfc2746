import os

import numpy as np
import pytest

from warpreg import unet
from warpreg.cli import main
from warpreg.dataset import gen_phantom
from warpreg.image import load_pgm, save_pgm
from warpreg.warpfield import load_field


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def images(tmp_path):
    t = gen_phantom(64, 3)
    s = np.roll(t, (5, -3), axis=(0, 1))
    save_pgm(s, tmp_path / "s.pgm")
    save_pgm(t, tmp_path / "t.pgm")
    return tmp_path / "s.pgm", tmp_path / "t.pgm"


def test_no_arguments_is_usage_error(capsys):
    code, _, err = run(capsys)
    assert code == 1 and "usage" in err


def test_unknown_command_suggests(capsys):
    code, _, err = run(capsys, "trian")
    assert code == 1 and "did you mean train" in err


def test_unknown_flag_suggests(capsys):
    code, _, err = run(capsys, "train", "--epoch", "3")
    assert code == 1 and "--epochs" in err


def test_missing_required_flag(capsys):
    code, _, err = run(capsys, "register", "phase", "--subject", "x.pgm")
    assert code == 1 and "--template" in err


def test_bad_value(capsys):
    code, _, err = run(capsys, "train", "--epochs", "0", "--out", "m")
    assert code == 1 and "--epochs" in err


def test_runtime_error_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "warp", "invert", "--field", tmp_path / "none.wrp1", "--out", tmp_path / "o")
    assert code == 2 and err.startswith("error:")
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    code, _, err = run(capsys, "register", "phase", "--subject", tmp_path / "bad.pgm",
                       "--template", tmp_path / "bad.pgm")
    assert code == 2 and "magic" in err


def test_register_phase(capsys, images):
    code, out, _ = run(capsys, "register", "phase", "--subject", images[0], "--template", images[1])
    assert code == 0
    di, dj, peak = out.split()
    assert (di, dj) == ("5", "-3") and 0 < float(peak) <= 1.0 + 1e-9


def test_warp_random_apply_invert(capsys, tmp_path, images):
    f, w = tmp_path / "f.wrp1", tmp_path / "w.pgm"
    code, out, _ = run(capsys, "warp", "random", "--kind", "sinusoidal", "--amplitude", 3,
                       "--out-field", f, "--seed", 4)
    assert code == 0 and float(out) <= 3.0 + 1e-4
    assert run(capsys, "warp", "apply", "--image", images[1], "--field", f, "--out", w)[0] == 0
    assert run(capsys, "warp", "invert", "--field", f, "--out", tmp_path / "g.wrp1")[0] == 0
    assert load_field(tmp_path / "g.wrp1").shape == (64, 64)
    assert load_pgm(w).shape == (64, 64)


def test_warp_random_rejects_over_cap(capsys, tmp_path):
    code, _, err = run(capsys, "warp", "random", "--kind", "linear", "--amplitude", 50,
                       "--out-field", tmp_path / "f")
    assert code == 2 and "cap" in err


def test_register_demons(capsys, tmp_path, images):
    code, out, _ = run(capsys, "register", "demons", "--subject", images[0], "--template", images[1],
                       "--levels", 2, "--iterations", 10, "--out-warped", tmp_path / "w.pgm",
                       "--trace", tmp_path / "tr.csv")
    assert code == 0 and out.startswith("ssim")
    rows = (tmp_path / "tr.csv").read_text().splitlines()
    assert rows[0] == "iteration,level,mse,ssim" and len(rows) == 21


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# dataset\nimages = 3\nwarps = 1\nsize = 32\nseed = 2\nout = " + str(tmp_path / "a") + "\n")
    assert run(capsys, "make-dataset", "--config", cfg)[0] == 0
    assert len((tmp_path / "a" / "manifest.txt").read_text().splitlines()) == 3
    assert run(capsys, "make-dataset", "--config", cfg, "--warps", 2, "--out", tmp_path / "b")[0] == 0
    assert len((tmp_path / "b" / "manifest.txt").read_text().splitlines()) == 6
    cfg.write_text("imagez = 3\n")
    code, _, err = run(capsys, "make-dataset", "--config", cfg, "--out", tmp_path / "c")
    assert code == 1 and "did you mean images" in err


def test_make_dataset_deterministic(capsys, tmp_path):
    for d in ("x", "y"):
        assert run(capsys, "make-dataset", "--images", 4, "--warps", 2, "--size", 32,
                   "--seed", 7, "--out", tmp_path / d)[0] == 0
    assert (tmp_path / "x/manifest.txt").read_bytes() == (tmp_path / "y/manifest.txt").read_bytes()


def test_train_infer_inspect(capsys, tmp_path, images):
    model = tmp_path / "m.unt1"
    code, out, _ = run(capsys, "train", "--images", 3, "--warps", 1, "--epochs", 2, "--seed", 1,
                       "--out", model, "--history", tmp_path / "h.csv",
                       "--checkpoint-epochs", "1,2", "--checkpoint-dir", tmp_path / "ck")
    assert code == 0 and out.count("epoch") == 2
    assert sorted(os.listdir(tmp_path / "ck")) == ["epoch_001.unt1", "epoch_002.unt1"]
    assert (tmp_path / "ck" / "epoch_002.unt1").read_bytes() == model.read_bytes()
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 3

    outs = [tmp_path / n for n in ("w.pgm", "f.wrp1", "o.ppm")]
    code, _, _ = run(capsys, "infer", "--model", model, "--subject", images[0], "--template", images[1],
                     "--out-warped", outs[0], "--out-field", outs[1], "--overlay", outs[2])
    assert code == 0 and all(p.exists() for p in outs)
    assert outs[2].read_bytes().startswith(b"P6\n64 64\n255\n")

    code, out, _ = run(capsys, "inspect", "--model", model, "--subject", images[0],
                       "--template", images[1], "--out-dir", tmp_path / "dump")
    assert code == 0 and "wrote 176 files" in out
    assert len(os.listdir(tmp_path / "dump")) == 176

    code, out, _ = run(capsys, "bench", "progression", "--checkpoints",
                       f"early={tmp_path / 'ck' / 'epoch_001.unt1'}", f"late={model}",
                       "--images", 3, "--warps", 1, "--seed", 1, "--out-dir", tmp_path / "prog")
    assert code == 0 and out.startswith("early ssim")


def test_bench_demons_and_inference(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "demons", "--images", 5, "--warps", 1, "--size", 32,
                       "--iterations", "5,10", "--levels", "1", "--csv", tmp_path / "d.csv")
    assert code == 0 and "best iters=" in out
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 3
    m = unet.build_unet(unet.UNetConfig(32, 2, 4), 0)
    unet.save_model(m, tmp_path / "m.unt1")
    code, out, _ = run(capsys, "bench", "inference", "--model", tmp_path / "m.unt1", "--images", 5,
                       "--warps", 1, "--repeats", 3, "--threads", 1)
    assert code == 0 and "unet" in out
