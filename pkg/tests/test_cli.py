import json

import numpy as np
import pytest

from histopet import io
from histopet.cli import main
from histopet.volume import Volume


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["phantom", "--kind", "sphere-set", "--activity", str(d / "a.hvol"), "--mu", str(d / "m.hvol")]) == 0
    assert main(["simulate", "--activity", str(d / "a.hvol"), "--mu", str(d / "m.hvol"),
                 "--out", str(d / "e.hpet"), "--prompts", "20000", "--randoms-fraction", "0.05"]) == 0
    assert main(["dataset", "--count", "2", "--prompts", "20000", "--keep-prob", "0.25",
                 "--out", str(d / "ds")]) == 0
    return d


def test_histogram_and_workers_agree(workdir, capsys):
    outs = []
    for w in ("1", "2"):
        out = workdir / f"h{w}.hvol"
        assert main(["histogram", "--events", str(workdir / "e.hpet"), "--like", str(workdir / "a.hvol"),
                     "--workers", w, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert "events_per_second=" in capsys.readouterr().out


def test_train_finetune_reconstruct_evaluate_export(workdir, capsys):
    cfg = workdir / "t.cfg"
    cfg.write_text("train.iterations = 2\ntrain.crop = 64,64\ntrain.augment = false\nnetwork.base_channels = 2\n")
    run = workdir / "run"
    assert main(["train", "--config", str(cfg), "--data", str(workdir / "ds"), "--out", str(run),
                 "--iterations", "3"]) == 0  # the flag wins over the file
    assert (run / "loss.png").exists()
    assert len((run / "loss.tsv").read_text().splitlines()) == 4
    ft = workdir / "ft"
    assert main(["finetune", "--config", str(cfg), "--base", str(run / "final.hnet"),
                 "--data", str(workdir / "ds"), "--low-dose", "--out", str(ft)]) == 0
    ds0 = workdir / "ds" / "0000"
    rec = workdir / "r.hvol"
    assert main(["reconstruct", "--checkpoint", str(ft / "final.hnet"), "--histo", f"{ds0}_histo.hvol",
                 "--mu", f"{ds0}_mu.hvol", "--out", str(rec), "--chunk-depth", "8"]) == 0
    assert "seconds=" in capsys.readouterr().out
    prefix = workdir / "ev" / "r"
    assert main(["evaluate", "--recon", str(rec), "--target", f"{ds0}_target.hvol",
                 "--roi=0,0,-0.8,40", "--profile=-100,0,-0.8,100,0,-0.8", "--out-prefix", str(prefix)]) == 0
    tsv = (workdir / "ev" / "r_metrics.tsv").read_text()
    assert tsv.startswith("kind\tkey\tmae\tms_ssim") and "roi\troi0" in tsv and "fwhm\ttarget0" in tsv
    for suffix in ("slices", "panel", "profiles"):
        assert (workdir / "ev" / f"r_{suffix}.png").stat().st_size > 0
    small = workdir / "small.hnet"
    assert main(["export", "--checkpoint", str(ft / "final.hnet"), "--out", str(small)]) == 0
    assert io.read_checkpoint(small)["precision"] == "f32"
    assert small.stat().st_size < (ft / "final.hnet").stat().st_size


def test_bench_writes_json_and_png(workdir, capsys):
    cfg = workdir / "b.cfg"
    cfg.write_text("train.iterations = 1\ntrain.crop = 64,64\nnetwork.base_channels = 2\n")
    assert main(["train", "--config", str(cfg), "--data", str(workdir / "ds"), "--out", str(workdir / "b")]) == 0
    out = workdir / "bench" / "bench.json"
    assert main(["bench", "--events", str(workdir / "e.hpet"), "--like", str(workdir / "a.hvol"),
                 "--checkpoint", str(workdir / "b" / "final.hnet"), "--bench-workers", "1,2",
                 "--repeats", "1", "--recon-shape", "4,16,16", "--recon-repeats", "1", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert set(rep["histogram_events_per_second"]) == {"1", "2"}
    assert rep["reconstruction"]["shape"] == [4, 16, 16]
    assert out.with_suffix(".png").exists()


def test_exit_codes(workdir, tmp_path, capsys):
    assert main([]) == 1
    assert main(["simulate"]) == 1  # missing required options
    assert main(["train", "--data", "x", "--out", "y", "--lr-lower", "abc"]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.nonsense = 3\n")
    assert main(["train", "--config", str(bad), "--data", str(workdir / "ds"), "--out", str(tmp_path)]) == 1
    # events recorded for another scanner
    assert main(["histogram", "--events", str(workdir / "e.hpet"), "--rings", "4", "--out",
                 str(tmp_path / "h.hvol")]) == 2
    assert main(["reconstruct", "--checkpoint", str(tmp_path / "none.hnet"), "--histo", "a", "--mu", "b",
                 "--out", "c"]) == 2
    # a corpus whose targets are NaN makes the loss non-finite
    nan_dir = tmp_path / "nan"
    nan_dir.mkdir()
    for kind in ("histo", "mu", "target"):
        v = io.read_volume(workdir / "ds" / f"0000_{kind}.hvol")
        data = np.full_like(v.data, np.nan) if kind == "target" else v.data
        io.write_volume(nan_dir / f"0000_{kind}.hvol", Volume(data, v.grid, v.unit))
    assert main(["train", "--data", str(nan_dir), "--out", str(tmp_path / "n"), "--iterations", "1",
                 "--crop", "64,64", "--base-channels", "2"]) == 3
    err = capsys.readouterr().err
    assert "diverged" in err and "data error" in err
