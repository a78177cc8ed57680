"""CLI behavior: exit codes, error formatting on stderr, and a small
end-to-end run of every subcommand inside a temp directory. main() is
called in-process so the tests see real return codes without spawning
interpreters."""

import numpy as np
import pytest

from relight import cli
from relight.config import ModelConfig
from relight.errors import IOFailure
from relight.images import ImageRGB, write_image
from relight.net import DenoiserModel
from relight.sampling import make_rng
from relight.schedule import NoiseSchedule
from relight.train import save_checkpoint


def run_cli(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def mini_ini(tmp_path):
    """A config small enough that train finishes in well under a second."""
    path = tmp_path / "mini.ini"
    path.write_text(
        "[run]\nseed = 3\n"
        f"[paths]\ndataset_dir = {tmp_path / 'data'}\n"
        f"out_dir = {tmp_path / 'out'}\n"
        "[data]\ncount = 4\nsize = 16\n"
        "[model]\nbase_width = 8\nfourier_bands = 4\n"
        "[train]\niterations = 2\nbatch_size = 2\npatch_size = 8\n"
        "checkpoint_every = 1000\n",
        encoding="utf-8")
    return str(path)


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("make-toydata", "inspect-schedule", "inspect-sampler",
                 "train", "enhance", "eval"):
        assert name in out


def test_unknown_flag_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--warp-speed"])
    assert exc.value.code == 2


def test_missing_config_file_exits_2(capsys, tmp_path):
    code, _, err = run_cli(
        ["train", "--config", str(tmp_path / "absent.ini")], capsys)
    assert code == 2
    assert err.startswith("error[config]:")


def test_missing_dataset_exits_3(capsys, mini_ini):
    code, _, err = run_cli(["train", "--config", mini_ini], capsys)
    assert code == 3
    assert err.startswith("error[data]:")


def test_missing_checkpoint_exits_5(capsys, mini_ini, tmp_path):
    img = tmp_path / "x.png"
    write_image(img, ImageRGB(np.zeros((3, 8, 8))))
    code, _, err = run_cli(
        ["enhance", "--config", mini_ini, str(img)], capsys)
    assert code == 5
    assert err.startswith("error[checkpoint]:")


def test_io_and_internal_categories(capsys, monkeypatch, mini_ini):
    def disk_full(cfg, args):
        raise IOFailure("disk full")

    def surprise(cfg, args):
        raise RuntimeError("surprise")

    monkeypatch.setitem(cli.COMMANDS, "inspect-schedule", disk_full)
    code, _, err = run_cli(["inspect-schedule", "--config", mini_ini], capsys)
    assert code == 6
    assert err.startswith("error[io]: disk full")

    monkeypatch.setitem(cli.COMMANDS, "inspect-schedule", surprise)
    code, _, err = run_cli(["inspect-schedule", "--config", mini_ini], capsys)
    assert code == 1
    assert err.startswith("error[internal]: surprise")


def test_make_toydata(capsys, mini_ini, tmp_path):
    code, out, err = run_cli(["make-toydata", "--config", mini_ini], capsys)
    assert code == 0 and err == ""
    assert "wrote 4 pairs (16x16)" in out
    data = tmp_path / "data"
    for sub in ("low", "normal"):
        names = sorted(p.name for p in (data / sub).iterdir()
                       if p.suffix == ".png")
        assert names == [f"img_{i:04d}.png" for i in range(4)]
    assert (data / "manifest_make-toydata.txt").is_file()


def test_inspect_schedule_csv(capsys, mini_ini, tmp_path):
    code, _, _ = run_cli(["inspect-schedule", "--config", mini_ini], capsys)
    assert code == 0
    lines = (tmp_path / "out" / "schedule.csv").read_text().splitlines()
    assert lines[0] == "level,sigma,c_skip,c_out,c_in,snr_weight"
    assert len(lines) == 1 + 10
    sched = NoiseSchedule()
    grid = sched.sigma_grid()
    for i, line in enumerate(lines[1:]):
        fields = line.split(",")
        assert int(fields[0]) == i
        assert float(fields[1]) == grid[i]
        assert float(fields[2]) == sched.precondition(grid[i])[0]


def test_inspect_sampler_csv(capsys, mini_ini, tmp_path):
    code, _, _ = run_cli(["inspect-sampler", "--config", mini_ini], capsys)
    assert code == 0
    lines = (tmp_path / "out" /
             "sampler_histogram.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count_standard,count_bimodal"
    assert len(lines) == 1 + 50
    count_s = sum(int(line.split(",")[2]) for line in lines[1:])
    count_b = sum(int(line.split(",")[3]) for line in lines[1:])
    assert count_s == count_b == 100_000
    # the bimodal histogram concentrates in the top bin, the log-uniform
    # one does not
    top_b = int(lines[-1].split(",")[3])
    top_s = int(lines[-1].split(",")[2])
    assert top_b > 50_000 > top_s


def test_pipeline_end_to_end(capsys, mini_ini, tmp_path):
    out = tmp_path / "out"

    code, _, _ = run_cli(["make-toydata", "--config", mini_ini], capsys)
    assert code == 0

    code, stdout, _ = run_cli(["train", "--config", mini_ini], capsys)
    assert code == 0
    assert "trained 2 steps" in stdout
    assert (out / "checkpoint_final.bin").is_file()
    assert (out / "manifest_train.txt").is_file()
    loss_lines = (out / "loss_history.csv").read_text().splitlines()
    assert loss_lines[0] == "step,loss_consist,loss_fixed,loss_total"
    assert len(loss_lines) == 3
    # cadence of 1000 never fires in 2 iterations
    assert not (out / "checkpoint_001000.bin").exists()

    # default inputs resolve to <dataset_dir>/low
    code, stdout, _ = run_cli(["enhance", "--config", mini_ini], capsys)
    assert code == 0
    assert "enhanced 4 images" in stdout
    enhanced = sorted(p.name for p in out.glob("*_enhanced.png"))
    assert enhanced == [f"img_{i:04d}_enhanced.png" for i in range(4)]
    times = (out / "enhance_times.csv").read_text().splitlines()
    assert times[0] == "filename,wall_time_seconds"
    assert len(times) == 5
    assert all(float(line.split(",")[1]) > 0 for line in times[1:])

    code, stdout, _ = run_cli(
        ["eval", "--config", mini_ini, str(out), str(tmp_path / "data" / "normal")],
        capsys)
    assert code == 0
    assert "evaluated 4 pairs" in stdout
    metric_lines = (out / "metrics.csv").read_text().splitlines()
    assert metric_lines[1] == "filename,psnr,ssim,mae,wall_time_seconds"
    assert len(metric_lines) == 2 + 4 + 1
    mean = metric_lines[-1].split(",")
    assert mean[0] == "mean"
    assert 0.0 < float(mean[1]) <= 99.0   # psnr
    assert -1.0 <= float(mean[2]) <= 1.0  # ssim
    assert 0.0 <= float(mean[3]) <= 1.0   # mae


def test_eval_reports_orphans(capsys, mini_ini, tmp_path):
    enhanced = tmp_path / "enh"
    reference = tmp_path / "ref"
    enhanced.mkdir()
    reference.mkdir()
    img = ImageRGB(np.full((3, 16, 16), 0.5))
    write_image(enhanced / "a_enhanced.png", img)
    write_image(enhanced / "b_enhanced.png", img)
    write_image(reference / "a.png", img)
    write_image(reference / "c.png", img)
    code, _, err = run_cli(
        ["eval", "--config", mini_ini, str(enhanced), str(reference)], capsys)
    assert code == 3
    assert err.startswith("error[data]:")
    assert "b_enhanced.png" in err
    assert "c.png" in err


@pytest.fixture
def ckpt_ini(tmp_path):
    """An untrained checkpoint on disk plus a config pointing at it."""
    ckpt = tmp_path / "tiny.bin"
    model_cfg = ModelConfig(base_width=8, fourier_bands=4)
    models = {
        "R": DenoiserModel.create(model_cfg.denoiser_config("R"), make_rng(0, 1)),
        "L": DenoiserModel.create(model_cfg.denoiser_config("L"), make_rng(0, 2)),
    }
    save_checkpoint(ckpt, models, step=0)
    ini = tmp_path / "ckpt.ini"
    ini.write_text(
        f"[paths]\ncheckpoint = {ckpt}\nout_dir = {tmp_path / 'out2'}\n"
        "[model]\nbase_width = 8\nfourier_bands = 4\n",
        encoding="utf-8")
    return str(ini)


def test_enhance_rejects_unpaddable_size(capsys, ckpt_ini, tmp_path):
    img = tmp_path / "odd.png"
    write_image(img, ImageRGB(np.full((3, 10, 10), 0.5)))
    code, _, err = run_cli(["enhance", "--config", ckpt_ini, str(img)], capsys)
    assert code == 4
    assert err.startswith("error[shape]:")


def test_enhance_missing_input_exits_3(capsys, ckpt_ini, tmp_path):
    code, _, err = run_cli(
        ["enhance", "--config", ckpt_ini, str(tmp_path / "ghost.png")], capsys)
    assert code == 3
    assert err.startswith("error[data]:")
    assert "ghost.png" in err
