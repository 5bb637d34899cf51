import csv
import json
from pathlib import Path

import numpy as np
import pytest

from slimtrain import cli
from slimtrain.resnet import init_params

SMALL = """\
data.task = peaks
data.n = 120
train.epochs = 2
model.width = 4
model.depth = 2
"""


def write_config(path, body, output):
    path.write_text(f"run.output = {output}\n" + body)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestRun:
    def test_outputs(self, tmp_path):
        cfg = write_config(tmp_path / "a.cfg", SMALL, tmp_path / "out")
        assert cli.main(["run", cfg]) == 0
        out = tmp_path / "out"
        for name in ("manifest.json", "iterations.csv", "epochs.csv", "sgcv.csv",
                     "checkpoint_best", "checkpoint_final", "loss.svg", "lambda_heatmap.svg"):
            assert (out / name).exists(), name
        rows = read_rows(out / "iterations.csv")
        assert rows[0] == cli.ITER_COLUMNS
        assert len(rows) == 1 + 2 * (108 // 5)
        assert read_rows(out / "epochs.csv")[0] == cli.EPOCH_COLUMNS
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert set(manifest["final"]) >= {"train_loss", "theta_sq_norm", "W_sq_norm"}

    def test_byte_identical_reruns(self, tmp_path):
        a = write_config(tmp_path / "a.cfg", SMALL, tmp_path / "a")
        b = write_config(tmp_path / "b.cfg", SMALL, tmp_path / "b")
        assert cli.main(["run", a]) == 0 and cli.main(["run", b]) == 0
        for name in ("iterations.csv", "epochs.csv", "sgcv.csv", "checkpoint_final"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_manifest_round_trip(self, tmp_path):
        cfg = write_config(tmp_path / "a.cfg", SMALL, tmp_path / "a")
        assert cli.main(["run", cfg]) == 0
        values = cli.config_from_manifest(tmp_path / "a" / "manifest.json")
        original = cli.resolve(cli.read_pairs(cfg))
        assert cli.build_configs(values) == cli.build_configs(original)
        values["run.output"] = str(tmp_path / "again")
        assert cli.execute(values) == 0
        assert ((tmp_path / "a" / "iterations.csv").read_bytes()
                == (tmp_path / "again" / "iterations.csv").read_bytes())

    def test_rerun_from_manifest_file(self, tmp_path):
        cfg = write_config(tmp_path / "a.cfg", SMALL, tmp_path / "a")
        assert cli.main(["run", cfg]) == 0
        manifest = str(tmp_path / "a" / "manifest.json")
        assert cli.main(["run", manifest, "--set", f"run.output={tmp_path / 'b'}"]) == 0
        assert ((tmp_path / "a" / "iterations.csv").read_bytes()
                == (tmp_path / "b" / "iterations.csv").read_bytes())

    def test_set_override(self, tmp_path):
        cfg = write_config(tmp_path / "a.cfg", SMALL, tmp_path / "a")
        assert cli.main(["run", cfg, "--set", "train.epochs=1"]) == 0
        assert len(read_rows(tmp_path / "a" / "epochs.csv")) == 2

    def test_teacher_task(self, tmp_path):
        body = SMALL.replace("peaks", "teacher") + "data.n_in = 5\ndata.n_target = 3\n"
        cfg = write_config(tmp_path / "t.cfg", body, tmp_path / "t")
        assert cli.main(["run", cfg]) == 0
        theta, W, header = cli.load_checkpoint(tmp_path / "t" / "checkpoint_final")
        assert W.shape == (3, 5) and theta.n_in == 5

    def test_coupled_mode_leaves_lambda_blank(self, tmp_path):
        cfg = write_config(tmp_path / "c.cfg", SMALL + "train.mode = coupled_adam\n", tmp_path / "c")
        assert cli.main(["run", cfg]) == 0
        rows = read_rows(tmp_path / "c" / "iterations.csv")[1:]
        assert all(r[2] == "" and r[3] == "" for r in rows)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_failure_exit(self, tmp_path):
        body = SMALL + "train.mode = coupled_adam\ntrain.optimizer = sgd\ntrain.learning_rate = 1e300\n"
        cfg = write_config(tmp_path / "n.cfg", body, tmp_path / "n")
        assert cli.main(["run", cfg]) == 3
        assert len(read_rows(tmp_path / "n" / "iterations.csv")) > 1
        manifest = json.loads((tmp_path / "n" / "manifest.json").read_text())
        assert manifest["status"] == "numerical_failure"


class TestConfigErrors:
    def test_missing_required(self, tmp_path, capsys):
        path = tmp_path / "m.cfg"
        path.write_text(SMALL)
        assert cli.main(["run", str(path)]) == 2
        assert "run.output" in capsys.readouterr().err

    def test_unknown_field(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "u.cfg", SMALL + "train.batchsize = 3\n", tmp_path / "u")
        assert cli.main(["run", cfg]) == 2
        err = capsys.readouterr().err
        assert "train.batchsize" in err and "u.cfg:7" in err

    def test_bad_value(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "b.cfg", SMALL + "train.batch_size = five\n", tmp_path / "b")
        assert cli.main(["run", cfg]) == 2
        assert "train.batch_size" in capsys.readouterr().err

    def test_invalid_combination(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "b.cfg", SMALL + "sgcv.grid_lo = 3\n", tmp_path / "b")
        assert cli.main(["run", cfg]) == 2

    def test_malformed_line(self, tmp_path):
        cfg = write_config(tmp_path / "b.cfg", SMALL + "just words\n", tmp_path / "b")
        assert cli.main(["run", cfg]) == 2

    def test_missing_file(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "nope.cfg")]) == 2
        assert cli.main(["run", str(tmp_path / "nope.json")]) == 2
        (tmp_path / "bad.json").write_text("{}")
        assert cli.main(["run", str(tmp_path / "bad.json")]) == 2

    def test_plot_missing_run(self, tmp_path):
        assert cli.main(["plot", str(tmp_path / "nothing")]) == 1

    def test_bool_parsing(self):
        values = cli.resolve([(1, "run.output", "x"), (2, "data.task", "peaks"),
                              (3, "sgcv.signed", "no")])
        assert values["sgcv.signed"] is False


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        theta = init_params(3, 2, 2, 1.5, 4)
        W = np.arange(8.0).reshape(2, 4)
        cli.save_checkpoint(tmp_path / "ck", theta, W, mode="slimtrain", epoch=3)
        th, W2, header = cli.load_checkpoint(tmp_path / "ck")
        np.testing.assert_array_equal(th.flatten(), theta.flatten())
        np.testing.assert_array_equal(W2, W)
        assert th.step_h == theta.step_h and header["epoch"] == "3"

    def test_rejects_foreign_file(self, tmp_path):
        (tmp_path / "x").write_bytes(b"hello\n")
        with pytest.raises(ValueError):
            cli.load_checkpoint(tmp_path / "x")


class TestSweep:
    def test_three_by_three(self, tmp_path):
        body = (SMALL.replace("train.epochs = 2", "train.epochs = 1")
                + "grid.train.lambda0 = 1, 1e-3, 1e-10\ngrid.train.memory_depth = 0, 2, 5\n")
        cfg = write_config(tmp_path / "s.cfg", body, tmp_path / "sw")
        assert cli.main(["sweep", cfg]) == 0
        rows = read_rows(tmp_path / "sw" / "summary.csv")
        header, rows = rows[0], rows[1:]
        assert len(rows) == 9
        assert len(list((tmp_path / "sw").glob("cell_*"))) == 9
        best = header.index("best_loss")
        recomputed = []
        for r in rows:
            ep = np.genfromtxt(f"{r[1]}/epochs.csv", delimiter=",", names=True, ndmin=1)
            recomputed.append(float(np.min(ep["val_loss"])))
        assert int(np.argmin([float(r[best]) for r in rows])) == int(np.argmin(recomputed))
        np.testing.assert_allclose([float(r[best]) for r in rows], recomputed, rtol=1e-15)
        lam_col = header.index("train.lambda0")
        assert sorted({r[lam_col] for r in rows}) == sorted({"1.0", "0.001", "1e-10"})

    def test_include_cells(self, tmp_path):
        body = (SMALL.replace("train.epochs = 2", "train.epochs = 1")
                + "grid.train.memory_depth = 0, 1\n"
                + "include.1.train.memory_depth = 20\ninclude.1.train.batch_size = 1\n")
        cfg = write_config(tmp_path / "s.cfg", body, tmp_path / "sw")
        assert cli.main(["sweep", cfg]) == 0
        rows = read_rows(tmp_path / "sw" / "summary.csv")
        header = rows[0]
        assert len(rows) == 4
        assert rows[3][header.index("train.batch_size")] == "1"

    def test_empty_grid(self, tmp_path):
        cfg = write_config(tmp_path / "s.cfg", SMALL + "grid.train.lambda0 =\n", tmp_path / "sw")
        assert cli.main(["sweep", cfg]) == 2
        cfg = write_config(tmp_path / "t.cfg", SMALL, tmp_path / "sw")
        assert cli.main(["sweep", cfg]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_failed_cell_does_not_stop_sweep(self, tmp_path):
        body = (SMALL.replace("train.epochs = 2", "train.epochs = 1")
                + "train.mode = coupled_adam\ntrain.optimizer = sgd\n"
                + "grid.train.learning_rate = 1e300, 1e-3\n")
        cfg = write_config(tmp_path / "s.cfg", body, tmp_path / "sw")
        assert cli.main(["sweep", cfg]) == 3
        rows = read_rows(tmp_path / "sw" / "summary.csv")
        status = rows[0].index("status")
        assert [r[status] for r in rows[1:]] == ["numerical_failure", "ok"]


def test_demo_fig1(tmp_path):
    assert cli.main(["demo-fig1", "--out", str(tmp_path / "f")]) == 0
    rows = read_rows(tmp_path / "f" / "relative_error.csv")
    assert rows[0] == ["iter", "stik_rel_err", "adam_rel_err"]
    assert len(rows) == 82
    assert float(rows[-1][1]) <= 1e-10
    assert float(rows[-1][2]) > 0.1


def test_plot_verb(tmp_path):
    cfg = write_config(tmp_path / "a.cfg", SMALL + "log.plots = false\n", tmp_path / "a")
    assert cli.main(["run", cfg]) == 0
    assert not (tmp_path / "a" / "loss.svg").exists()
    assert cli.main(["plot", str(tmp_path / "a")]) == 0
    svg = (tmp_path / "a" / "lambda_heatmap.svg").read_text()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("name", ["peaks.cfg", "teacher.cfg"])
def test_shipped_run_configs_resolve(name):
    values = cli.resolve(cli.read_pairs(CONFIGS / name))
    train_cfg, model = cli.build_configs(values)
    assert train_cfg.mode == "slimtrain"


def test_shipped_sweep_enumerates_cells():
    path = CONFIGS / "peaks_sweep.cfg"
    base, axes, extra = cli.parse_sweep(cli.read_pairs(path), str(path))
    cells = [cli.resolve(pairs) for _, pairs in cli.sweep_cells(base, axes, extra)]
    assert len(cells) == 27 + 3
    keys = {(v["train.lambda0"], v["train.batch_size"], v["train.memory_depth"]) for v in cells}
    assert len(keys) == 30
    assert {k for k in keys if k[2] == 100} == {(l, 1, 100) for l in (1.0, 1e-3, 1e-10)}
