import json
from pathlib import Path

import numpy as np
import pytest

from gwdice.cli import main
from gwdice.holistic_net import HolisticModel, NetworkConfig, checkpoint
from gwdice.label_metric import metric_tree_brats, write_metric_file
from gwdice.wasserstein import emd_lp

FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestEmd:
    def test_equal(self, capsys):
        code, out, _ = run(capsys, "emd", "0.1,0.2,0.3,0.2,0.2", "0.1,0.2,0.3,0.2,0.2")
        assert code == 0 and out.strip() == "0"

    def test_edema_vs_necrotic(self, capsys):
        code, out, _ = run(capsys, "emd", "0,0,1,0,0", "0,1,0,0,0")
        assert code == 0 and out.strip() == "0.6"

    def test_matches_library(self, capsys, rng):
        for _ in range(5):
            p, q = rng.dirichlet(np.ones(5), size=2)
            code, out, _ = run(capsys, "emd", ",".join(repr(float(x)) for x in p), ",".join(repr(float(x)) for x in q))
            assert code == 0
            assert out.strip() == f"{emd_lp(p, q, metric_tree_brats())[0]:.12g}"

    def test_plan_and_files(self, capsys, tmp_path):
        (tmp_path / "p.txt").write_text("0.5\n0.5\n")
        (tmp_path / "q.txt").write_text("1,0")
        code, out, _ = run(capsys, "emd", str(tmp_path / "p.txt"), str(tmp_path / "q.txt"), "--metric", "M_0-1", "-v")
        lines = out.splitlines()
        assert code == 0 and lines[0] == "0.5" and len(lines) == 3

    def test_metric_file(self, capsys, tmp_path):
        write_metric_file(metric_tree_brats(), tmp_path / "tree.csv")
        code, out, _ = run(capsys, "emd", "0,0,1,0,0", "0,1,0,0,0", "--metric", str(tmp_path / "tree.csv"))
        assert code == 0 and out.strip() == "0.6"

    @pytest.mark.parametrize(
        "argv, field",
        [
            (["emd", "0.5,abc", "1,0", "--metric", "M_0-1"], "p"),
            (["emd", "0.5,0.5", "0.9,0", "--metric", "M_0-1"], "p/q"),
            (["emd", "0.5,0.5", "1,0,0", "--metric", "M_0-1"], "q"),
            (["emd", "0.5,0.5", "1,0", "--metric", "nope.csv"], "metric"),
            (["emd", "0.5,0.5", "1,0", "--threads", "0"], "threads"),
        ],
    )
    def test_bad_input(self, capsys, argv, field):
        code, _, err = run(capsys, *argv)
        assert code == 2 and field in err


class TestEval:
    def test_perfect(self, capsys, tmp_path):
        g = np.load(FIXTURES / "gt.npy")
        np.save(tmp_path / "p.npy", np.eye(5)[g])
        code, _, _ = run(capsys, "eval", "--pred", str(tmp_path / "p.npy"), "--gt", str(FIXTURES / "gt.npy"),
                         "--out", str(tmp_path / "r.json"))
        rep = json.loads((tmp_path / "r.json").read_text())
        assert code == 0
        assert all(v == 1.0 for v in rep["regions"].values())
        assert rep["wasserstein_dice"] == {"M_0-1": 1.0, "M_tree": 1.0}

    def test_all_background(self, capsys, tmp_path):
        g = np.load(FIXTURES / "gt.npy")
        np.save(tmp_path / "p.npy", np.eye(5)[np.zeros_like(g)])
        run(capsys, "eval", "--pred", str(tmp_path / "p.npy"), "--gt", str(FIXTURES / "gt.npy"),
            "--out", str(tmp_path / "r.json"))
        rep = json.loads((tmp_path / "r.json").read_text())
        assert all(v < 1e-8 for v in rep["regions"].values())

    def test_fixture_report_is_byte_identical(self, capsys, tmp_path):
        outs = []
        for k, threads in enumerate(("1", "4", "1")):
            out = tmp_path / f"r{k}.json"
            code, table, _ = run(capsys, "eval", "--pred", str(FIXTURES / "pred.npy"), "--gt", str(FIXTURES / "gt.npy"),
                                 "--threads", threads, "--out", str(out))
            assert code == 0 and "confusion Dice" in table
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]
        assert json.loads(outs[0])["meta"]["timestamp"] is None

    def test_timestamp_flag(self, capsys, tmp_path):
        run(capsys, "eval", "--pred", str(FIXTURES / "pred.npy"), "--gt", str(FIXTURES / "gt.npy"),
            "--timestamp", "2017-07-01", "--out", str(tmp_path / "r.json"))
        assert json.loads((tmp_path / "r.json").read_text())["meta"]["timestamp"] == "2017-07-01"

    def test_custom_regions(self, capsys, tmp_path):
        (tmp_path / "reg.txt").write_text("tumour: 1,2,3,4\n")
        run(capsys, "eval", "--pred", str(FIXTURES / "pred.npy"), "--gt", str(FIXTURES / "gt.npy"),
            "--regions", str(tmp_path / "reg.txt"), "--out", str(tmp_path / "r.json"))
        assert list(json.loads((tmp_path / "r.json").read_text())["regions"]) == ["tumour"]

    def test_shape_mismatch(self, capsys, tmp_path):
        np.save(tmp_path / "p.npy", np.full((3, 3, 5), 0.2))
        code, _, err = run(capsys, "eval", "--pred", str(tmp_path / "p.npy"), "--gt", str(FIXTURES / "gt.npy"))
        assert code == 2 and "eval" in err

    def test_label_mismatch(self, capsys, tmp_path):
        g = np.load(FIXTURES / "gt.npy")
        np.save(tmp_path / "p.npy", np.full(g.shape + (3,), 1 / 3))
        code, _, _ = run(capsys, "eval", "--pred", str(tmp_path / "p.npy"), "--gt", str(FIXTURES / "gt.npy"))
        assert code == 2

    def test_missing_inputs(self, capsys):
        assert run(capsys, "eval")[0] == 2


@pytest.fixture
def tiny_project(tmp_path, capsys):
    for name, seed in (("train", 1), ("val", 2)):
        code, _, _ = run(capsys, "gen-data", "--out", str(tmp_path / name), "--samples", "4", "--size", "32",
                         "--fractions", "0.04", "0.12", "0.05", "0.03", "--seed", str(seed))
        assert code == 0

    def write(name, schedule):
        cfg = {
            "data": "train",
            "val_data": "val",
            "network": {"scales": 2, "channels": 4},
            "batch_size": 2,
            "schedule": schedule,
        }
        (tmp_path / name).write_text(json.dumps(cfg))
        return str(tmp_path / name)

    return tmp_path, write


class TestTrainAndCompare:
    def test_gen_data_rejects_bad_fractions(self, capsys, tmp_path):
        code, _, err = run(capsys, "gen-data", "--out", str(tmp_path / "d"), "--fractions", "0.5", "0.5", "0.1", "0.1")
        assert code == 2 and "fraction" in err

    def test_zero_epochs_is_initialisation(self, capsys, tiny_project):
        root, write = tiny_project
        cfg = write("zero.json", [{"loss": "mean_dice", "epochs": 0, "lr": 0.1}])
        code, _, _ = run(capsys, "train", cfg, "--checkpoint", str(root / "m.wdhn"), "--log", str(root / "log.csv"))
        assert code == 0
        model = checkpoint.load(root / "m.wdhn")
        fresh = HolisticModel.init(NetworkConfig(scales=2, channels=4, input_channels=2))
        assert all(np.array_equal(model.params[n], fresh.params[n]) for n in fresh.params)
        assert (root / "log.csv").read_text().strip() == "epoch,loss,train_loss,val_mean_dice,val_wasserstein_dice"

    def test_rerun_identical_and_compare(self, capsys, tiny_project):
        root, write = tiny_project
        mean = write("mean.json", [{"loss": "mean_dice", "epochs": 2, "lr": 0.05}])
        pt = write("pt.json", [{"loss": "mean_dice", "epochs": 1, "lr": 0.05},
                               {"loss": "wasserstein:M_tree", "epochs": 1, "lr": 0.05}])
        for name, cfg, threads in (("a", mean, "1"), ("b", mean, "3"), ("pt", pt, "2")):
            code, _, _ = run(capsys, "train", cfg, "--threads", threads,
                             "--checkpoint", str(root / f"{name}.wdhn"), "--log", str(root / f"{name}.csv"))
            assert code == 0
        assert (root / "a.csv").read_bytes() == (root / "b.csv").read_bytes()
        assert (root / "a.wdhn").read_bytes() == (root / "b.wdhn").read_bytes()
        assert "wasserstein:M_tree" in (root / "pt.csv").read_text()

        for name in ("a", "pt"):
            code, _, _ = run(capsys, "eval", "--checkpoint", str(root / f"{name}.wdhn"), "--data", str(root / "val"),
                             "--out", str(root / f"{name}.json"))
            assert code == 0
        rep = json.loads((root / "a.json").read_text())
        assert rep["meta"]["n_volumes"] == 4 and "std" in rep

        code, table, _ = run(capsys, "compare", str(root / "a.json"), str(root / "a.json"), str(root / "pt.json"),
                             "--names", "mean", "mean2", "pt", "--out", str(root / "cmp.txt"))
        assert code == 0
        lines = table.splitlines()
        assert lines[0].split() == ["mean", "mean2", "pt", "mean2-mean", "pt-mean"]
        assert any(l.startswith("confusion mass (M_tree)") for l in lines)
        for line in lines[1:]:
            assert line.split()[-2] in ("0.0000", "-0.0000")
        assert (root / "cmp.txt").read_text() == table

    def test_seed_override_changes_model(self, capsys, tiny_project):
        root, write = tiny_project
        cfg = write("z.json", [{"loss": "mean_dice", "epochs": 0, "lr": 0.1}])
        run(capsys, "train", cfg, "--seed", "1", "--checkpoint", str(root / "s1.wdhn"), "--log", str(root / "l.csv"))
        run(capsys, "train", cfg, "--seed", "2", "--checkpoint", str(root / "s2.wdhn"), "--log", str(root / "l.csv"))
        assert (root / "s1.wdhn").read_bytes() != (root / "s2.wdhn").read_bytes()

    def test_divergence_exit_code(self, capsys, tiny_project):
        root, write = tiny_project
        cfg = write("boom.json", [{"loss": "mean_dice", "epochs": 5, "lr": 1e300}])
        with np.errstate(all="ignore"):
            code, _, err = run(capsys, "train", cfg, "--checkpoint", str(root / "x.wdhn"), "--log", str(root / "x.csv"))
        assert code == 3 and "epoch" in err
        assert not (root / "x.wdhn").exists()

    @pytest.mark.parametrize(
        "schedule",
        [[{"loss": "bogus", "epochs": 1, "lr": 0.1}], [{"loss": "mean_dice", "epochs": -1, "lr": 0.1}], [{"epochs": 1}]],
    )
    def test_bad_config(self, capsys, tiny_project, schedule):
        root, write = tiny_project
        code, _, _ = run(capsys, "train", write("bad.json", schedule), "--checkpoint", str(root / "x.wdhn"),
                         "--log", str(root / "x.csv"))
        assert code == 2

    def test_missing_output_dir(self, capsys, tiny_project):
        root, write = tiny_project
        cfg = write("ok.json", [{"loss": "mean_dice", "epochs": 0, "lr": 0.1}])
        code, _, _ = run(capsys, "train", cfg, "--checkpoint", str(root / "nodir" / "m.wdhn"))
        assert code == 2

    def test_compare_mismatched_spaces(self, capsys, tmp_path):
        g = np.load(FIXTURES / "gt.npy")
        np.save(tmp_path / "p3.npy", np.full(g.shape + (3,), 1 / 3))
        np.save(tmp_path / "g3.npy", np.minimum(g, 2))
        run(capsys, "eval", "--pred", str(tmp_path / "p3.npy"), "--gt", str(tmp_path / "g3.npy"),
            "--metric", "M_0-1", "--regions", str(_regions3(tmp_path)),
            "--out", str(tmp_path / "r3.json"))
        run(capsys, "eval", "--pred", str(FIXTURES / "pred.npy"), "--gt", str(FIXTURES / "gt.npy"),
            "--out", str(tmp_path / "r5.json"))
        code, _, err = run(capsys, "compare", str(tmp_path / "r5.json"), str(tmp_path / "r3.json"))
        assert code == 2 and "label space" in err

    def test_compare_needs_two(self, capsys, tmp_path):
        assert run(capsys, "compare", str(tmp_path / "only.json"))[0] == 2


def _regions3(tmp_path):
    path = tmp_path / "reg3.txt"
    path.write_text("fg: 1,2\n")
    return path
