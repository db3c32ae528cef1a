import csv
import json

import numpy as np
import pytest

from weakcal.cli import main, read_config
from weakcal.errors import DataError
from weakcal.files import read_records, read_view, records_csv, write_view
from weakcal.metrics import mc
from weakcal.rng import child_rng
from weakcal.toylab import population_table, sample_world
from weakcal.witness import CalibrationMap, Records, sigmoid


def write_records(path, recs):
    path.write_text(records_csv(recs))
    return str(path)


def toy_records(world, n, seed=0):
    rng = child_rng(seed, "cli-records")
    x = rng.random(n)
    r = world.r(x)
    return world.records(x, label=(rng.random(n) < r).astype(int), conf=r)


def csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestFiles:
    def test_round_trip(self, tmp_path):
        recs = Records([0.1, 1.0], [[True, False], [False, True]], [1, 0], [0.5, 0.25], ["a", "b"])
        back = read_records(write_records(tmp_path / "r.csv", recs))
        assert np.array_equal(back.score, recs.score) and np.array_equal(back.groups, recs.groups)
        assert list(back.label) == [1, 0] and list(back.conf) == [0.5, 0.25] and list(back.ids) == ["a", "b"]

    @pytest.mark.parametrize("body,needle", [
        ("score,g0\n0.5,1\nabc,0\n", "row 3, column 'score'"),
        ("score,g0\n0.5,1\n1.5,0\n", "row 3, column 'score'"),
        ("score,g0\n0.5,2\n", "row 2, column 'g0'"),
        ("score,label\n0.5,1\n0.4,\n", "row 3, column 'label'"),
        ("score,conf\n0.5,0\n", "column 'conf'"),
        ("score,g1\n0.5,1\n", "g0"),
        ("id,label\n1,1\n", "'score'"),
        ("score,g0\n0.5\n", "row 2"),
    ])
    def test_errors_name_the_location(self, tmp_path, body, needle):
        p = tmp_path / "bad.csv"
        p.write_text(body)
        with pytest.raises(DataError, match=needle.replace("(", r"\(")):
            read_records(p)

    def test_missing_ids_become_row_numbers(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("score\n0.2\n0.3\n")
        assert list(read_records(p).ids) == ["0", "1"]

    def test_view_round_trip(self, tmp_path, toy_world):
        bags = sample_world(toy_world, "sconf", 20, child_rng(0, "view"))
        write_view(tmp_path / "v", bags, {"regime": "sconf", "pi_hat": 0.5})
        back, man = read_view(tmp_path / "v")
        assert set(back.sources) == {"pair-a", "pair-b"} and back.pi_hat == 0.5 and man["regime"] == "sconf"
        assert np.array_equal(back["pair-a"].conf, bags["pair-a"].conf)


class TestConfig:
    def test_parse(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\neta = 0.1  # inline\nmin-mass=0.02\n\nsizes = 128,256\nselect_best = yes\n")
        assert read_config(str(p)) == {"eta": 0.1, "min_mass": 0.02, "sizes": (128, 256), "select_best": True}

    @pytest.mark.parametrize("body", ["bogus = 1\n", "eta 0.1\n", "eta = fast\n"])
    def test_bad_config_is_usage_error(self, tmp_path, body):
        p = tmp_path / "c.cfg"
        p.write_text(body)
        assert main(["toy-convergence", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


class TestToyConvergence:
    def test_rows_and_determinism(self, tmp_path):
        args = ["toy-convergence", "--sizes", "128,256", "--reps", "3", "--seed", "4"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        rows = csv_rows(tmp_path / "a" / "convergence.csv")
        assert len(rows) == 8 and list(rows[0]) == ["regime", "n", "mean_abs_err", "std_abs_err"]
        for name in ("convergence.csv", "slopes.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        man = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert man["config"]["seed"] == 4 and man["config"]["sizes"] == [128, 256]

    def test_default_sizes(self, tmp_path):
        assert main(["toy-convergence", "--out", str(tmp_path)]) == 0
        assert len(csv_rows(tmp_path / "convergence.csv")) == 40

    def test_env_seed_and_config_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WEAKCAL_SEED", "17")
        cfg = tmp_path / "c.cfg"
        cfg.write_text("reps = 2\nsizes = 128,256,512\n")
        assert main(["toy-convergence", "--config", str(cfg), "--sizes", "128,256", "--out", str(tmp_path / "o")]) == 0
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]
        assert (man["seed"], man["reps"], man["sizes"]) == (17, 2, [128, 256])


class TestWeakview:
    def test_pu_defaults(self, tmp_path, toy_world):
        recs = toy_records(toy_world, 100)
        src = write_records(tmp_path / "r.csv", recs)
        assert main(["weakview", src, "--regime", "pu", "--out", str(tmp_path / "v")]) == 0
        man = json.loads((tmp_path / "v" / "manifest.json").read_text())
        n_pos = int(recs.label.sum())
        assert man["counts"] == {"pos": round(0.5 * n_pos), "unl": 100}
        assert man["pi_hat"] == n_pos / 100

    def test_split_writes_four_views(self, tmp_path, toy_world):
        src = write_records(tmp_path / "r.csv", toy_records(toy_world, 1000))
        assert main(["weakview", src, "--regime", "uu", "--split", "--out", str(tmp_path / "v")]) == 0
        sizes = json.loads((tmp_path / "v" / "manifest.json").read_text())["splits"]
        assert sizes == {"train": 360, "correction": 240, "validation": 200, "test": 200}
        assert json.loads((tmp_path / "v" / "test" / "manifest.json").read_text())["gamma1"] == 0.2

    def test_missing_label_is_data_error(self, tmp_path, capsys):
        p = tmp_path / "r.csv"
        p.write_text("score,g0\n0.5,1\n0.2,0\n")
        assert main(["weakview", str(p), "--regime", "pu", "--out", str(tmp_path / "v")]) == 3
        assert "label" in capsys.readouterr().err

    def test_bad_row_is_reported(self, tmp_path, capsys):
        p = tmp_path / "r.csv"
        p.write_text("score,label\n0.5,1\nx,0\n")
        assert main(["weakview", str(p), "--regime", "pn", "--out", str(tmp_path / "v")]) == 3
        assert "row 3, column 'score'" in capsys.readouterr().err


class TestEstimate:
    def test_pn_matches_grid(self, tmp_path, toy_world):
        src = write_records(tmp_path / "r.csv", toy_records(toy_world, 65536, seed=3))
        assert main(["weakview", src, "--regime", "pn", "--out", str(tmp_path / "v")]) == 0
        assert main(["estimate", str(tmp_path / "v"), "--out", str(tmp_path / "e")]) == 0
        rep = json.loads((tmp_path / "e" / "report.json").read_text())
        assert abs(rep["mc"] - mc(population_table(toy_world))[0]) <= 0.005
        assert rep["denominator"] == "eval-pool"
        assert len(csv_rows(tmp_path / "e" / "residuals.csv")) == 90

    def test_pconf_calibrated_scores(self, tmp_path):
        rng = np.random.default_rng(0)
        r = rng.uniform(0.05, 1.0, 50)
        recs = Records(r, rng.random((50, 2)) < 0.5, np.arange(50) % 2, r)
        src = write_records(tmp_path / "r.csv", recs)
        assert main(["weakview", src, "--regime", "pconf", "--out", str(tmp_path / "v")]) == 0
        assert main(["estimate", str(tmp_path / "v"), "--out", str(tmp_path / "e")]) == 0
        assert json.loads((tmp_path / "e" / "report.json").read_text())["mc"] == 0.0

    def test_pu_denominator_fallback(self, tmp_path, toy_world):
        src = write_records(tmp_path / "r.csv", toy_records(toy_world, 300))
        main(["weakview", src, "--regime", "pu", "--out", str(tmp_path / "v")])
        assert main(["estimate", str(tmp_path / "v"), "--out", str(tmp_path / "e")]) == 0
        rep = json.loads((tmp_path / "e" / "report.json").read_text())
        assert rep["denominator"] == "pu-unl" and rep["regime"] == "pu"
        assert main(["estimate", str(tmp_path / "v"), "--eval-pool", src, "--out", str(tmp_path / "e2")]) == 0
        assert json.loads((tmp_path / "e2" / "report.json").read_text())["denominator"] == "eval-pool"

    def test_singular_prior_is_numeric_error(self, tmp_path, toy_world):
        src = write_records(tmp_path / "r.csv", toy_records(toy_world, 50))
        main(["weakview", src, "--regime", "pu", "--out", str(tmp_path / "v")])
        args = ["estimate", str(tmp_path / "v"), "--regime", "su", "--pi-plus", "0.5", "--out", str(tmp_path / "e")]
        assert main(args) == 4

    def test_missing_view(self, tmp_path):
        assert main(["estimate", str(tmp_path / "nope"), "--out", str(tmp_path / "e")]) == 3


@pytest.fixture(scope="module")
def pn_views(tmp_path_factory, toy_world):
    root = tmp_path_factory.mktemp("pnviews")
    src = write_records(root / "r.csv", toy_records(toy_world, 20000, seed=9))
    assert main(["weakview", src, "--regime", "pn", "--split", "--out", str(root / "v")]) == 0
    return root / "v"


class TestCalibrate:
    def test_wlmc_improves_test_mc(self, tmp_path, pn_views):
        out = tmp_path / "c"
        assert main(["calibrate", str(pn_views / "correction"), "--test", str(pn_views / "test"),
                     "--method", "wlmc", "--out", str(out)]) == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["after"]["mc"] <= rep["before"]["mc"]
        assert csv_rows(out / "trace.csv")[0].keys() == {"round", "group", "bin_lo", "bin_hi", "signed_violation",
                                                         "step_applied"}
        cmap = CalibrationMap.from_dict(json.loads((out / "map.json").read_text()))
        assert len(cmap) == rep["fit"]["rounds"]

    def test_temperature_on_calibrated_scores(self, tmp_path):
        rng = np.random.default_rng(1)
        z = rng.uniform(-3, 3, 50_000)
        recs = Records(sigmoid(z), np.zeros((z.size, 1), bool) | (z > 0)[:, None], (rng.random(z.size) < sigmoid(z)))
        src = write_records(tmp_path / "r.csv", recs)
        assert main(["weakview", src, "--regime", "pn", "--split", "--out", str(tmp_path / "v")]) == 0
        assert main(["calibrate", str(tmp_path / "v" / "correction"), "--test", str(tmp_path / "v" / "test"),
                     "--method", "temp", "--out", str(tmp_path / "c")]) == 0
        rep = json.loads((tmp_path / "c" / "report.json").read_text())
        assert abs(rep["fit"]["params"][0] - 1.0) <= 0.05
        assert abs(rep["after"]["ece"] - rep["before"]["ece"]) <= 0.02

    def test_select_best(self, tmp_path, pn_views):
        assert main(["calibrate", str(pn_views / "correction"), "--test", str(pn_views / "test"), "--select-best",
                     "--val", str(pn_views / "validation"), "--out", str(tmp_path / "c")]) == 0
        rep = json.loads((tmp_path / "c" / "report.json").read_text())
        sel = rep["fit"]["selection"]
        assert rep["method"] == min(sel, key=sel.get)

    def test_select_best_needs_val(self, tmp_path, pn_views):
        assert main(["calibrate", str(pn_views / "correction"), "--test", str(pn_views / "test"), "--select-best",
                     "--out", str(tmp_path / "c")]) == 2

    def test_unknown_method(self, tmp_path, pn_views):
        assert main(["calibrate", str(pn_views / "correction"), "--test", str(pn_views / "test"),
                     "--method", "isotonic", "--out", str(tmp_path / "c")]) == 2

    def test_fresh_batches(self, tmp_path, pn_views):
        assert main(["calibrate", str(pn_views / "correction"), "--test", str(pn_views / "test"), "--fresh-batches",
                     "--rounds", "4", "--out", str(tmp_path / "c")]) == 0
        assert len(csv_rows(tmp_path / "c" / "trace.csv")) <= 5

    def test_no_command_is_usage_error(self):
        assert main([]) == 2
