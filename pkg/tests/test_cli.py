"""End-to-end CLI pipeline on the synthetic fixture, plus error paths."""

import json

import numpy as np
import pytest

from taxidest import fixtures
from taxidest.cli import main


@pytest.fixture(scope="module")
def city_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixture") / "city.csv"
    fixtures.generate_city_csv(path, 60, seed=3)
    return path


@pytest.fixture(scope="module")
def prepared_dir(tmp_path_factory, city_csv):
    out = tmp_path_factory.mktemp("prepared") / "data"
    rc = main(
        ["prepare", "--input", str(city_csv), "--out", str(out), "--val", "8", "--test", "8", "--seed", "1"]
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def cluster_csv(tmp_path_factory, prepared_dir):
    path = tmp_path_factory.mktemp("clusters") / "clusters.csv"
    rc = main(["cluster", "--data", str(prepared_dir), "--out", str(path)])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def trained_ckpt(tmp_path_factory, prepared_dir, cluster_csv):
    path = tmp_path_factory.mktemp("model") / "model.ckpt"
    rc = main(
        [
            "train",
            "--data", str(prepared_dir),
            "--clusters", str(cluster_csv),
            "--variant", "mlp_clusters",
            "--k", "3",
            "--hidden", "16",
            "--embedding-dim", "4",
            "--batch", "16",
            "--max-batches", "40",
            "--validate-every", "10",
            "--patience", "99",
            "--seed", "2",
            "--out", str(path),
        ]
    )
    assert rc == 0
    return path


class TestPrepare:
    def test_outputs_exist_and_disjoint(self, prepared_dir):
        manifest = json.loads((prepared_dir / "splits.json").read_text())
        train, val, test = (
            set(manifest["train"]),
            set(manifest["validation"]),
            set(manifest["test"]),
        )
        assert len(val) == 8 and len(test) == 8
        assert not (train & val) and not (train & test) and not (val & test)
        assert (prepared_dir / "records.bin").exists()
        assert (prepared_dir / "stats.json").exists()
        assert (prepared_dir / "vocab.json").exists()
        assert set(manifest["validation_cuts"]) == val
        assert set(manifest["test_cuts"]) == test

    def test_rerun_same_seed_identical_manifest(self, tmp_path, city_csv):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            rc = main(
                ["prepare", "--input", str(city_csv), "--out", str(out), "--val", "5", "--test", "5", "--seed", "9"]
            )
            assert rc == 0
        assert (out1 / "splits.json").read_bytes() == (out2 / "splits.json").read_bytes()
        assert (out1 / "records.bin").read_bytes() == (out2 / "records.bin").read_bytes()

    def test_val_test_exceeding_records_fails_cleanly(self, tmp_path, city_csv):
        rc = main(
            ["prepare", "--input", str(city_csv), "--out", str(tmp_path / "x"), "--val", "40", "--test", "40"]
        )
        assert rc == 2

    def test_missing_input_fails_cleanly(self, tmp_path):
        rc = main(
            ["prepare", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "d")]
        )
        assert rc == 2


class TestCluster:
    def test_prints_center_count(self, prepared_dir, cluster_csv, capsys):
        # rerun to capture stdout deterministically
        rc = main(["cluster", "--data", str(prepared_dir), "--out", str(cluster_csv)])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.startswith("C=")
        n = int(out.strip().split("=")[1])
        lines = cluster_csv.read_text().splitlines()
        assert lines[0] == "lat,lon"
        assert len(lines) - 1 == n

    def test_two_blob_fixture_gives_two_centers(self, tmp_path, capsys):
        # synthetic two-destination corpus through the whole prepare+cluster path
        import math

        from taxidest.geo import EARTH

        rows = ["TRIP_ID,CALL_TYPE,ORIGIN_CALL,ORIGIN_STAND,TAXI_ID,TIMESTAMP,DAY_TYPE,MISSING_DATA,POLYLINE"]
        rng = np.random.default_rng(0)
        deg_m = EARTH.radius_m * math.pi / 180
        for i in range(30):
            which = i % 2
            lat = 41.15 + which * 5000 / deg_m + rng.normal(0, 50 / deg_m)
            lon = -8.61 + rng.normal(0, 50 / deg_m)
            poly = f'"[[-8.61,41.15],[{lon:.6f},{lat:.6f}]]"'
            rows.append(f"B{i},C,,,1,1400000000,A,False,{poly}")
        csv_path = tmp_path / "blobs.csv"
        csv_path.write_text("\n".join(rows) + "\n")
        data_dir = tmp_path / "data"
        assert main(["prepare", "--input", str(csv_path), "--out", str(data_dir), "--val", "0", "--test", "0"]) == 0
        out_csv = tmp_path / "c.csv"
        assert main(["cluster", "--data", str(data_dir), "--out", str(out_csv)]) == 0
        assert capsys.readouterr().out.strip().splitlines()[-1] == "C=2"

    def test_missing_data_dir(self, tmp_path):
        rc = main(["cluster", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "c.csv")])
        assert rc == 2


class TestTrain:
    def test_report_written(self, trained_ckpt):
        report = trained_ckpt.parent / (trained_ckpt.name + ".report.jsonl")
        lines = [json.loads(l) for l in report.read_text().splitlines()]
        assert len(lines) >= 2
        assert "stop_reason" in lines[-1]

    def test_direct_variant_needs_no_clusters(self, tmp_path, prepared_dir):
        path = tmp_path / "direct.ckpt"
        rc = main(
            [
                "train",
                "--data", str(prepared_dir),
                "--variant", "mlp_direct",
                "--k", "2", "--hidden", "8", "--embedding-dim", "2",
                "--batch", "8", "--max-batches", "10", "--validate-every", "5",
                "--out", str(path),
            ]
        )
        assert rc == 0 and path.exists()

    def test_cluster_variant_without_clusters_fails(self, tmp_path, prepared_dir):
        rc = main(
            ["train", "--data", str(prepared_dir), "--variant", "mlp_clusters", "--out", str(tmp_path / "x.ckpt")]
        )
        assert rc == 2

    def test_unknown_variant_usage_error(self, tmp_path, prepared_dir, capsys):
        with pytest.raises(SystemExit) as e:
            main(
                ["train", "--data", str(prepared_dir), "--variant", "perceptron", "--out", str(tmp_path / "x.ckpt")]
            )
        assert e.value.code == 1
        err = capsys.readouterr().err
        assert "mlp_clusters" in err and "memory_net" in err


class TestEvaluate:
    def test_prints_mean_km(self, trained_ckpt, prepared_dir, capsys):
        rc = main(["evaluate", "--model", str(trained_ckpt), "--data", str(prepared_dir), "--split", "test"])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.startswith("mean_haversine_km ")
        assert np.isfinite(float(out.split()[1]))

    def test_perfect_memorization_prints_zero(self, tmp_path, capsys):
        # all destinations identical -> C=1 -> the model always predicts it
        rows = ["TRIP_ID,CALL_TYPE,ORIGIN_CALL,ORIGIN_STAND,TAXI_ID,TIMESTAMP,DAY_TYPE,MISSING_DATA,POLYLINE"]
        rng = np.random.default_rng(1)
        for i in range(12):
            lon0 = -8.61 + rng.normal(0, 0.01)
            lat0 = 41.15 + rng.normal(0, 0.01)
            poly = f'"[[{lon0:.6f},{lat0:.6f}],[-8.600000,41.140000]]"'
            rows.append(f"P{i},C,,,1,1400000000,A,False,{poly}")
        csv_path = tmp_path / "same.csv"
        csv_path.write_text("\n".join(rows) + "\n")
        data_dir = tmp_path / "data"
        assert main(["prepare", "--input", str(csv_path), "--out", str(data_dir), "--val", "2", "--test", "2"]) == 0
        ccsv = tmp_path / "c.csv"
        assert main(["cluster", "--data", str(data_dir), "--out", str(ccsv)]) == 0
        ckpt = tmp_path / "m.ckpt"
        assert main(
            [
                "train", "--data", str(data_dir), "--clusters", str(ccsv),
                "--k", "2", "--hidden", "4", "--embedding-dim", "2",
                "--batch", "4", "--max-batches", "4", "--validate-every", "2",
                "--dtype", "float64", "--out", str(ckpt),
            ]
        ) == 0
        capsys.readouterr()
        assert main(["evaluate", "--model", str(ckpt), "--data", str(data_dir), "--split", "test"]) == 0
        assert capsys.readouterr().out == "mean_haversine_km 0.000\n"

    def test_missing_checkpoint(self, prepared_dir, tmp_path):
        rc = main(["evaluate", "--model", str(tmp_path / "no.ckpt"), "--data", str(prepared_dir)])
        assert rc == 2


class TestPredict:
    def test_submission_format(self, trained_ckpt, tmp_path, city_csv):
        out = tmp_path / "submission.csv"
        rc = main(["predict", "--model", str(trained_ckpt), "--input", str(city_csv), "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "TRIP_ID,LATITUDE,LONGITUDE"
        assert len(lines) == 61
        first = lines[1].split(",")
        assert first[0] == "T000000"
        float(first[1]), float(first[2])

    def test_predictions_inside_cluster_bbox(self, trained_ckpt, tmp_path, city_csv, cluster_csv):
        out = tmp_path / "sub2.csv"
        assert main(["predict", "--model", str(trained_ckpt), "--input", str(city_csv), "--out", str(out)]) == 0
        centers = np.loadtxt(cluster_csv, delimiter=",", skiprows=1, ndmin=2)
        rows = np.loadtxt(out, delimiter=",", skiprows=1, usecols=(1, 2), ndmin=2)
        assert (rows[:, 0] >= centers[:, 0].min() - 1e-6).all()
        assert (rows[:, 0] <= centers[:, 0].max() + 1e-6).all()
        assert (rows[:, 1] >= centers[:, 1].min() - 1e-6).all()
        assert (rows[:, 1] <= centers[:, 1].max() + 1e-6).all()

    def test_empty_input_fails_cleanly(self, trained_ckpt, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text(
            "TRIP_ID,CALL_TYPE,ORIGIN_CALL,ORIGIN_STAND,TAXI_ID,TIMESTAMP,DAY_TYPE,MISSING_DATA,POLYLINE\n"
        )
        rc = main(["predict", "--model", str(trained_ckpt), "--input", str(empty), "--out", str(tmp_path / "s.csv")])
        assert rc == 2


class TestMemoryNetCli:
    def test_train_and_predict(self, tmp_path, prepared_dir, city_csv, capsys):
        ckpt = tmp_path / "mem.ckpt"
        rc = main(
            [
                "train",
                "--data", str(prepared_dir),
                "--variant", "memory_net",
                "--k", "2", "--hidden", "6", "--embedding-dim", "2",
                "--memory-m", "10",
                "--batch", "6", "--max-batches", "6", "--validate-every", "3",
                "--seed", "4",
                "--out", str(ckpt),
            ]
        )
        assert rc == 0
        out = tmp_path / "mem_sub.csv"
        rc = main(
            ["predict", "--model", str(ckpt), "--input", str(city_csv),
             "--out", str(out), "--data", str(prepared_dir)]
        )
        assert rc == 0
        assert len(out.read_text().splitlines()) == 61

    def test_predict_without_candidate_data_fails(self, tmp_path, prepared_dir, city_csv):
        ckpt = tmp_path / "mem2.ckpt"
        assert main(
            [
                "train", "--data", str(prepared_dir), "--variant", "memory_net",
                "--k", "2", "--hidden", "6", "--embedding-dim", "2",
                "--memory-m", "10", "--batch", "6", "--max-batches", "3",
                "--validate-every", "3", "--out", str(ckpt),
            ]
        ) == 0
        rc = main(["predict", "--model", str(ckpt), "--input", str(city_csv), "--out", str(tmp_path / "s.csv")])
        assert rc == 2


class TestExportEmbeddings:
    def test_quarter_hour_table(self, trained_ckpt, tmp_path):
        out = tmp_path / "emb.csv"
        rc = main(["export-embeddings", "--model", str(trained_ckpt), "--table", "quarter_hour", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert len(lines) - 1 == 96
        assert len(lines[1].split(",")) == 1 + 4  # index + embedding-dim used in training

    def test_week_table_row_count(self, trained_ckpt, tmp_path):
        out = tmp_path / "emb.csv"
        assert main(["export-embeddings", "--model", str(trained_ckpt), "--table", "week_of_year", "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) - 1 == 52

    def test_unknown_table_lists_valid_names(self, trained_ckpt, tmp_path, capsys):
        rc = main(["export-embeddings", "--model", str(trained_ckpt), "--table", "month", "--out", str(tmp_path / "e.csv")])
        assert rc == 2
        assert "quarter_hour" in capsys.readouterr().err


class TestFixtureCommand:
    def test_generates_parseable_csv(self, tmp_path):
        out = tmp_path / "city.csv"
        rc = main(["fixture", "--out", str(out), "--trips", "10", "--seed", "4"])
        assert rc == 0
        from taxidest.data import parse_csv

        with open(out, encoding="utf-8", newline="") as f:
            recs = list(parse_csv(f))
        assert len(recs) == 10
        assert all(r.usable for r in recs)
