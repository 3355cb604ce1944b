import json

import numpy as np
import pytest

from metaboot.cli import AnalysisRequest, main, run
from metaboot.datasets import dataset_path, nicotine_gum
from metaboot.errors import EmptyDataset, InvalidRequest, RowError, SchemaError
from metaboot.ingest import export_csv, ingest_csv
from metaboot.model import MetaDataset


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestIngest:
    def test_fisher_z(self, tmp_path):
        rows = "\n".join(f"s{i},{40 + i},{0.1 * (i % 5)}" for i in range(13))
        ds = ingest_csv(write(tmp_path, "study,n,r\n" + rows + "\n"), "fcor")
        assert ds.k == 13
        assert ds.labels[0] == "s0"

    def test_bad_correlation_line(self, tmp_path):
        path = write(tmp_path, "n,r\n20,0.1\n25,1.2\n30,0.3\n")
        with pytest.raises(RowError) as err:
            ingest_csv(path, "fcor")
        assert err.value.line == 3
        assert "line 3" in str(err.value)

    def test_smd_adjust(self, tmp_path):
        ds = ingest_csv(write(tmp_path, "n1,n2,est\n12,12,0.5\n20,20,0.1\n"), "smd", adjust=True)
        assert ds.estimates[0] == pytest.approx(0.482759, abs=1e-6)

    def test_smd_summaries(self, tmp_path):
        ds = ingest_csv(write(tmp_path, "n1,n2,mean1,mean2,sd1,sd2\n10,10,1,0,1,1\n15,12,0,0,2,1\n"), "smd")
        assert ds.estimates[0] == pytest.approx(0.957746, abs=1e-6)

    def test_log_or_and_moderators(self, tmp_path):
        ds = ingest_csv(write(tmp_path, "n00,n01,n10,n11,year\n10,10,10,10,1\n20,10,10,20,2\n5,6,7,8,4\n"),
                        "lnor", ["year"])
        assert ds.p == 1
        assert ds.moderator_names == ("year",)
        assert ds.estimates[1] == pytest.approx(np.log(4))

    def test_generic_columns(self, tmp_path):
        ds = ingest_csv(write(tmp_path, "est,var\n0.1,0.02\n0.3,0.05\n"), "fcor")
        assert list(ds.variances) == [0.02, 0.05]

    def test_missing_columns(self, tmp_path):
        with pytest.raises(SchemaError):
            ingest_csv(write(tmp_path, "a,b\n1,2\n3,4\n"), "lnor")

    def test_missing_moderator(self, tmp_path):
        with pytest.raises(SchemaError):
            ingest_csv(write(tmp_path, "n,r\n20,0.1\n30,0.2\n"), "fcor", ["age"])

    def test_adjust_only_smd(self, tmp_path):
        with pytest.raises(SchemaError):
            ingest_csv(write(tmp_path, "n,r\n20,0.1\n30,0.2\n"), "fcor", adjust=True)

    def test_non_numeric(self, tmp_path):
        with pytest.raises(RowError) as err:
            ingest_csv(write(tmp_path, "n,r\n20,0.1\nabc,0.2\n"), "fcor")
        assert err.value.line == 3

    def test_single_study(self, tmp_path):
        with pytest.raises(EmptyDataset):
            ingest_csv(write(tmp_path, "n,r\n20,0.1\n"), "fcor")

    def test_empty_file(self, tmp_path):
        with pytest.raises(SchemaError):
            ingest_csv(write(tmp_path, ""), "fcor")


class TestRoundTrip:
    def test_log_or(self, tmp_path):
        ds = nicotine_gum()
        export_csv(ds, tmp_path / "out.csv")
        assert ingest_csv(tmp_path / "out.csv", "lnor") == ds

    def test_smd_with_moderators(self, tmp_path):
        src = write(tmp_path, "n1,n2,mean1,mean2,sd1,sd2,dose\n10,11,1.3,0.2,1.1,0.9,0.1\n"
                              "15,12,0.4,0.1,2,1,0.7\n30,33,0.1,0.15,1,1.2,0.3\n")
        ds = ingest_csv(src, "smd", ["dose"])
        export_csv(ds, tmp_path / "out.csv")
        assert ingest_csv(tmp_path / "out.csv", "smd", ["dose"]) == ds

    def test_generic(self, tmp_path):
        ds = MetaDataset.from_arrays([0.1 / 3, 0.7, -0.2], [0.02, 1 / 7, 0.05], kind="fcor")
        export_csv(ds, tmp_path / "out.csv")
        assert ingest_csv(tmp_path / "out.csv", "fcor") == ds


class TestRequest:
    def test_mixed_needs_mods(self):
        with pytest.raises(InvalidRequest):
            AnalysisRequest("fit", effect="smd", input_path="x.csv", model="mixed")

    def test_adjust_only_smd(self):
        with pytest.raises(InvalidRequest):
            AnalysisRequest("fit", effect="lnor", input_path="x.csv", adjust=True)

    def test_lambda_with_classical(self):
        with pytest.raises(InvalidRequest):
            AnalysisRequest("test", effect="lnor", input_path="x.csv", stat=("q",), lam=0.1)


class TestRun:
    def test_fit_nicotine(self):
        report = run(AnalysisRequest("fit", effect="lnor", input_path=str(dataset_path("nicotine_gum"))))
        reml = next(r for r in report.records if r.get("method") == "REML")
        assert round(reml["mu_delta"], 2) == 0.56
        assert round(reml["tau2"], 2) == 0.05
        het = next(r for r in report.records if r["record"] == "heterogeneity")
        assert het["df"] == 25 and het["i2"] is not None

    def test_test_records_echo_seed(self):
        report = run(AnalysisRequest("test", effect="lnor", input_path=str(dataset_path("nicotine_gum")),
                                     stat=("q", "b_q"), nrep=200, seed=17))
        tests = [r for r in report.records if r["record"] == "test"]
        assert [t["stat"] for t in tests] == ["q", "b_q"]
        assert tests[1]["seed"] == 17 and tests[1]["n_bootstrap"] == 200


class TestMain:
    def test_json_is_deterministic(self, capsys):
        argv = ["test", "--effect", "lnor", "--dataset", "nicotine_gum", "--stat", "b_reml_lrt,q",
                "--nrep", "300", "--seed", "4", "--output", "json"]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        assert capsys.readouterr().out == first
        records = [json.loads(line) for line in first.splitlines()]
        assert records[0]["record"] == "dataset"

    def test_text_output(self, capsys):
        assert main(["fit", "--effect", "lnor", "--dataset", "nicotine_gum"]) == 0
        out = capsys.readouterr().out
        assert "REML" in out and "Q=" in out

    def test_single_study_fails(self, tmp_path, capsys):
        path = write(tmp_path, "n,r\n20,0.3\n")
        assert main(["test", "--effect", "fcor", "--input", str(path)]) != 0
        assert "error[cli.EmptyDataset]" in capsys.readouterr().err

    def test_module_error_code(self, tmp_path, capsys):
        path = write(tmp_path, "n,r\n20,0.3\n25,0.5\n")
        assert main(["test", "--effect", "fcor", "--input", str(path), "--stat", "q", "--lambda", "0.1"]) == 1
        assert "error[cli.InvalidRequest]" in capsys.readouterr().err

    def test_bad_effect(self, tmp_path, capsys):
        path = write(tmp_path, "n,r\n20,0.3\n25,0.5\n")
        assert main(["fit", "--effect", "xyz", "--input", str(path)]) == 1

    def test_simulate(self, tmp_path, capsys):
        grid = write(tmp_path, "[grid]\nk = 5\nsize = 24\nstats = q,b_q\nreplications = 3\nbootstrap = 40\n",
                     "grid.ini")
        assert main(["simulate", "--config", str(grid), "--output", "json"]) == 0
        records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert {r["test"] for r in records} == {"q", "b_q"}
