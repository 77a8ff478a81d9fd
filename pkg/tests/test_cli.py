import csv
import json

import pytest

from fraudstream.cli import main
from fraudstream.stream import load_dataset

SMALL = """\
days = 10
transactions_per_day = 300
fraud_rate = 0.02
n_features = 5
data_seed = 4
strategies = HRQ, SR
k = 15
q = 3
m = 40
delay = 2
warmup = 3
eval_days = 6
repetitions = 2
n_trees = 3
max_depth = 5
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(SMALL)
    return p


class TestGenerate:
    def test_writes_loadable_csv(self, cfg_path, tmp_path, capsys):
        out = tmp_path / "d.csv"
        assert main(["generate", "--config", str(cfg_path), "--out", str(out)]) == 0
        ds = load_dataset(out)
        assert len(ds) == 3000 and ds.n_days == 10
        assert "3000 transactions" in capsys.readouterr().out

    def test_unknown_key_is_config_error(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("bogus = 1\n")
        assert main(["generate", "--config", str(p), "--out", str(tmp_path / "d.csv")]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["generate", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "d.csv")]) == 1


class TestRunAndCompare:
    def test_run_then_compare(self, cfg_path, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
        with open(out / "records.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 2 * 6
        report = json.loads((out / "report.json").read_text())
        assert report["failures"] == [] and set(report["rankings"]) == {"topk", "aucpr", "aucroc", "amount"}
        capsys.readouterr()
        assert main(["compare", "--records", str(out / "records.csv"), "--metric", "aucpr"]) == 0
        ranking = json.loads(capsys.readouterr().out)
        assert ranking["metric"] == "auc_pr" and set(ranking["best_set"]) <= {"HRQ", "SR"}

    def test_failed_cell_exits_two(self, tmp_path):
        p = tmp_path / "exp.cfg"
        # the warmup window of this stream holds no fraud, so every cell fails
        p.write_text(SMALL.replace("fraud_rate = 0.02", "fraud_rate = 0.0005").replace("warmup = 3", "warmup = 1")
                     .replace("transactions_per_day = 300", "transactions_per_day = 100"))
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_compare_missing_file(self, tmp_path):
        assert main(["compare", "--records", str(tmp_path / "none.csv")]) == 2


class TestSweep:
    def test_prints_one_row_per_value(self, cfg_path, capsys):
        assert main(["sweep-m", "--config", str(cfg_path), "--values", "0,40"]) == 0
        rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
        assert [r["m"] for r in rows] == ["0", "40"]

    def test_bad_values(self, cfg_path):
        assert main(["sweep-m", "--config", str(cfg_path), "--values", "a,b"]) == 1


class TestViz:
    @pytest.fixture
    def data(self, cfg_path, tmp_path):
        out = tmp_path / "d.csv"
        main(["generate", "--config", str(cfg_path), "--out", str(out)])
        return out

    def test_outputs(self, data, tmp_path):
        ds = load_dataset(data)
        q = tmp_path / "q.csv"
        q.write_text("trx_id,set\n" + "".join(f"{t},hrq\n" for t in ds.trx_id[:5]) + f"{ds.trx_id[9]},sr\n")
        out = tmp_path / "viz"
        assert main(["viz", "--dataset", str(data), "--queries", str(q), "--out", str(out),
                     "--resolution", "30", "--bins", "10", "--trees", "3"]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["figure.svg", "grid_fraud.csv", "grid_genuine.csv", "overlay_hrq.csv",
                         "overlay_sr.csv", "score_report.csv"]
        with open(out / "score_report.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 10

    def test_unknown_query_id(self, data, tmp_path):
        q = tmp_path / "q.csv"
        q.write_text("trx_id\nnot-a-transaction\n")
        assert main(["viz", "--dataset", str(data), "--queries", str(q), "--out", str(tmp_path / "v")]) == 2

    def test_bad_train_days(self, data, tmp_path):
        assert main(["viz", "--dataset", str(data), "--out", str(tmp_path / "v"), "--train-days", "10"]) == 1


def test_subcommand_required():
    with pytest.raises(SystemExit):
        main([])
