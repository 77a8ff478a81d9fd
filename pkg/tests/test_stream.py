import numpy as np
import pytest

from fraudstream.exceptions import ConfigError, DatasetParseError
from fraudstream.stream import (
    Dataset,
    GenConfig,
    day_batch,
    export_dataset,
    generate_stream,
    load_dataset,
)

HEADER = "day,seq,trx_id,card_id,amount,f1,label\n"


def small(**kw):
    base = dict(days=4, transactions_per_day=500, fraud_rate=0.01, n_features=5, seed=3)
    base.update(kw)
    return generate_stream(GenConfig(**base))


class TestDataset:
    def test_rows_sorted_by_day_then_seq(self):
        ds = Dataset([1, 0, 0], [0, 1, 0], ["c", "b", "a"], ["x", "y", "x"], [1.0, 2.0, 3.0],
                     [[1.0, 0], [2.0, 0], [3.0, 0]], [0, 1, 0])
        assert ds.trx_id.tolist() == ["a", "b", "c"]
        assert ds.day_sizes().tolist() == [2, 1]

    def test_columns_are_read_only(self):
        ds = small()
        with pytest.raises(ValueError):
            ds.X[0, 0] = 1.0

    def test_card_index_consistent(self):
        ds = small()
        for card, trx in ds.card_index.items():
            rows = ds.card_rows(card)
            assert ds.trx_id[rows].tolist() == trx
            assert set(ds.card_id[rows].tolist()) == {card}
        assert sum(len(v) for v in ds.card_index.values()) == len(ds)

    def test_day_batches_partition(self):
        ds = small()
        ids = [t.trx_id for d in range(ds.n_days) for t in day_batch(ds, d)]
        assert len(ids) == len(set(ids)) == len(ds)
        batch = day_batch(ds, 1)
        assert [t.seq for t in batch] == sorted(t.seq for t in batch)
        assert all(t.features[0] == t.amount for t in batch)

    def test_day_out_of_range(self):
        with pytest.raises(IndexError):
            day_batch(small(days=2), 5)


class TestCsv:
    def test_round_trip_is_exact(self, tmp_path):
        ds = small()
        p = tmp_path / "d.csv"
        export_dataset(ds, p)
        back = load_dataset(p)
        assert back == ds and back.digest() == ds.digest()
        export_dataset(back, tmp_path / "e.csv")
        assert (tmp_path / "e.csv").read_bytes() == p.read_bytes()

    def test_day_sizes_from_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text(HEADER + "0,0,t1,c1,1.5,0.2,0\n0,1,t2,c1,2.0,0.1,1\n1,0,t3,c2,3.0,0.3,0\n")
        ds = load_dataset(p)
        assert ds.day_sizes().tolist() == [2, 1] and ds.n_features == 2
        assert ds.ground_truth() == {"t1": 0, "t2": 1, "t3": 0}

    @pytest.mark.parametrize("rows,column,row", [
        ("0,0,t1,c1,1.5,0.2,0\n0,1,t2,c1,2.0,0.1,1\n0,2,t1,c2,3.0,0.3,0\n", "trx_id", 3),
        ("0,0,t1,c1,1.5,abc,0\n", "f1", 1),
        ("0,0,t1,c1,-1.5,0.2,0\n", "amount", 1),
        ("0,0,t1,c1,1.5,0.2,7\n", "label", 1),
    ])
    def test_errors_name_row_and_column(self, tmp_path, rows, column, row):
        p = tmp_path / "d.csv"
        p.write_text(HEADER + rows)
        with pytest.raises(DatasetParseError) as err:
            load_dataset(p)
        assert err.value.row == row and err.value.column == column
        assert f"at row {row}" in str(err.value)

    def test_duplicate_message(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text(HEADER + "0,0,t1,c1,1.5,0.2,0\n0,1,t2,c1,2.0,0.1,1\n0,2,t1,c2,3.0,0.3,0\n")
        with pytest.raises(DatasetParseError, match="duplicate trx_id at row 3"):
            load_dataset(p)

    def test_missing_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("day,seq,trx_id,amount,f1,label\n0,0,t1,1.0,0.2,0\n")
        with pytest.raises(DatasetParseError, match="card_id"):
            load_dataset(p)


class TestGenerator:
    def test_size_and_exact_fraud_count(self):
        ds = generate_stream(GenConfig(days=2, transactions_per_day=1000, fraud_rate=0.002, seed=7))
        assert len(ds) == 2000 and ds.n_days == 2
        assert 2 <= int(ds.y.sum()) <= 6
        assert ds.n_features == 32

    def test_deterministic(self):
        assert small().digest() == small().digest()
        assert small().digest() != small(seed=4).digest()

    def test_fraud_cards_hold_frauds(self):
        ds = small()
        fraud_cards = set(ds.card_id[ds.y == 1].tolist())
        assert fraud_cards
        for c in fraud_cards:
            assert ds.y[ds.card_rows(c)].sum() >= 1

    def test_amount_is_feature_zero_and_nonnegative(self):
        ds = small()
        assert np.array_equal(ds.X[:, 0], ds.amount) and ds.amount.min() >= 0

    def test_zero_drift_is_identity(self):
        assert small(drift_day=2, drift_magnitude=0.0) == small()

    def test_drift_moves_only_later_frauds(self):
        a, b = small(), small(drift_day=2, drift_magnitude=5.0)
        changed = np.any(a.X != b.X, axis=1)
        assert np.all(b.y[changed] == 1) and np.all(b.day[changed] >= 2)
        assert changed.any()

    def test_realised_rate_over_seeds(self):
        rates = [generate_stream(GenConfig(days=1, transactions_per_day=10_000, n_features=4, seed=s)).y.mean()
                 for s in range(10)]
        assert abs(np.mean(rates) / 0.002 - 1) <= 0.05

    @pytest.mark.parametrize("bad", [
        dict(days=0), dict(fraud_rate=0.0), dict(fraud_rate=0.5), dict(genuine_scale=0.0),
        dict(fraud_scale=float("nan")), dict(transactions_per_card=0.5),
    ])
    def test_invalid_config(self, bad):
        with pytest.raises(ConfigError):
            generate_stream(GenConfig(**bad))
