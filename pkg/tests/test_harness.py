import io
import logging

import numpy as np
import pytest

from fraudstream.evaluation import write_records
from fraudstream.exceptions import BudgetExceededError, ConfigError, TrainingError
from fraudstream.harness import experiment as experiment_mod
from fraudstream.harness.config import ExperimentConfig, dump_config, parse_config
from fraudstream.harness.experiment import initial_set, m_sweep, run_experiment
from fraudstream.harness.ledger import (
    DELAYED,
    INVESTIGATOR,
    PSEUDO,
    LabelLedger,
    Oracle,
)
from fraudstream.harness.simulation import Simulation, init_training_set
from fraudstream.stream import GenConfig, generate_stream

GEN = GenConfig(days=14, transactions_per_day=400, fraud_rate=0.02, n_features=6, seed=11)


@pytest.fixture(scope="module")
def ds():
    return generate_stream(GEN)


def config(**kw):
    base = dict(generator=GEN, k=20, q=4, m=50, delay=3, warmup=4, repetitions=2, n_trees=4,
                max_depth=6, feedback_window=3, delayed_window=5)
    base.update(kw)
    return ExperimentConfig(**base).validate()


def csv_bytes(records):
    buf = io.StringIO()
    write_records(records, buf)
    return buf.getvalue()


class TestInitialSet:
    def test_all_warmup_frauds_and_equal_genuines(self, ds):
        rows, labels = init_training_set(ds, 4, np.random.default_rng(0))
        warm = np.flatnonzero(ds.day < 4)
        assert set(rows[labels == 1].tolist()) == set(warm[ds.y[warm] == 1].tolist())
        assert (labels == 0).sum() == (labels == 1).sum()
        assert np.all(ds.day[rows] < 4) and np.all(np.diff(rows) > 0)
        assert np.array_equal(ds.y[rows], labels)

    def test_bad_window(self, ds):
        with pytest.raises(ValueError):
            init_training_set(ds, 0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            init_training_set(ds, ds.n_days, np.random.default_rng(0))

    def test_no_frauds(self):
        clean = generate_stream(GenConfig(days=3, transactions_per_day=200, fraud_rate=0.001,
                                          n_features=3, seed=0))
        first = np.flatnonzero(clean.y)[0]
        warm = int(clean.day[first])
        if warm >= 1:
            with pytest.raises(TrainingError):
                init_training_set(clean, warm, np.random.default_rng(0))


class TestLedger:
    def test_transitions(self):
        led = LabelLedger(6)
        led.record_investigator([0, 1], [1, 0], day=0)
        led.record_pseudo([2, 3], day=0)
        with pytest.raises(ValueError):
            led.record_investigator([1], [0], day=1)
        with pytest.raises(ValueError):
            led.record_pseudo([0], day=1)
        sup = led.record_delayed(np.arange(6), [1, 0, 1, 0, 0, 1], day=2)
        assert sup.tolist() == [2, 3]
        assert led.state.tolist() == [INVESTIGATOR, INVESTIGATOR, DELAYED, DELAYED, DELAYED, DELAYED]
        assert led.label.tolist() == [1, 0, 1, 0, 0, 1]
        assert led.superseded.tolist() == [False, False, True, True, False, False]
        assert led.counts()["InvestigatorLabeled"] == 2

    def test_pseudo_label_cannot_be_investigated(self):
        led = LabelLedger(2)
        led.record_pseudo([0], 0)
        with pytest.raises(ValueError):
            led.record_investigator([0], [1], 1)

    def test_duplicate_rows_rejected(self):
        with pytest.raises(ValueError):
            LabelLedger(3).record_investigator([1, 1], [0, 0], day=0)

    def test_pseudo_state(self):
        led = LabelLedger(2)
        led.record_pseudo([1], 5)
        assert led.state[1] == PSEUDO and led.label[1] == 0 and led.daily_pseudo == {5: 1}


class TestOracle:
    def test_budget_per_day(self):
        o = Oracle(np.zeros(200, dtype=int), budget=100)
        o.start_day(0)
        for i in range(100):
            o.label([i])
        with pytest.raises(BudgetExceededError):
            o.label([100])
        o.start_day(1)
        o.label([100])

    def test_channels_logged(self):
        o = Oracle(np.array([0, 1, 0]), budget=5)
        o.start_day(3)
        assert o.label([1]).tolist() == [1]
        o.delayed([0])
        o.evaluation_truth([2])
        assert [c for c, _, _ in o.log] == ["query", "delayed", "metrics"]
        assert o.queried_rows().tolist() == [1]


@pytest.fixture(scope="module")
def sim(ds):
    cfg = config(eval_days=8)
    s = Simulation(ds, cfg, "SR-U", 0, initial_set(ds, cfg, 0))
    s.states = [s.run_day(d) for d in s.eval_days()]
    return s


class TestTransactionLoop:
    def test_no_pseudo_label_is_ever_queried(self, sim):
        queried = set(sim.oracle.queried_rows().tolist())
        pseudo = set(np.concatenate([st.pseudo for st in sim.states]).tolist())
        assert queried and pseudo and not queried & pseudo

    def test_daily_budgets(self, sim):
        for st in sim.states:
            assert len(st.exploit) == sim.spec.exploit_budget and len(st.explore) == sim.spec.q
            assert len(st.pseudo) == 50
            assert len(set(st.exploit.tolist()) | set(st.explore.tolist())) == sim.spec.k
            assert np.all(sim.ds.day[st.revealed] == st.day) and np.all(sim.ds.day[st.pseudo] == st.day)
        assert all(v == sim.spec.k for v in sim.ledger.daily_investigations.values())

    def test_exploit_is_top_of_pool(self, sim):
        for st in sim.states:
            pool = sim.ds.day_rows(st.day)
            top = np.sort(st.scores)[::-1][sim.spec.exploit_budget - 1]
            assert np.all(st.scores[np.isin(pool, st.exploit)] >= top)

    def test_delayed_truth_respects_latency(self, sim):
        for ch, day, rows in sim.oracle.log:
            if ch == "delayed" and day is not None:
                # released at the end of ``day`` for use from ``day + 1`` on
                assert sim.ds.day[rows].max() <= day + 1 - sim.cfg.delay

    def test_superseded_pseudo_labels_take_truth(self, sim):
        sup = np.flatnonzero(sim.ledger.superseded)
        assert sup.size
        assert np.array_equal(sim.train_label[sup], sim.ds.y[sup].astype(np.int8))


class TestCardLoop:
    def test_alerts_are_cards_within_budget(self, ds, caplog):
        cfg = config(pipeline="card", eval_days=5, strategies=("SR-U",))
        sim = Simulation(ds, cfg, "SR-U", 0, initial_set(ds, cfg, 0))
        with caplog.at_level(logging.INFO, logger="fraudstream"):
            states = [sim.run_day(d) for d in sim.eval_days()]
        assert "no two-class feedback" in caplog.text
        for st in states:
            alerted = np.concatenate([st.exploit, st.explore])
            assert len(alerted) == len(set(alerted.tolist())) == sim.spec.k
            assert set(sim.ds.card_code[st.revealed].tolist()) <= set(alerted.tolist())
            assert np.all(sim.ds.day[st.revealed] <= st.day)
            assert not set(st.pseudo.tolist()) & set(sim.oracle.queried_rows().tolist())
        assert max(sim.ledger.daily_investigations.values()) <= sim.spec.k


class TestExperiment:
    def test_grid_and_shared_initial_set(self, ds):
        cfg = config(strategies=("HRQ", "SR"), eval_days=10)
        res = run_experiment(cfg, ds)
        assert len(res.records) == 2 * 2 * 10 and not res.failures
        assert [(r.strategy, r.rep) for r in res.records[::10]] == [("HRQ", 0), ("HRQ", 1), ("SR", 0), ("SR", 1)]
        assert set(res.initial_digests) == {0, 1}
        again = run_experiment(cfg.with_changes(strategies=("SR",)), ds)
        assert again.initial_digests == res.initial_digests

    def test_deterministic_and_job_invariant(self, ds):
        cfg = config(strategies=("HRQ", "SR-U"), eval_days=4)
        a = csv_bytes(run_experiment(cfg, ds).records)
        b = csv_bytes(run_experiment(cfg, ds).records)
        c = csv_bytes(run_experiment(cfg.with_changes(n_jobs=2), ds).records)
        assert a == b == c

    def test_zero_pseudo_labels_equals_hrq(self, ds):
        cfg = config(strategies=("HRQ", "SR"), m=0, eval_days=5, repetitions=1)
        recs = run_experiment(cfg, ds).records
        hrq = [r.topk_precision for r in recs if r.strategy == "HRQ"]
        sr = [r.topk_precision for r in recs if r.strategy == "SR"]
        assert hrq == sr

    def test_full_budget_precision_is_base_rate(self, ds):
        cfg = config(strategies=("HRQ",), k=400, q=0, eval_days=3, repetitions=1)
        for r in run_experiment(cfg, ds).records:
            pool = ds.day_rows(r.day)
            assert r.topk_precision == pytest.approx(ds.y[pool].mean())

    def test_failing_cell_is_isolated(self, ds, monkeypatch):
        real = experiment_mod.Simulation

        class Flaky(real):
            def run(self):
                if self.spec.name == "SR":
                    raise RuntimeError("boom")
                return super().run()

        monkeypatch.setattr(experiment_mod, "Simulation", Flaky)
        res = run_experiment(config(strategies=("HRQ", "SR"), eval_days=2, repetitions=1), ds)
        assert res.failures == [("SR", 0, "RuntimeError: boom")]
        assert {r.strategy for r in res.records} == {"HRQ"}

    def test_m_sweep_rows(self, ds):
        res = m_sweep(config(eval_days=3, repetitions=1), [0, 50], dataset=ds)
        assert [r["m"] for r in res.rows] == [0, 50]
        assert {"mean", "median", "pvalue", "in_best_set"} <= set(res.rows[0])
        assert res.initial_digests[0] == res.initial_digests[50]


class TestConfig:
    def test_round_trip(self):
        cfg = config(strategies=("HRQ", "SRN[25]"), balanced=True)
        assert parse_config(dump_config(cfg)) == cfg

    def test_defaults_and_generator_keys(self):
        cfg = parse_config("k = 50\ndata_seed = 9\ndays = 12\nstrategies = HRQ, SR-U  # inline\n")
        assert cfg.k == 50 and cfg.generator.seed == 9 and cfg.generator.days == 12
        assert cfg.strategies == ("HRQ", "SR-U")
        assert cfg.forest_params()["balanced"] is False
        assert parse_config("pipeline = card").forest_params()["balanced"] is True

    @pytest.mark.parametrize("text", ["bogus = 1", "k = ten", "balanced = maybe", "[s]\nk = 1",
                                      "strategies = HRQ,XYZ", "pipeline = both",
                                      "strategies = EAL-R\nq = 200"])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_seed_from_environment(self, monkeypatch):
        monkeypatch.setenv("FRAUDSTREAM_SEED", "42")
        assert parse_config("seed = 1").seed == 42
        monkeypatch.setenv("FRAUDSTREAM_SEED", "x")
        with pytest.raises(ConfigError):
            parse_config("")
