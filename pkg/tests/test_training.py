import re

import numpy as np
import pytest

from riskmt import training
from riskmt.corpus import NoiseSpec, generate_corpus
from riskmt.metrics import corpus_bleu
from riskmt.model import (Checkpoint, ModelConfig, ParamSet, Seq2Seq, Vocab, load_checkpoint)
from riskmt.objectives import accumulate_gradients, mle_loss_and_grad
from riskmt.training import (AdamState, TrainConfig, TrainingDiverged, adam_step, decode_corpus,
                             finetune, micro_batches, train)

LOG_LINE = re.compile(r"^step=\d+ objective=(mle|mrt|doc_mrt) loss=\S+ val_bleu=\S+ streak=\d+$")


def tiny_task(seed=0, size=60):
    train_c = generate_corpus(size, 6, (1, 3), NoiseSpec(), seed=seed)
    valid_c = generate_corpus(10, 6, (1, 3), NoiseSpec(), seed=seed + 100)
    vocab = Vocab.build(train_c.sources() + train_c.targets())
    cfg = ModelConfig(len(vocab), 8, 8, max_len=8, seed=seed, init_scale=0.3)
    return train_c, valid_c, Seq2Seq(cfg, vocab)


def scalar_params(value):
    cfg = ModelConfig(5, 1, 1, max_len=2)
    p = ParamSet(cfg.shapes())
    p.flat[:] = value
    return p


class TestConfig:
    def test_parse(self):
        cfg = TrainConfig.parse("""
            # fine-tuning run
            objective = doc_mrt
            alpha=0.6   # sharpness
            n_samples=4
            include_reference=true
            cost=none
        """)
        assert cfg.objective == "doc_mrt" and cfg.n_samples == 4 and cfg.include_reference
        assert cfg.cost is None and cfg.learning_rate == 5e-4

    def test_round_trip(self):
        cfg = TrainConfig(objective="mrt", cost="document", tau=0.5, patience=2)
        assert TrainConfig.parse(cfg.dumps()) == cfg

    @pytest.mark.parametrize("text", ["bogus=1", "objective", "objective=sgd", "patience=0",
                                      "include_reference=maybe", "learning_rate=-1",
                                      "adam_beta2=1.0"])
    def test_errors(self, text):
        with pytest.raises(ValueError):
            TrainConfig.parse(text)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (5e-4, 0.9, 0.98, 1e-9)
        assert (cfg.checkpoint_every, cfg.micro_batch_tokens, cfg.accumulation_factor) == (200, 256, 4)
        assert cfg.patience == 3 and cfg.average_last == 3 and cfg.valid_beam == 4


class TestAdam:
    def test_hand_computed_step(self):
        state = AdamState.fresh(scalar_params(1.0))
        g = scalar_params(0.5)
        new = adam_step(state, g, 5e-4, 0.9, 0.98, 1e-9)
        # m = 0.05, v = 0.005; bias-corrected 0.5 and 0.25
        expected = 1.0 - 5e-4 * 0.5 / (0.5 + 1e-9)
        assert new.params.flat[0] == pytest.approx(expected, abs=1e-15)
        assert new.m[0] == pytest.approx(0.05, abs=1e-16)
        assert new.v[0] == pytest.approx(0.005, abs=1e-16)
        assert new.t == 1
        assert state.params.flat[0] == 1.0  # input state untouched

    def test_zero_gradient_from_fresh_state(self):
        state = AdamState.fresh(scalar_params(0.3))
        new = adam_step(state, scalar_params(0.0), 5e-4)
        assert np.array_equal(new.params.flat, state.params.flat)

    def test_zero_gradient_decays_moments(self):
        state = adam_step(AdamState.fresh(scalar_params(0.3)), scalar_params(2.0), 5e-4)
        new = adam_step(state, scalar_params(0.0), 5e-4)
        np.testing.assert_array_equal(new.m, 0.9 * state.m)
        np.testing.assert_array_equal(new.v, 0.98 * state.v)

    def test_deterministic(self):
        state = AdamState.fresh(scalar_params(0.1))
        g = scalar_params(-0.7)
        a, b = adam_step(state, g, 1e-3), adam_step(state, g, 1e-3)
        assert a.params.flat.tobytes() == b.params.flat.tobytes()
        assert a.m.tobytes() == b.m.tobytes() and a.v.tobytes() == b.v.tobytes()

    def test_non_finite_gradient(self):
        state = AdamState.fresh(scalar_params(0.1))
        g = scalar_params(0.0)
        g.flat[3] = np.inf
        with pytest.raises(TrainingDiverged):
            adam_step(state, g, 1e-3)


class TestBatching:
    def test_budget_and_coverage(self):
        c = generate_corpus(200, 8, (1, 9), NoiseSpec(), seed=1)
        stream = micro_batches(c.pairs, 40, np.random.default_rng(0))
        seen = []
        while len(seen) < len(c):
            b = next(stream)
            tokens = sum(len(p.target) + 1 for p in b)
            assert b and (tokens <= 40 or len(b) == 1)
            seen.extend(p.id for p in b)
        assert sorted(seen) == list(range(len(c)))

    def test_single_oversized_pair(self):
        c = generate_corpus(3, 8, (20, 20), NoiseSpec(), seed=1)
        b = next(micro_batches(c.pairs, 5, np.random.default_rng(0)))
        assert len(b) == 1


def test_accumulation_equivalence():
    train_c, _, model = tiny_task()
    pairs = list(train_c.pairs[:24])
    chunks = [pairs[i:i + 6] for i in range(0, 24, 6)]
    acc = accumulate_gradients([mle_loss_and_grad(model, c)[1] for c in chunks])
    _, whole = mle_loss_and_grad(model, pairs)
    np.testing.assert_allclose(acc.flat, whole.flat, rtol=0, atol=1e-12)
    s0 = AdamState.fresh(model.params.copy())
    a = adam_step(s0, acc, 5e-4)
    b = adam_step(s0, whole, 5e-4)
    np.testing.assert_allclose(a.params.flat, b.params.flat, rtol=0, atol=1e-12)


class TestTrain:
    def run(self, tmp_path=None, **kw):
        train_c, valid_c, model = tiny_task()
        base = dict(micro_batch_tokens=32, accumulation_factor=2, checkpoint_every=10,
                    max_updates=50, patience=10, learning_rate=5e-3)
        cfg = TrainConfig(**{**base, **kw})
        return train(cfg, model, train_c, valid_c, out_dir=tmp_path)

    def test_log_format_and_files(self, tmp_path):
        final, log = self.run(tmp_path)
        lines = log.lines
        assert [l for l in lines if l.startswith("step=")] == lines[:5]
        assert all(LOG_LINE.match(l) for l in lines[:5])
        assert [r["step"] for r in log.records] == [10, 20, 30, 40, 50]
        assert final.metadata["averaged"] == [30, 40, 50]
        assert final.step == 50
        on_disk = load_checkpoint(tmp_path / "final.bin")
        assert on_disk.params.flat.tobytes() == final.params.flat.tobytes()
        assert (tmp_path / "train.log").read_text() == log.text()

    def test_recorded_bleu_recomputable(self, tmp_path):
        _, log = self.run(tmp_path)
        _, valid_c, _ = tiny_task()
        for rec in log.records:
            ck = load_checkpoint(tmp_path / f"ckpt-{rec['step']:06d}.bin")
            bleu = corpus_bleu(decode_corpus(ck.model(), valid_c.sources(), 4), valid_c.targets())
            assert abs(bleu.score - rec["val_bleu"]) <= 1e-12
            assert ck.validation_bleu == rec["val_bleu"]

    def test_averages_last_three(self, tmp_path):
        final, _ = self.run(tmp_path)
        cks = [load_checkpoint(tmp_path / f"ckpt-{s:06d}.bin") for s in (30, 40, 50)]
        mean = sum(c.params.flat for c in cks) / 3
        np.testing.assert_allclose(final.params.flat, mean, rtol=0, atol=1e-14)

    def test_deterministic(self, tmp_path):
        a, la = self.run(tmp_path / "a")
        b, lb = self.run(tmp_path / "b")
        assert la.text() == lb.text()
        assert a.params.flat.tobytes() == b.params.flat.tobytes()
        assert ((tmp_path / "a" / "final.bin").read_bytes()
                == (tmp_path / "b" / "final.bin").read_bytes())

    @pytest.mark.parametrize("objective", ["mrt", "doc_mrt"])
    def test_risk_objectives_deterministic(self, objective):
        a, la = self.run(objective=objective, n_samples=3, max_updates=6, checkpoint_every=3)
        b, lb = self.run(objective=objective, n_samples=3, max_updates=6, checkpoint_every=3)
        assert la.text() == lb.text()
        assert a.params.flat.tobytes() == b.params.flat.tobytes()
        assert all(0.0 <= r["loss"] for r in la.records)

    def test_patience_stops_at_first_non_improving(self):
        train_c, _, model = tiny_task()
        # a frozen model (lr ~ 0) validated on its training data never improves
        cfg = TrainConfig(micro_batch_tokens=32, accumulation_factor=1, checkpoint_every=5,
                          max_updates=100, patience=1, learning_rate=1e-300)
        _, log = train(cfg, model, train_c, train_c)
        assert [r["step"] for r in log.records] == [5, 10]
        assert [r["streak"] for r in log.records] == [0, 1]

    def test_divergence_keeps_last_good(self, tmp_path, monkeypatch):
        real = training.objective_step
        calls = {"n": 0}

        def flaky(model, batch, config, rng):
            calls["n"] += 1
            loss, g = real(model, batch, config, rng)
            return (float("nan"), g) if calls["n"] > 25 else (loss, g)

        monkeypatch.setattr(training, "objective_step", flaky)
        with pytest.raises(TrainingDiverged) as info:
            self.run(tmp_path)
        assert info.value.last_good.step == 10
        assert load_checkpoint(tmp_path / "last_good.bin").step == 10

    def test_empty_corpus(self):
        train_c, valid_c, model = tiny_task()
        with pytest.raises(ValueError):
            train(TrainConfig(), model, train_c.subset([]), valid_c)


class TestFinetune:
    def base(self):
        train_c, valid_c, model = tiny_task()
        return Checkpoint(model.params.copy(), model.config, model.vocab, 7), train_c, valid_c

    def test_zero_updates_is_identity(self):
        base, train_c, valid_c = self.base()
        ck, log = finetune(base, TrainConfig(max_updates=0), train_c, valid_c)
        assert ck.params.flat.tobytes() == base.params.flat.tobytes()
        assert log.lines[0].startswith(f"init={base.id} ")

    def test_lineage(self):
        base, train_c, valid_c = self.base()
        cfg = TrainConfig(objective="doc_mrt", n_samples=2, max_updates=2, checkpoint_every=1,
                          micro_batch_tokens=16, accumulation_factor=1)
        first, log = finetune(base, cfg, train_c, valid_c, run_name="docmrt-all")
        assert log.lines[0] == f"init={base.id} objective=doc_mrt run=docmrt-all"
        assert first.metadata["init"] == base.id and first.metadata["lineage"] == [base.id]
        second, _ = finetune(first, cfg.replace(objective="mle"), train_c, valid_c)
        assert second.metadata["lineage"] == [base.id, first.id]
