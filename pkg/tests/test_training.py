import math

import numpy as np
import pandas as pd
import pytest
import torch

from pathfrag.events import SamplingError
from pathfrag.model import EventEncoderModel, ModelConfig
from pathfrag.objective import LossConfig
from pathfrag.synth import GeneratorConfig, emit_cohort, generate_pathway
from pathfrag.training import TrainConfig, TrainingError, _lr_at, sample_batch, train


def tiny_cohort(seed=0, num_patients=20, num_vertices=3, support=6, zipf_a=4):
    gen = GeneratorConfig(
        num_vertices=num_vertices,
        support_size=support,
        zipf_a=zipf_a,
        num_patients=num_patients,
        seed=seed,
    )
    pathway = generate_pathway(gen)
    return emit_cohort(pathway, gen)


def tiny_model(cohort, seed=0):
    torch.manual_seed(seed)
    config = ModelConfig(
        embed_dim=8,
        model_dim=16,
        num_heads=4,
        num_encoder_layers=1,
        num_decoder_layers=1,
        feedforward_dim=16,
        dropout=0.0,
        window_w=1,
    )
    cards = [s.cardinality for s in cohort.schemas]
    return EventEncoderModel(config, cards)


class TestSampleBatch:
    def test_shapes_and_sources(self):
        cohort = tiny_cohort()
        rng = np.random.default_rng(0)
        batch = sample_batch(cohort, batch_size=8, window_n=4, rng=rng)
        assert len(batch) == 8
        for window in batch:
            assert window.valid_len >= 2
            assert window.one_hot_blocks[0].shape[0] == 4
            pid, start = window.source
            assert pid in {seq.patient_id for seq in cohort.patients}

    def test_reproducible(self):
        cohort = tiny_cohort()
        b1 = sample_batch(cohort, 8, 4, np.random.default_rng(7))
        b2 = sample_batch(cohort, 8, 4, np.random.default_rng(7))
        for w1, w2 in zip(b1, b2):
            assert w1.source == w2.source

    def test_no_trainable_windows(self):
        gen = GeneratorConfig(num_vertices=1, delta=1.0, support_size=4, num_patients=3, seed=0)
        pathway = generate_pathway(gen)
        cohort = emit_cohort(pathway, gen)  # every sequence has a single event
        with pytest.raises(SamplingError, match="trainable"):
            sample_batch(cohort, 4, 4, np.random.default_rng(0))


class TestTrain:
    def test_history_written_and_reproducible(self, tmp_path):
        cohort = tiny_cohort()
        config = TrainConfig(steps=5, batch_size=4, window_n=4, seed=3, log_every=1)
        losses = []
        for run in range(2):
            model = tiny_model(cohort)
            path = tmp_path / f"history_{run}.csv"
            train(model, cohort, config, LossConfig(), history_path=path)
            frame = pd.read_csv(path)
            assert list(frame.columns) == ["step", "loss", "clo", "sep", "con"]
            assert len(frame) == 5
            losses.append(frame["loss"].tolist())
        assert losses[0] == losses[1]

    def test_mse_objective_runs(self, tmp_path):
        cohort = tiny_cohort()
        config = TrainConfig(steps=3, batch_size=4, window_n=4, seed=0, objective="mse")
        model = tiny_model(cohort)
        history = train(model, cohort, config, LossConfig())
        assert len(history) == 3
        assert all(math.isfinite(rec.loss) for rec in history)

    def test_nonfinite_loss_aborts_with_provenance(self, tmp_path):
        cohort = tiny_cohort()
        model = tiny_model(cohort)
        with torch.no_grad():
            for p in model.parameters():
                p.mul_(float("nan"))
        config = TrainConfig(steps=2, batch_size=4, window_n=4, seed=0)
        with pytest.raises(TrainingError, match="p0"):
            train(model, cohort, config, LossConfig())

    @pytest.mark.slow
    def test_loss_decreases_on_easy_cohort(self, tmp_path):
        cohort = tiny_cohort(seed=1, num_patients=60, num_vertices=3, support=8, zipf_a=4)
        model = tiny_model(cohort, seed=1)
        config = TrainConfig(
            steps=400, batch_size=16, window_n=8, seed=1, learning_rate=3e-4
        )
        history = train(model, cohort, config, LossConfig())
        first = np.mean([r.loss for r in history[:50]])
        last = np.mean([r.loss for r in history[-50:]])
        assert last < 0.8 * first


class TestLearningRateSchedule:
    def test_constant_default(self):
        cfg = TrainConfig(steps=100, learning_rate=1e-3)
        assert [_lr_at(s, cfg) for s in (0, 50, 99)] == [1e-3, 1e-3, 1e-3]

    def test_warmup_then_cosine_decays_to_zero(self):
        cfg = TrainConfig(
            steps=100, learning_rate=1e-3, lr_schedule="cosine", warmup_steps=10
        )
        assert _lr_at(0, cfg) == pytest.approx(1e-4)
        assert _lr_at(9, cfg) == pytest.approx(1e-3)
        assert _lr_at(10, cfg) == pytest.approx(1e-3)
        mid = _lr_at(55, cfg)
        assert 0 < mid < 1e-3
        assert _lr_at(99, cfg) < 1e-5

    def test_monotone_decay_after_warmup(self):
        cfg = TrainConfig(
            steps=200, learning_rate=3e-4, lr_schedule="cosine", warmup_steps=20
        )
        rates = [_lr_at(s, cfg) for s in range(20, 200)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_invalid_schedule_rejected(self):
        with pytest.raises(ValueError, match="lr_schedule"):
            TrainConfig(steps=10, lr_schedule="linear")

    def test_warmup_bounds_rejected(self):
        with pytest.raises(ValueError, match="warmup_steps"):
            TrainConfig(steps=10, warmup_steps=10)
