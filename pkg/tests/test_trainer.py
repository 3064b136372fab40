"""
Pruebas del lazo de entrenamiento: determinismo, reanudación y errores numéricos
"""

import numpy as np
import pandas as pd
import pytest

from src.data_loader import make_batch
from src.exceptions import NumericError
from src.trainer import (
    Trainer, evaluate_checkpoint, model_from_checkpoint, overfit_single_batch,
)


class TestDeterminism:
    """Mismas semillas, mismas pérdidas"""

    def test_identical_logs_at_64_bits(self, tiny_experiment, tiny_samples, tmp_path):
        cfg = tiny_experiment(precision=64, steps=3)
        a = Trainer(cfg, tiny_samples, out_dir=tmp_path / 'a').train()
        b = Trainer(cfg, tiny_samples, out_dir=tmp_path / 'b').train()
        pd.testing.assert_frame_equal(a.history, b.history)

    def test_different_seed_changes_losses(self, tiny_experiment, tiny_samples, tmp_path):
        a = Trainer(tiny_experiment(seed=0, steps=2), tiny_samples, out_dir=tmp_path / 'a').train()
        b = Trainer(tiny_experiment(seed=1, steps=2), tiny_samples, out_dir=tmp_path / 'b').train()
        assert not np.allclose(a.history['loss'], b.history['loss'])


class TestResume:
    """Una corrida reanudada continúa exactamente donde quedó"""

    @pytest.mark.parametrize("bits", [32, 64])
    def test_next_step_loss_matches(self, tiny_experiment, tiny_samples, tmp_path, bits):
        cfg = tiny_experiment(precision=bits, steps=4, checkpoint_every=2)
        continuous = Trainer(cfg, tiny_samples, out_dir=tmp_path / 'full').train()
        checkpoint = tmp_path / 'full' / 'step_000002.eivt'
        assert checkpoint.exists()

        resumed_trainer = Trainer(cfg, tiny_samples, out_dir=tmp_path / 'resumed')
        resumed = resumed_trainer.train(resume_from=checkpoint)
        assert resumed.history['step'].tolist() == [2, 3]
        expected = continuous.history.set_index('step').loc[[2, 3], 'loss'].to_numpy()
        np.testing.assert_array_equal(resumed.history['loss'].to_numpy(), expected)
        assert resumed_trainer.optimizer.t == 4

    def test_outputs_written(self, tiny_experiment, tiny_samples, tmp_path):
        out = tmp_path / 'run'
        result = Trainer(tiny_experiment(eval_every=2), tiny_samples[:16], tiny_samples[16:], out).train()
        assert (out / 'train_log.csv').exists()
        assert (out / 'metrics.csv').exists()
        assert result.checkpoint_path == out / 'final.eivt'
        assert [r.step for r in result.evaluations] == [2, 4]
        assert result.final.step == 4


class TestCheckpointEvaluation:
    """Reconstrucción del modelo desde el eco de configuración"""

    def test_model_from_checkpoint(self, tiny_experiment, tiny_samples, tmp_path):
        trainer = Trainer(tiny_experiment(steps=2), tiny_samples, out_dir=tmp_path)
        result = trainer.train()
        model, config, step = model_from_checkpoint(result.checkpoint_path)
        assert step == 2
        assert config.model == trainer.config.model
        for name, value in trainer.model.state_dict().items():
            np.testing.assert_array_equal(model.state_dict()[name], value)

        record = evaluate_checkpoint(result.checkpoint_path, tiny_samples[:8], batch_size=4)
        direct = trainer.evaluate(tiny_samples[:8], batch_size=4)
        assert record.accuracy == direct.accuracy
        assert record.loss == pytest.approx(direct.loss, rel=1e-5)


class TestNumericFailures:
    """Pérdida no finita"""

    def test_nan_weights_report_step(self, tiny_experiment, tiny_samples):
        trainer = Trainer(tiny_experiment(), tiny_samples)
        trainer.model.patch_embed.proj.weight.data[...] = np.nan
        batch = make_batch(tiny_samples, 5, 4, 0, trainer.config.preprocess)
        with pytest.raises(NumericError) as info:
            trainer.train_step(batch)
        assert info.value.step == 5


class TestTrainability:
    """El modelo puede memorizar un lote"""

    @pytest.mark.slow
    def test_overfit_single_batch(self, tiny_model_cfg, tiny_samples):
        losses = overfit_single_batch(tiny_model_cfg, tiny_samples, steps=200, lr=3e-3, batch_size=8)
        assert losses[-1] < 0.1 * losses[0]

    def test_loss_decreases_on_fixed_batch(self, tiny_model_cfg, tiny_samples):
        losses = overfit_single_batch(tiny_model_cfg, tiny_samples, steps=15, lr=3e-3, batch_size=4)
        assert min(losses[-3:]) < losses[0]
