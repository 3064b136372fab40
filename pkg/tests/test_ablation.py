"""
Pruebas de los barridos de ablación (corridas de un paso)
"""

import pandas as pd
import pytest
from pydantic import ValidationError

from src.ablation import (
    ACP_COLUMNS, CAT_COLUMNS, COMPARISON_COLUMNS, ISOLATION_COLUMNS, comparison_summary, run_acp_ablation,
    run_cat_ablation, run_isolation_ablation, run_seed_comparison, toy_concepts, with_model_overrides,
)
from src.config import (
    ACP_ABLATION_CONFIG, ACP_ABLATION_VALUES, COMPARISON_SEEDS, ISOLATION_VARIANTS,
    ExperimentConfig, load_experiment_config,
)
from src.data_generator import gen_concealed_shapes


class TestHelpers:
    """Overrides de configuración y escala de L"""

    def test_toy_concepts(self):
        assert toy_concepts(32, 64) == 32
        assert toy_concepts(512, 64) == 128
        assert toy_concepts(5, 4, divisor=8) == 1

    def test_overrides_merge_nested(self, tiny_experiment, tmp_path):
        base = tiny_experiment()
        cfg = with_model_overrides(base, tmp_path / 'x', cat={'num_concepts': 2})
        assert cfg.model.cat.num_concepts == 2
        assert cfg.model.cat.concept_mode == base.model.cat.concept_mode
        assert cfg.train.out_dir == str(tmp_path / 'x')


class TestSweeps:
    """Una fila por valor, incluso cuando la corrida falla"""

    def test_acp_sweep_marks_invalid_rows(self, tiny_experiment, tiny_samples, tmp_path):
        df = run_acp_ablation(tiny_experiment(steps=1), tiny_samples[:16], tiny_samples[16:],
                              values=[1, 2], out_dir=tmp_path)
        assert list(df.columns) == ACP_COLUMNS
        assert df['value'].tolist() == [1, 2]
        assert df.loc[0, 'status'] == 'ok'
        assert df.loc[0, 'params'] > 0
        assert df.loc[1, 'status'].startswith('failed')
        assert pd.isna(df.loc[1, 'mAP50'])
        assert (tmp_path / 'ablation_acp.csv').exists()

    def test_cat_sweep_scales_concepts(self, tiny_experiment, tiny_samples, tmp_path):
        df = run_cat_ablation(tiny_experiment(steps=1), tiny_samples[:16], tiny_samples[16:],
                              values=[4, 32], out_dir=tmp_path)
        assert list(df.columns) == CAT_COLUMNS
        assert df['L_used'].tolist() == [4, 8]
        assert (df['status'] == 'ok').all()
        assert df.loc[1, 'params'] > df.loc[0, 'params']

    def test_isolation_sweep(self, tiny_experiment, tiny_samples, tmp_path):
        df = run_isolation_ablation(tiny_experiment(steps=1), tiny_samples[:16], tiny_samples[16:],
                                    out_dir=tmp_path)
        assert list(df.columns) == ISOLATION_COLUMNS
        assert df['variant'].tolist() == list(ISOLATION_VARIANTS)
        assert (df['status'] == 'ok').all()
        assert df['use_acp'].tolist() == [False, True, False, True]
        assert df['use_cat'].tolist() == [False, False, True, True]
        params = dict(zip(df['variant'], df['params']))
        baseline = min(params.values())
        assert sum(1 for v in params.values() if v == baseline) == 1
        assert (tmp_path / 'ablation_isolation.csv').exists()


class TestAcpAblationConfig:
    """Configuración de una etapa a grilla 32x32 para el barrido de n_lpu"""

    @pytest.fixture
    def acp_base(self):
        return load_experiment_config(ACP_ABLATION_CONFIG)

    def test_stage_grid_allows_five_levels(self, acp_base, tmp_path):
        assert acp_base.model.stage_grids() == [32]
        for n in range(1, 6):
            cfg = with_model_overrides(acp_base, tmp_path / f"n{n}", acp={'n_lpu': n})
            assert cfg.model.acp.n_lpu == n

    @pytest.mark.parametrize("n", [6, 7])
    def test_beyond_bound_is_rejected(self, acp_base, tmp_path, n):
        with pytest.raises(ValidationError, match="excede la cota 5"):
            with_model_overrides(acp_base, tmp_path / 'x', acp={'n_lpu': n})

    @pytest.mark.slow
    def test_sweep_rows_within_bound_succeed(self, acp_base, tmp_path):
        samples = gen_concealed_shapes(10, 32, 32, 0.3, seed=5)
        raw = acp_base.model_dump()
        raw['train'].update(steps=1, batch_size=2)
        base = ExperimentConfig.model_validate(raw)
        df = run_acp_ablation(base, samples[:6], samples[6:], out_dir=tmp_path)
        assert df['value'].tolist() == ACP_ABLATION_VALUES
        assert (df.loc[df['value'] <= 5, 'status'] == 'ok').all()
        assert df.loc[df['value'] > 5, 'status'].str.startswith('failed').all()


class TestSeedComparison:
    """Baseline vs EI-ViT con los mismos datos y semillas"""

    def test_rows_per_seed_and_variant(self, tiny_experiment, tiny_samples, tmp_path):
        df = run_seed_comparison(tiny_experiment(steps=1), tiny_samples[:16], tiny_samples[16:],
                                 seeds=[0, 1], out_dir=tmp_path)
        assert list(df.columns) == COMPARISON_COLUMNS
        assert list(zip(df['seed'], df['variant'])) == [
            (0, 'baseline'), (0, 'enhanced'), (1, 'baseline'), (1, 'enhanced'),
        ]
        assert (df['status'] == 'ok').all()
        params = df.groupby('variant')['params'].first()
        assert params['enhanced'] > params['baseline']
        assert (tmp_path / 'comparison.csv').exists()

    def test_summary_uses_medians(self):
        df = pd.DataFrame({
            'seed': [0, 0, 1, 1, 2, 2],
            'variant': ['baseline', 'enhanced'] * 3,
            'accuracy': [0.4, 0.5, 0.6, 0.9, 0.5, 0.1],
            'status': ['ok'] * 6,
        })
        summary = comparison_summary(df)
        assert summary['Semillas'] == 3
        assert summary['Exactitud_Mediana_Baseline'] == pytest.approx(0.5)
        assert summary['Exactitud_Mediana_EI'] == pytest.approx(0.5)
        assert summary['EI_No_Inferior'] is True

    def test_summary_ignores_failed_runs(self):
        df = pd.DataFrame({
            'seed': [0, 0], 'variant': ['baseline', 'enhanced'],
            'accuracy': [0.5, float('nan')], 'status': ['ok', 'failed: x'],
        })
        summary = comparison_summary(df)
        assert summary['EI_No_Inferior'] is False

    @pytest.mark.slow
    def test_trained_comparison_is_reported(self, tiny_experiment, tiny_samples, tmp_path):
        df = run_seed_comparison(tiny_experiment(steps=60, batch_size=8), tiny_samples[:16],
                                 tiny_samples[16:], out_dir=tmp_path)
        assert sorted(df['seed'].unique()) == list(COMPARISON_SEEDS)
        assert (df['status'] == 'ok').all()
        assert df['accuracy'].between(0.0, 1.0).all()
        summary = comparison_summary(df)
        ok = df[df['status'] == 'ok']
        expected = ok[ok['variant'] == 'enhanced']['accuracy'].median()
        assert summary['Exactitud_Mediana_EI'] == pytest.approx(expected)
        assert summary['Diferencia'] == pytest.approx(
            summary['Exactitud_Mediana_EI'] - summary['Exactitud_Mediana_Baseline'])
