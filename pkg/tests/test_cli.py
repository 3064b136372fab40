"""
Pruebas de la CLI: códigos de salida y flujo completo a escala mínima
"""

import json

import numpy as np
import pandas as pd
import pytest

import run_experiment
from src import ablation, config, gradcheck
from src.cli import attention_saliency, build_parser, main, write_reports
from src.config import EXIT_CONFIG_ERROR, EXIT_NUMERIC_ERROR, EXIT_OK
from src.exceptions import ShapeError


@pytest.fixture
def config_file(tmp_path, tiny_model_cfg):
    path = tmp_path / 'tiny.json'
    path.write_text(json.dumps({
        'model': tiny_model_cfg.model_dump(),
        'data': {'n_train': 12, 'n_test': 6, 'image_size': 16, 'seed': 3},
        'train': {'seed': 0, 'steps': 2, 'batch_size': 4, 'eval_every': 0},
    }), encoding='utf-8')
    return path


class TestExitCodes:
    """Traducción de errores a códigos de salida"""

    def test_help(self):
        assert main(['--help']) == EXIT_OK

    def test_unknown_command(self):
        assert main(['fly']) == EXIT_CONFIG_ERROR

    def test_train_requires_seed(self, tmp_path):
        assert main(['train', '--out', str(tmp_path)]) == EXIT_CONFIG_ERROR

    def test_missing_config_file(self, tmp_path):
        assert main(['count-params', '-c', str(tmp_path / 'none.json'), '-o', str(tmp_path)]) == EXIT_CONFIG_ERROR

    def test_invalid_model_config(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text(json.dumps({'model': {'acp': {'n_lpu': 9}}}), encoding='utf-8')
        assert main(['count-params', '-c', str(path), '-o', str(tmp_path)]) == EXIT_CONFIG_ERROR

    def test_unknown_gradcheck_case(self, tmp_path):
        assert main(['gradcheck', '--ops', 'nope', '-o', str(tmp_path)]) == EXIT_CONFIG_ERROR

    def test_gradcheck_failure_is_numeric(self, tmp_path, monkeypatch):
        failing = pd.DataFrame([{'op': 'softmax', 'seed': 0, 'max_rel_error': 1.0,
                                 'tolerance': 1e-5, 'passed': False}])
        monkeypatch.setattr(gradcheck, 'run_gradcheck_suite', lambda seeds, names: failing)
        assert main(['gradcheck', '--ops', 'softmax', '-o', str(tmp_path)]) == EXIT_NUMERIC_ERROR

    def test_gradcheck_subset(self, tmp_path):
        assert main(['gradcheck', '--ops', 'softmax', 'relu', '--seeds', '0', '1',
                     '-o', str(tmp_path)]) == EXIT_OK
        df = pd.read_csv(tmp_path / 'gradcheck.csv')
        assert len(df) == 4 and df['passed'].all()

    def test_count_params(self, tmp_path, config_file):
        assert main(['count-params', '-c', str(config_file), '-o', str(tmp_path)]) == EXIT_OK
        df = pd.read_csv(tmp_path / 'param_counts.csv')
        assert df['variant'].tolist() == ['baseline', 'enhanced']


class TestParser:
    """Definición de subcomandos"""

    def test_common_options_on_every_command(self):
        args = build_parser().parse_args(['train', '--seed', '4', '--precision', '64', '-o', 'x'])
        assert (args.seed, args.precision, args.out) == (4, 64, 'x')

    def test_precision_choices(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(['train', '--precision', '16'])

    def test_saliency_grid(self):
        assert attention_saliency(np.ones((2, 16, 16)) / 16).shape == (4, 4)
        with pytest.raises(ShapeError):
            attention_saliency(np.ones((2, 6, 6)))


class TestPipeline:
    """generate-data -> train -> evaluate -> dump -> análisis"""

    def test_end_to_end(self, tmp_path, config_file):
        run = tmp_path / 'run'
        data = run / 'data'
        common = ['-c', str(config_file)]

        assert main(['generate-data', *common, '-o', str(run), '--previews', '2']) == EXIT_OK
        assert (data / 'train.npy').exists() and (data / 'manifest.csv').exists()
        assert len(list((data / 'previews').glob('*.ppm'))) == 2

        assert main(['train', *common, '-o', str(run), '--data', str(data)]) == EXIT_OK
        checkpoint = run / 'final.eivt'
        assert checkpoint.exists()
        assert len(pd.read_csv(run / 'train_log.csv')) == 2

        assert main(['evaluate', *common, '-o', str(run / 'eval'), '--data', str(data),
                     '--checkpoint', str(checkpoint)]) == EXIT_OK
        evaluation = json.loads((run / 'eval' / 'evaluation.json').read_text(encoding='utf-8'))
        assert set(evaluation) >= {'accuracy', 'mAP50', 'AR'}

        dumps = run / 'dumps'
        assert main(['dump', *common, '-o', str(dumps), '--data', str(data), '--checkpoint', str(checkpoint),
                     '--samples', '4', '--model-id', 'tiny']) == EXIT_OK
        features = dumps / 'tiny_features.npz'
        attention = dumps / 'tiny_attention.npz'
        assert features.exists() and attention.exists()

        assert main(['analyze-pca', '-o', str(run / 'pca'), '--features', str(features)]) == EXIT_OK
        assert (run / 'pca' / 'pca_explained_variance.csv').exists()

        assert main(['analyze-cka', '-o', str(run / 'cka'), '--features-a', str(features),
                     '--features-b', str(features)]) == EXIT_OK
        cka = pd.read_csv(run / 'cka' / 'cka_by_stage.csv')
        assert cka['Media'].round(6).eq(1.0).all()

        assert main(['analyze-attention', '-o', str(run / 'attn'), '--attention', str(attention)]) == EXIT_OK
        assert len(list((run / 'attn').glob('*_rollout.pgm'))) == 2


class TestAblationCommands:
    """Configuración por defecto y reportes de las ablaciones"""

    def test_ablate_acp_defaults_to_single_stage_grid(self, tmp_path, monkeypatch):
        seen = {}

        def fake_sweep(cfg, train, test, out_dir, **kwargs):
            seen['grids'] = cfg.model.stage_grids()
            return pd.DataFrame([{'value': 5, 'status': 'ok'}])

        monkeypatch.setattr(ablation, 'run_acp_ablation', fake_sweep)
        assert main(['ablate-acp', '-o', str(tmp_path)]) == EXIT_OK
        assert seen['grids'] == [32]

    def test_write_reports(self, tmp_path):
        df = pd.DataFrame({'value': [1], 'mAP50': [0.5], 'status': ['ok']})
        write_reports({'Ablacion_ACP': df}, tmp_path, 'ablation_acp', {'Filas': 1})
        assert (tmp_path / 'ablation_acp.xlsx').exists()
        assert (tmp_path / 'ablation_acp.html').exists()

    def test_compare(self, tmp_path, config_file):
        assert main(['compare', '-c', str(config_file), '-o', str(tmp_path), '--seeds', '0']) == EXIT_OK
        df = pd.read_csv(tmp_path / 'comparison.csv')
        assert df['variant'].tolist() == ['baseline', 'enhanced']
        assert (tmp_path / 'comparison.xlsx').exists()


class TestEntryScript:
    """run_experiment.run prepara los directorios del proyecto"""

    def test_run_creates_project_directories(self, tmp_path, monkeypatch, config_file):
        root = tmp_path / 'project'
        for name in ('DATA_DIR', 'RUNS_DIR', 'ABLATION_REPORTS_DIR', 'ANALYSIS_REPORTS_DIR', 'DUMPS_DIR'):
            monkeypatch.setattr(config, name, root / name.lower())
        assert run_experiment.run(['count-params', '-c', str(config_file), '-o', str(tmp_path / 'out')]) == EXIT_OK
        assert sorted(p.name for p in root.iterdir()) == [
            'ablation_reports_dir', 'analysis_reports_dir', 'data_dir', 'dumps_dir', 'runs_dir',
        ]
