"""
CLI - Interfaz de Línea de Comandos
===================================
Subcomandos:

    generate-data       genera y guarda los splits de formas camufladas
    train               entrena un modelo y guarda checkpoints + métricas
    evaluate            evalúa un checkpoint sobre el split de prueba
    ablate-acp          barrido de n_lpu (1..7)
    ablate-cat          barrido de L (32..512)
    ablate-isolation    baseline / +ACP / +CAT / ambos
    dump                vuelca features y atención por bloque
    analyze-pca         PCA de un dump de features (PPM + PGM)
    analyze-cka         CKA lineal y kernel entre dos dumps, por etapa
    analyze-attention   mapas de atención con realce Otsu y rollout
    gradcheck           verificación de gradientes de todas las ops registradas
    count-params        parámetros baseline vs enhanced

Códigos de salida: 0 éxito, 2 error de configuración, 3 fallo numérico.
"""

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .config import (
    ACP_ABLATION_CONFIG, EXIT_CONFIG_ERROR, EXIT_NUMERIC_ERROR, EXIT_OK, SHAPE_CLASSES,
    ExperimentConfig, get_current_date_str, load_experiment_config,
)
from .exceptions import CheckpointError, ConfigError, DegenerateHistogramError, NumericError, ShapeError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str, help='Archivo JSON de experimento')
    common.add_argument('--seed', type=int, help='Semilla (sobrescribe train.seed)')
    common.add_argument('--out', '-o', type=str, help='Directorio de salida')
    common.add_argument('--precision', type=int, choices=[32, 64], help='Precisión de cómputo')

    parser = argparse.ArgumentParser(prog='ei-vit', description='Enhanced Interaction ViT')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate-data', parents=[common], help='Genera el dataset sintético')
    p.add_argument('--previews', type=int, default=0, help='Cantidad de muestras a exportar como PPM')

    p = sub.add_parser('train', parents=[common], help='Entrena un modelo')
    p.add_argument('--data', type=str, help='Directorio del dataset')
    p.add_argument('--resume', type=str, help='Checkpoint desde el que reanudar')

    p = sub.add_parser('evaluate', parents=[common], help='Evalúa un checkpoint')
    p.add_argument('--checkpoint', required=True, type=str)
    p.add_argument('--data', type=str)

    for name in ('ablate-acp', 'ablate-cat', 'ablate-isolation'):
        p = sub.add_parser(name, parents=[common], help=f'Ablación {name[7:]}')
        p.add_argument('--data', type=str)
        p.add_argument('--values', type=int, nargs='+', help='Valores a barrer (default: los del protocolo)')

    p = sub.add_parser('compare', parents=[common], help='Baseline vs EI-ViT sobre varias semillas')
    p.add_argument('--data', type=str)
    p.add_argument('--seeds', type=int, nargs='+', help='Semillas (default: 0 1 2)')

    p = sub.add_parser('dump', parents=[common], help='Vuelca features y atención')
    p.add_argument('--checkpoint', required=True, type=str)
    p.add_argument('--data', type=str)
    p.add_argument('--blocks', type=int, nargs='+', help='Bloques (base 0); default todos')
    p.add_argument('--samples', type=int, default=16, help='Cantidad de muestras de prueba')
    p.add_argument('--model-id', type=str)

    p = sub.add_parser('analyze-pca', parents=[common], help='PCA de features')
    p.add_argument('--features', required=True, type=str)
    p.add_argument('--block', type=int, help='Bloque (default: todos)')
    p.add_argument('--index', type=int, default=0, help='Muestra dentro del dump')
    p.add_argument('--k', type=int, default=3)

    p = sub.add_parser('analyze-cka', parents=[common], help='CKA entre dos modelos')
    p.add_argument('--features-a', required=True, type=str)
    p.add_argument('--features-b', required=True, type=str)

    p = sub.add_parser('analyze-attention', parents=[common], help='Mapas de atención')
    p.add_argument('--attention', required=True, type=str)
    p.add_argument('--index', type=int, default=0)

    p = sub.add_parser('gradcheck', parents=[common], help='Verificación de gradientes')
    p.add_argument('--seeds', type=int, nargs='+', default=[0, 1, 2, 3, 4])
    p.add_argument('--ops', type=str, nargs='+', help='Subconjunto de casos')

    sub.add_parser('count-params', parents=[common], help='Conteo de parámetros')
    return parser


# =============================================================================
# AUXILIARES
# =============================================================================

def setup_logging(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler(out_dir / f'run_{get_current_date_str()}.log', encoding='utf-8')
        ],
        force=True,
    )


def banner(title: str) -> None:
    print("\n" + "=" * 70)
    print(f"🚀 {title}")
    print("=" * 70)
    print(f"📅 Fecha: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("=" * 70 + "\n")


def load_config(args, require_seed: bool = True) -> ExperimentConfig:
    """Configuración del experimento con overrides de la CLI"""
    try:
        return load_experiment_config(args.config, seed=args.seed, precision=args.precision, out_dir=args.out)
    except ConfigError:
        if require_seed or args.seed is not None:
            raise
        # comandos sin entrenamiento: la semilla no influye en el resultado
        return load_experiment_config(args.config, seed=0, precision=args.precision, out_dir=args.out)


def output_dir(args, cfg: Optional[ExperimentConfig] = None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None:
        return Path(cfg.train.out_dir)
    return Path('runs') / args.command


def data_dir(args, cfg: ExperimentConfig, out: Path) -> Path:
    if getattr(args, 'data', None):
        return Path(args.data)
    if cfg.data.data_dir:
        return Path(cfg.data.data_dir)
    return out / 'data'


def load_or_generate(directory: Path, cfg: ExperimentConfig):
    """Carga los splits o los genera si el directorio está vacío"""
    from .data_generator import generate_splits
    from .data_loader import DataLoader, save_dataset

    loader = DataLoader(directory)
    if {'train', 'test'} <= set(loader.available_splits()):
        return loader.load_split('train'), loader.load_split('test')
    logger.info(f"Dataset no encontrado en {directory}; generando")
    d = cfg.data
    train, test = generate_splits(d.n_train, d.n_test, d.image_size, d.difficulty, d.seed, d.workers)
    save_dataset(directory, train, test)
    return train, test


def load_test_split(directory: Path) -> list:
    from .data_loader import DataLoader
    return DataLoader(directory).load_split('test')


def write_reports(tables: Dict[str, pd.DataFrame], out: Path, name: str,
                  summary: Optional[Dict[str, object]] = None) -> None:
    """Excel + HTML; los fallos de reporte no abortan el comando"""
    from .html_report_generator import generate_experiment_html
    from .report_generator import generate_experiment_report

    try:
        path = generate_experiment_report(tables, out / f"{name}.xlsx", summary=summary)
        print(f"   ✅ Reporte Excel: {path}")
    except Exception as e:
        logger.warning(f"No se pudo generar el reporte Excel: {e}")
    try:
        path = generate_experiment_html(tables, out / f"{name}.html", cards=summary)
        print(f"   ✅ Reporte HTML: {path}")
    except Exception as e:
        logger.warning(f"No se pudo generar el reporte HTML: {e}")


def print_record(record) -> None:
    for key, value in record.to_dict().items():
        print(f"   • {key}: {value:.4f}" if isinstance(value, float) else f"   • {key}: {value}")


# =============================================================================
# SUBCOMANDOS
# =============================================================================

def cmd_generate_data(args) -> int:
    from .data_generator import generate_splits
    from .data_loader import save_dataset
    from .image_io import write_ppm

    cfg = load_config(args, require_seed=False)
    out = output_dir(args, cfg)
    directory = data_dir(args, cfg, out)
    d = cfg.data

    print(f"📂 PASO 1: Generando {d.n_train} + {d.n_test} muestras ({d.image_size}px, dificultad {d.difficulty})...")
    train, test = generate_splits(d.n_train, d.n_test, d.image_size, d.difficulty, d.seed, d.workers)

    print("\n💾 PASO 2: Guardando splits...")
    save_dataset(directory, train, test)
    print(f"   ✅ Dataset en {directory}")

    if args.previews:
        print("\n🖼️ PASO 3: Exportando vistas previas...")
        for s in train[:args.previews]:
            pixels = np.clip(np.round(s.image), 0, 255).astype(np.uint8)
            write_ppm(directory / 'previews' / f"{s.sample_id:05d}_{SHAPE_CLASSES[s.label]}", pixels)
        print(f"   ✅ {min(args.previews, len(train))} imágenes PPM")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import Trainer

    cfg = load_config(args)
    out = output_dir(args, cfg)

    print("📂 PASO 1: Cargando datos...")
    train, test = load_or_generate(data_dir(args, cfg, out), cfg)
    print(f"   ✅ {len(train)} muestras de entrenamiento, {len(test)} de prueba")

    print(f"\n🧠 PASO 2: Entrenando {cfg.model.block_kind} ({cfg.train.steps} pasos, {cfg.train.precision} bits)...")
    trainer = Trainer(cfg, train, test, out)
    result = trainer.train(resume_from=args.resume)
    print(f"   ✅ Checkpoint final: {result.checkpoint_path}")

    if result.final is not None:
        print("\n📊 PASO 3: Métricas finales")
        print_record(result.final)
        tables = {'Historial': result.history, 'Metricas': result.evaluations_frame()}
        write_reports(tables, out, 'train_report', {
            'Parámetros': trainer.model.num_parameters(),
            'Exactitud': f"{result.final.accuracy:.3f}",
            'mAP50': f"{result.final.ap50:.3f}",
        })
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .trainer import evaluate_checkpoint

    cfg = load_config(args, require_seed=False)
    out = output_dir(args, cfg)
    print(f"📊 PASO 1: Evaluando {args.checkpoint}...")
    record = evaluate_checkpoint(args.checkpoint, load_test_split(data_dir(args, cfg, out)))
    print_record(record)
    out.mkdir(parents=True, exist_ok=True)
    (out / 'evaluation.json').write_text(json.dumps(record.to_dict(), indent=2), encoding='utf-8')
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import run_acp_ablation, run_cat_ablation, run_isolation_ablation

    kind = args.command[len('ablate-'):]
    if kind == 'acp' and not args.config:
        args.config = str(ACP_ABLATION_CONFIG)
        logger.info(f"ablate-acp sin --config: usando {ACP_ABLATION_CONFIG.name}")
    cfg = load_config(args)
    out = output_dir(args, cfg)
    print("📂 PASO 1: Cargando datos...")
    train, test = load_or_generate(data_dir(args, cfg, out), cfg)

    print(f"\n🔬 PASO 2: Ejecutando {args.command}...")
    if kind == 'acp':
        kwargs = {'values': args.values} if args.values else {}
        df = run_acp_ablation(cfg, train, test, out_dir=out, **kwargs)
        name = 'Ablacion_ACP'
    elif kind == 'cat':
        kwargs = {'values': args.values} if args.values else {}
        df = run_cat_ablation(cfg, train, test, out_dir=out, **kwargs)
        name = 'Ablacion_CAT'
    else:
        df = run_isolation_ablation(cfg, train, test, out_dir=out)
        name = 'Ablacion_Aislamiento'

    failed = int((df['status'] != 'ok').sum())
    print(f"   ✅ {len(df)} filas ({failed} fallidas)")
    print("\n📁 PASO 3: Generando reportes...")
    write_reports({name: df}, out, f"ablation_{kind}", {'Filas': len(df), 'Fallidas': failed})
    return EXIT_OK


def cmd_compare(args) -> int:
    from .ablation import comparison_summary, run_seed_comparison

    cfg = load_config(args, require_seed=False)
    out = output_dir(args, cfg)
    print("📂 PASO 1: Cargando datos...")
    train, test = load_or_generate(data_dir(args, cfg, out), cfg)

    print("\n⚖️  PASO 2: Entrenando baseline y EI-ViT...")
    kwargs = {'seeds': args.seeds} if args.seeds else {}
    df = run_seed_comparison(cfg, train, test, out_dir=out, **kwargs)
    summary = comparison_summary(df)
    for key, value in summary.items():
        print(f"   • {key}: {value:.4f}" if isinstance(value, float) else f"   • {key}: {value}")

    print("\n📁 PASO 3: Generando reportes...")
    write_reports({'Comparacion': df}, out, "comparison", summary)
    return EXIT_OK


def cmd_dump(args) -> int:
    from .dumps import dump_model

    cfg = load_config(args, require_seed=False)
    out = output_dir(args, cfg)
    samples = load_test_split(data_dir(args, cfg, out))[:args.samples]
    print(f"📦 PASO 1: Volcando {len(samples)} muestras de {args.checkpoint}...")
    features_path, attention_path = dump_model(args.checkpoint, samples, args.blocks, out, args.model_id)
    print(f"   ✅ Features: {features_path}")
    print(f"   ✅ Atención: {attention_path}")
    return EXIT_OK


def cmd_analyze_pca(args) -> int:
    from .analysis import pca_decompose
    from .dumps import load_feature_dumps
    from .image_io import write_pgm, write_ppm

    out = output_dir(args)
    dumps = load_feature_dumps(args.features)
    if args.block is not None:
        dumps = [d for d in dumps if d.block == args.block]
        if not dumps:
            raise ShapeError(f"el bloque {args.block} no está en {args.features}")

    rows = []
    print(f"🎨 PASO 1: PCA de {len(dumps)} bloques...")
    for dump in dumps:
        result = pca_decompose(dump, k=args.k, index=args.index)
        stem = out / f"{dump.model_id}_block{dump.block:03d}_pca"
        if args.k >= 3:
            write_ppm(stem, result.image[:3])
        for j in range(args.k):
            write_pgm(out / f"{stem.name}_c{j}", result.image[j])
        for j, (var, ratio) in enumerate(zip(result.explained_variance, result.explained_ratio)):
            rows.append({'block': dump.block, 'stage': dump.stage, 'component': j,
                         'explained_variance': float(var), 'explained_ratio': float(ratio)})
    df = pd.DataFrame(rows)
    out.mkdir(parents=True, exist_ok=True)
    df.to_csv(out / 'pca_explained_variance.csv', index=False)
    print(f"   ✅ Imágenes y varianza explicada en {out}")
    return EXIT_OK


def cmd_analyze_cka(args) -> int:
    from .analysis import cka_by_stage, cka_reports_frame
    from .dumps import load_feature_dumps

    out = output_dir(args)
    dumps_a = load_feature_dumps(args.features_a)
    dumps_b = load_feature_dumps(args.features_b)
    print(f"📐 PASO 1: CKA entre {dumps_a[0].model_id} y {dumps_b[0].model_id}...")
    reports = cka_by_stage(dumps_a, dumps_b, 'linear') + cka_by_stage(dumps_a, dumps_b, 'kernel')
    df = cka_reports_frame(reports)
    out.mkdir(parents=True, exist_ok=True)
    df.to_csv(out / 'cka_by_stage.csv', index=False)
    for r in reports:
        print(f"   • Etapa {r.stage} ({r.variant}): media {r.mean:.4f}, mediana {r.median:.4f}")
    write_reports({'CKA': df}, out, 'cka_report')
    return EXIT_OK


def attention_saliency(attn: np.ndarray) -> np.ndarray:
    """Atención promedio recibida por cada token, como grilla cuadrada"""
    from .analysis import head_average

    received = head_average(attn).mean(axis=0)
    side = int(round(np.sqrt(received.size)))
    if side * side != received.size:
        raise ShapeError(f"{received.size} tokens no forman una grilla cuadrada")
    return received.reshape(side, side)


def cmd_analyze_attention(args) -> int:
    from .analysis import attention_map_enhance, attention_rollout, otsu_threshold
    from .dumps import load_attention_dumps
    from .image_io import write_pgm

    out = output_dir(args)
    dumps = load_attention_dumps(args.attention)
    prefix = Path(args.attention).stem
    rows = []
    print(f"🔍 PASO 1: Mapas de atención de {len(dumps)} bloques...")
    for block, (stage, attn) in sorted(dumps.items()):
        saliency = attention_saliency(attn[args.index])
        write_pgm(out / f"{prefix}_block{block:03d}_raw", saliency)
        try:
            threshold = otsu_threshold(saliency)
            write_pgm(out / f"{prefix}_block{block:03d}_otsu", attention_map_enhance(saliency))
        except DegenerateHistogramError:
            logger.warning(f"Bloque {block}: mapa de atención constante, sin realce")
            threshold = float('nan')
        rows.append({'block': block, 'stage': stage, 'otsu_threshold': threshold})

    # rollout por etapa: las matrices de una etapa comparten cantidad de tokens
    by_stage: Dict[int, List[np.ndarray]] = {}
    for block, (stage, attn) in sorted(dumps.items()):
        by_stage.setdefault(stage, []).append(attn[args.index])
    for stage, mats in by_stage.items():
        rollout = attention_rollout(mats)
        write_pgm(out / f"{prefix}_stage{stage}_rollout", attention_saliency(rollout))

    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(out / 'attention_thresholds.csv', index=False)
    print(f"   ✅ Mapas PGM en {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import REGISTRY, run_gradcheck_suite

    unknown = sorted(set(args.ops or []) - set(REGISTRY))
    if unknown:
        raise ConfigError(f"casos de gradcheck desconocidos: {', '.join(unknown)}")
    out = output_dir(args)
    print(f"🧮 PASO 1: Gradcheck en 64 bits, semillas {args.seeds}...")
    df = run_gradcheck_suite(seeds=args.seeds, names=args.ops)
    out.mkdir(parents=True, exist_ok=True)
    df.to_csv(out / 'gradcheck.csv', index=False)
    worst = df.groupby('op')['max_rel_error'].max()
    for op, err in worst.items():
        print(f"   • {op}: {err:.2e}")
    if not df['passed'].all():
        failing = sorted(df.loc[~df['passed'], 'op'].unique())
        raise NumericError(f"gradcheck fuera de tolerancia: {', '.join(failing)}")
    print(f"   ✅ {len(df)} casos dentro de tolerancia")
    return EXIT_OK


def cmd_count_params(args) -> int:
    from .transformer import parameter_table

    cfg = load_config(args, require_seed=False)
    out = output_dir(args, cfg)
    rows = parameter_table(cfg.model)
    df = pd.DataFrame(rows, columns=['variant', 'params'])
    for kind, count in rows:
        print(f"   • {kind}: {count:,} parámetros")
    out.mkdir(parents=True, exist_ok=True)
    df.to_csv(out / 'param_counts.csv', index=False)
    return EXIT_OK


COMMANDS = {
    'generate-data': cmd_generate_data,
    'train': cmd_train,
    'evaluate': cmd_evaluate,
    'ablate-acp': cmd_ablate,
    'ablate-cat': cmd_ablate,
    'ablate-isolation': cmd_ablate,
    'compare': cmd_compare,
    'dump': cmd_dump,
    'analyze-pca': cmd_analyze_pca,
    'analyze-cka': cmd_analyze_cka,
    'analyze-attention': cmd_analyze_attention,
    'gradcheck': cmd_gradcheck,
    'count-params': cmd_count_params,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Punto de entrada; retorna el código de salida"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG_ERROR

    setup_logging(Path(args.out) if args.out else Path('runs'))
    banner(f"EI-VIT - {args.command.upper()}")

    try:
        code = COMMANDS[args.command](args)
    except NumericError as e:
        logger.error(f"Fallo numérico: {e}")
        print(f"\n❌ ERROR NUMÉRICO: {e}")
        return EXIT_NUMERIC_ERROR
    except (ConfigError, ShapeError, ValidationError, CheckpointError, FileNotFoundError) as e:
        logger.error(f"Error de configuración: {e}")
        print(f"\n❌ ERROR: {e}")
        return EXIT_CONFIG_ERROR

    print("\n" + "=" * 70)
    print("✅ PROCESO COMPLETADO EXITOSAMENTE")
    print("=" * 70 + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
