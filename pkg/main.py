"""
Script principal del banco de pruebas de seguimiento de superficies táctil.

Subcomandos:
1. gen-data: genera el dataset offline con la política de comportamiento
2. train:    entrena la red SFDQN (Q-learning offline) y registra checkpoints
3. eval:     curva de aprendizaje y precisión de acciones buenas
4. rollout:  seguimiento autónomo de una superficie en movimiento
5. inspect:  resumen de un dataset (acciones, ContactRate, recompensas)

Uso:
    python main.py gen-data --config experimento.cfg --n-units 12000 --out runs/datos
    python main.py train runs/datos/dataset.bin --config experimento.cfg --out runs/entrenamiento
    python main.py eval runs/entrenamiento/checkpoints runs/entrenamiento/test.bin --out runs/eval --report
    python main.py rollout runs/entrenamiento/final.bin --config experimento.cfg --drift 5e-5
    python main.py inspect runs/datos/dataset.bin

Códigos de salida: 0 éxito, 2 configuración, 3 formato, 4 fallo numérico, 1 otros.
"""

import argparse
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np
from loguru import logger

from app.behavior_policy import generate_dataset, generate_shards, policy_rng
from app.config import ConfigError, get_settings, load_experiment_config, write_resolved_config
from app.dataset import DatasetFormatError, load_dataset, split, write_dataset
from app.eval_harness import (
    EvaluationError,
    action_distribution,
    contact_rate_histogram,
    learning_curve,
    oracle_policy,
    random_baseline_precision,
    rollout,
    rollout_summary_frame,
    rollout_trace_frame,
    state_contact_rates,
)
from app.qnet import CheckpointError, NumericFaultError, checkpoint_info, load_checkpoint, save_checkpoint
from app.report_generator import ReportGenerator
from app.rl_core import classify_actions, export_class_table
from app.schemas import NetworkArch
from app.sim_world import make_env
from app.tactile_image import image_contact_rate
from app.trainer import CheckpointRecord, TrainingAbortedError, train

settings = get_settings()

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4


def setup_logging() -> Path:
    """Configura el sistema de logging (consola + archivo con timestamp)."""
    logs_dir = Path(settings.logs_dir)
    logs_dir.mkdir(parents=True, exist_ok=True)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_file = logs_dir / f"sfdqn_{timestamp}.log"

    logger.remove()
    logger.add(sys.stderr, level=settings.log_level, colorize=True)
    logger.add(
        log_file,
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {message}",
        level=settings.log_level
    )
    return log_file


def banner(title: str) -> None:
    print("\n" + "="*80)
    print(title)
    print("="*80)


def require_path(path: Optional[str], what: str) -> Path:
    """Verifica al inicio que una ruta referenciada exista."""
    if path is None:
        raise ConfigError(f"Falta la ruta de {what}")
    resolved = Path(path)
    if not resolved.exists():
        raise ConfigError(f"No existe {what}: {resolved}")
    return resolved


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Seguimiento de superficies con SFDQN (simulado)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="Archivo key=value del experimento")
        p.add_argument("--seed", type=int, help="Semilla (entorno y entrenamiento)")
        p.add_argument("--out", help="Carpeta de salida")

    p = sub.add_parser("gen-data", help="Genera el dataset con la política de comportamiento")
    common(p)
    p.add_argument("--n-units", type=int, help="Número de unidades N")
    p.add_argument("--shards", type=int, help="Entornos independientes en paralelo")

    p = sub.add_parser("train", help="Entrena la red sobre un dataset")
    common(p)
    p.add_argument("dataset", help="Dataset completo (se divide en entrenamiento/prueba)")
    p.add_argument("--steps", type=int, help="Pasos de entrenamiento M")
    p.add_argument("--arch", choices=["shallow", "deep"])
    p.add_argument("--gamma", type=float)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("eval", help="Evalúa los checkpoints sobre el conjunto de prueba")
    common(p)
    p.add_argument("checkpoints", help="Carpeta de checkpoints")
    p.add_argument("test", help="Dataset de prueba (con su sidecar)")
    p.add_argument("--report", action="store_true", help="Genera reportes PDF y Excel")

    p = sub.add_parser("rollout", help="Rollout autónomo sobre una superficie en movimiento")
    common(p)
    p.add_argument("checkpoint", nargs="?", help="Checkpoint de la red")
    p.add_argument("--oracle", action="store_true", help="Usa la política oráculo en lugar de la red")
    p.add_argument("--steps", type=int, help="Pasos del rollout")
    p.add_argument("--drift", type=float, help="Deriva lateral por paso (m)")
    p.add_argument("--frame-every", type=int, help="Vuelca un cuadro PGM cada k pasos")

    p = sub.add_parser("inspect", help="Resume un dataset")
    common(p)
    p.add_argument("dataset", help="Archivo del dataset")

    return parser


def resolve_config(args: argparse.Namespace):
    """Carga la configuración del experimento aplicando los flags de la CLI."""
    overrides = {
        "seed": args.seed,
        "n_units": getattr(args, "n_units", None),
        "shards": getattr(args, "shards", None),
        "arch": getattr(args, "arch", None),
        "gamma": getattr(args, "gamma", None),
        "lr": getattr(args, "lr", None),
        "drift": getattr(args, "drift", None),
        "frame_every": getattr(args, "frame_every", None),
    }
    steps = getattr(args, "steps", None)
    if args.command == "train":
        overrides["train_steps"] = steps
    elif args.command == "rollout":
        overrides["rollout_steps"] = steps

    config_path = require_path(args.config, "el archivo de configuración") if args.config else None
    env_cfg, train_cfg, exp_cfg = load_experiment_config(config_path, overrides)

    out = Path(args.out or Path(exp_cfg.output_dir) / args.command)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(out / "resolved_config.cfg", env_cfg, train_cfg, exp_cfg)
    return env_cfg, train_cfg, exp_cfg, out


def cmd_gen_data(env_cfg, exp_cfg, out: Path) -> Path:
    """Genera el dataset, su sidecar, el fondo y la tabla de clases."""
    banner("🧪 GENERACIÓN DEL DATASET")
    band = exp_cfg.band()
    env = make_env(env_cfg, exp_cfg.tau)
    classes = classify_actions(env, exp_cfg.class_epsilon, band)

    if exp_cfg.shards > 1:
        dataset = generate_shards(env_cfg, exp_cfg.n_units, exp_cfg.shards, classes, env.background,
                                  exp_cfg.tau, band)
    else:
        dataset = generate_dataset(env, exp_cfg.n_units, classes, policy_rng(env_cfg.seed), band)

    path = write_dataset(dataset, out / "dataset.bin")
    export_class_table(classes, out / "action_classes.txt")

    print(f"\n📊 Unidades generadas: {len(dataset)}")
    print(f"   💾 Dataset: {path}")
    print(f"   🏷️  Clases: {out / 'action_classes.txt'}")
    if len(dataset):
        print(f"   🎯 Tasa de recompensa: {float(np.mean(dataset.rewards > 0)):.3f}")
    return path


def cmd_train(dataset_path: Path, env_cfg, train_cfg, exp_cfg, out: Path) -> Path:
    """Divide el dataset, entrena y guarda log, checkpoints y conjunto de prueba."""
    banner("🧠 ENTRENAMIENTO SFDQN")
    dataset = load_dataset(dataset_path)
    train_set, test_set = split(dataset, exp_cfg.train_fraction, exp_cfg.split_seed)
    write_dataset(test_set, out / "test.bin", {"source": dataset_path.name, "split": "test"})
    print(f"\n📂 Entrenamiento: {len(train_set)} unidades | Prueba: {len(test_set)} unidades")

    arch = NetworkArch.for_variant(exp_cfg.arch, joint_scale=env_cfg.joint_limit, velocity_scale=env_cfg.delta)
    try:
        net, log, checkpoints = train(train_set, train_cfg, arch, out / "checkpoints")
    except TrainingAbortedError as e:
        e.log.to_csv(out / "train_log.csv")
        if e.last_checkpoint:
            print(f"\n⚠️  Último checkpoint válido: {e.last_checkpoint.path}")
        raise

    log_path = log.to_csv(out / "train_log.csv")
    final = save_checkpoint(net, out / "final.bin", train_cfg.train_steps, len(checkpoints))

    print(f"\n✅ Checkpoints emitidos: {len(checkpoints)}")
    print(f"   📈 Log: {log_path}")
    print(f"   💾 Red final: {final}")
    return final


def load_checkpoint_records(directory: Path) -> list[CheckpointRecord]:
    records = []
    for path in sorted(directory.glob("ckpt_*.bin")):
        info = checkpoint_info(path)
        records.append(CheckpointRecord(info["checkpoint_id"], info["step"], path=path))
    return records


def cmd_eval(checkpoint_dir: Path, test_path: Path, exp_cfg, out: Path, report: bool) -> Path:
    """Curva de aprendizaje, reporte de precisión final y línea base."""
    banner("📏 EVALUACIÓN DE PRECISIÓN")
    test = load_dataset(test_path)
    if test.classes is None:
        raise EvaluationError(f"El dataset {test_path} no tiene clasificación de acciones en su sidecar")

    band = exp_cfg.band()
    records = load_checkpoint_records(checkpoint_dir)
    curve = learning_curve(records, test, test.classes, band, workers=settings.eval_workers)
    curve_path = out / "learning_curve.csv"
    curve.to_csv(curve_path, index=False)

    final_row = curve.iloc[-1]
    curve.tail(1).to_csv(out / "precision_report.csv", index=False)
    baseline = random_baseline_precision(test, test.classes, band)
    actions = action_distribution(test)
    actions.to_csv(out / "action_distribution.csv", index=False)

    print(f"\n📊 Checkpoints evaluados: {len(curve)}")
    print(f"   🎯 Precisión final (paso {int(final_row['step'])}): {final_row['precision']:.3f}")
    print(f"   🎲 Línea base aleatoria: {baseline:.3f}")
    print(f"   🏆 Mejor precisión: {curve['precision'].max():.3f}")

    if report:
        final_dict = {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in final_row.to_dict().items()}
        data = {
            "dataset": str(test_path),
            "checkpoint_dir": str(checkpoint_dir),
            "final": final_dict,
            "baseline": baseline,
            "curve": curve.to_dict("records"),
            "actions": actions.to_dict("records"),
        }
        reports = ReportGenerator(out / settings.report_dir_name).generate_both(data)
        print(f"\n✅ Reportes generados exitosamente:")
        print(f"   📄 PDF: {reports['pdf']}")
        print(f"   📊 Excel: {reports['excel']}")
    return curve_path


def cmd_rollout(checkpoint: Optional[Path], env_cfg, exp_cfg, out: Path, oracle: bool) -> Path:
    """Rollout de la red (o del oráculo) con deriva lateral de la superficie."""
    banner("🤖 ROLLOUT AUTÓNOMO")
    band = exp_cfg.band()
    env = make_env(env_cfg, exp_cfg.tau)
    if oracle:
        policy = oracle_policy(classify_actions(env, exp_cfg.class_epsilon, band), band)
    else:
        policy = load_checkpoint(checkpoint)

    frame_dir = out / "frames" if exp_cfg.frame_every else None
    report = rollout(policy, env, exp_cfg.rollout_steps, exp_cfg.drift, exp_cfg.warmup, band,
                     frame_dir, exp_cfg.frame_every)

    rollout_trace_frame(report, band).to_csv(out / "rollout_trace.csv", index=False)
    summary_path = out / "rollout_report.csv"
    rollout_summary_frame([report]).to_csv(summary_path, index=False)

    print(f"\n📊 Pasos: {report.steps} (calentamiento {report.warmup})")
    print(f"   🎯 Fracción en banda: {report.in_band_fraction:.3f}")
    print(f"   ⚠️  Pasos sin contacto: {report.lost_contact}")
    return summary_path


def cmd_inspect(dataset_path: Path, out: Path) -> dict:
    """Histograma de acciones y de ContactRate, tasa de recompensa y ContactRate máximo."""
    banner("🔍 INSPECCIÓN DEL DATASET")
    dataset = load_dataset(dataset_path)
    print(f"\n📦 Unidades: {len(dataset)} | semilla {dataset.seed} | hash {dataset.config_hash.hex()[:16]}...")
    if len(dataset) == 0:
        print("   ⚠️  Dataset vacío")
        return {"n_units": 0}

    actions = action_distribution(dataset)
    actions.to_csv(out / "action_distribution.csv", index=False)
    print("\n🎮 Acciones:")
    for row in actions.itertuples():
        print(f"   {row.action}: {row.count:6d} ({row.frequency:.3f})")

    summary = {"n_units": len(dataset), "reward_rate": float(np.mean(dataset.rewards > 0))}
    print(f"\n🎯 Tasa de recompensa: {summary['reward_rate']:.3f}")

    if dataset.background is not None:
        post = np.array([image_contact_rate(img, dataset.background, dataset.tau)
                         for img in dataset.records["n_image"]])
        histogram = contact_rate_histogram(post, dataset.band)
        histogram.to_csv(out / "contact_rate_histogram.csv", index=False)
        summary["max_contact_rate"] = float(post.max())
        summary["mean_state_contact_rate"] = float(state_contact_rates(dataset).mean())
        print("\n📈 ContactRate de s′:")
        for row in histogram.itertuples():
            print(f"   {row.bin}: {row.count}")
        print(f"   Máximo: {summary['max_contact_rate']:.2f}")
        if summary["max_contact_rate"] > 300:
            print("   ⚠️  Hay estados de alto contacto (ContactRate > 300)")
    else:
        print("\n⚠️  Sin fondo asociado: se omite el histograma de ContactRate")

    return summary


def run(args: argparse.Namespace) -> None:
    if args.command == "eval":
        checkpoint_dir = require_path(args.checkpoints, "la carpeta de checkpoints")
        test_path = require_path(args.test, "el dataset de prueba")
    elif args.command in ("train", "inspect"):
        dataset_path = require_path(args.dataset, "el dataset")
    elif args.command == "rollout" and not args.oracle:
        checkpoint = require_path(args.checkpoint, "el checkpoint")

    env_cfg, train_cfg, exp_cfg, out = resolve_config(args)
    logger.info(f"Comando {args.command}: salidas en {out}")

    if args.command == "gen-data":
        cmd_gen_data(env_cfg, exp_cfg, out)
    elif args.command == "train":
        cmd_train(dataset_path, env_cfg, train_cfg, exp_cfg, out)
    elif args.command == "eval":
        cmd_eval(checkpoint_dir, test_path, exp_cfg, out, args.report)
    elif args.command == "rollout":
        cmd_rollout(None if args.oracle else checkpoint, env_cfg, exp_cfg, out, args.oracle)
    else:
        cmd_inspect(dataset_path, out)


def main(argv: Optional[list[str]] = None) -> int:
    """Punto de entrada; devuelve el código de salida."""
    args = build_parser().parse_args(argv)
    setup_logging()

    try:
        run(args)
    except ConfigError as e:
        logger.error(f"❌ Error de configuración: {e}")
        print(f"\n❌ ERROR DE CONFIGURACIÓN: {e}")
        return EXIT_CONFIG
    except (DatasetFormatError, CheckpointError) as e:
        logger.error(f"❌ Error de formato: {e}")
        print(f"\n❌ ERROR DE FORMATO: {e}")
        return EXIT_FORMAT
    except (NumericFaultError, TrainingAbortedError) as e:
        logger.error(f"❌ Fallo numérico: {e}")
        print(f"\n❌ FALLO NUMÉRICO: {e}")
        return EXIT_NUMERIC
    except Exception as e:
        logger.error(f"❌ Error en el proceso principal: {e}")
        print(f"\n❌ ERROR: {e}")
        return EXIT_OTHER

    logger.info("Proceso completado exitosamente")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
