"""
Командная строка: gen, encode, train-gmm, train-mc, predict, eval, experiment.

Глобальные флаги --seed, --config, --out, --log-level допускаются как до, так
и после подкоманды. Код возврата: 0 - успех, 2 - ошибка конфигурации,
1 - прочие ошибки.
"""

import argparse
import csv
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from shared.models.errors import ConfigError, InvalidArgumentError, SkillError
from shared.models.storage import load_dataset, save_dataset
from shared.models.trajectory import FEATURE_DIM
from shared.utils.matrix_text import format_float

from learner.adaptation import predict_adapted
from learner.config import Settings, setup_logging
from learner.evaluation import GmmPredictor, McPredictor, evaluate, write_frame_records, write_results_csv, write_summary
from learner.experiment import run_experiment
from learner.gmm import fit_em, format_cluster_summary, load_gmm, save_gmm, summarize_clusters
from learner.image_pipeline import encode_dataset, load_encoder, save_encoder, train_encoder
from learner.mc_baseline import load_mlp, mc_predict, save_mlp, train_mlp
from learner.stability import likelihood_bounds
from learner.synth_data import SPLIT_TASKS, SynthConfig, generate_dataset

logger = logging.getLogger(__name__)

DEFAULT_OUT = "out"


def _common_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="Базовый seed (перекрывает SEED)")
    parser.add_argument("--config", default=default, help="Файл конфигурации key=value")
    parser.add_argument("--out", default=argparse.SUPPRESS if suppress else DEFAULT_OUT, help="Каталог результатов")
    parser.add_argument("--log-level", default=default, help="Уровень логирования (перекрывает LOG_LEVEL)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skill-learner", description="Обучение навыков УЗИ-сканирования")
    _common_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _common_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="Сгенерировать синтетический датасет")
    p.add_argument("--subjects", type=int)
    p.add_argument("--demos", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--with-images", action="store_true")

    p = sub.add_parser("encode", parents=[common], help="Обучить кодировщик и закодировать изображения")
    p.add_argument("--data", required=True, help="Датасет с изображениями")
    p.add_argument("--encoder", help="Готовый кодировщик (без обучения)")
    p.add_argument("--keep-images", action="store_true")

    p = sub.add_parser("train-gmm", parents=[common], help="Обучить GMM на закодированном датасете")
    p.add_argument("--data", required=True)
    p.add_argument("--components", type=int)

    p = sub.add_parser("train-mc", parents=[common], help="Обучить MLP базового метода")
    p.add_argument("--data", required=True)

    for name, help_text in (("predict", "Предсказать управляющую переменную"),
                            ("eval", "Оценить метод на тестовом датасете")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--method", choices=("gmm", "mc"), required=True)
        p.add_argument("--model", required=True, help="Файл модели (gmm.txt или mlp.txt)")
        p.add_argument("--sigma", type=float, default=3.0)
        p.add_argument("--samples", type=int, default=1000)
        p.add_argument("--no-adapt", action="store_true")
        p.add_argument("--train-data", help="Обучающие узлы для эмпирических границ")
        if name == "predict":
            group = p.add_mutually_exclusive_group(required=True)
            group.add_argument("--features", help=f"{FEATURE_DIM} чисел через запятую")
            group.add_argument("--data", help="Закодированный датасет: предсказание для каждого кадра")
        else:
            p.add_argument("--data", required=True)
            p.add_argument("--task", default="custom")
            p.add_argument("--records", action="store_true", help="Записать покадровые ошибки")

    p = sub.add_parser("experiment", parents=[common], help="Полная матрица эксперимента")
    p.add_argument("--tasks", help=f"Задачи через запятую из {','.join(SPLIT_TASKS)}")
    return parser


def load_settings(args: argparse.Namespace) -> Settings:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.log_level is not None:
        overrides["log_level"] = args.log_level
    if getattr(args, "tasks", None):
        overrides["tasks"] = args.tasks
    return Settings.from_file(args.config, **overrides)


def _cmd_gen(args, settings: Settings) -> None:
    synth = settings.synth_config()
    cfg = SynthConfig(
        subjects=synth.subjects if args.subjects is None else args.subjects,
        demos_per_subject=synth.demos_per_subject if args.demos is None else args.demos,
        duration_s=synth.duration_s if args.duration is None else args.duration,
        rate_hz=synth.rate_hz if args.rate is None else args.rate,
        seed=synth.seed,
    )
    save_dataset(generate_dataset(cfg, with_images=args.with_images), args.out)


def _cmd_encode(args, settings: Settings) -> None:
    ds = load_dataset(args.data)
    if not ds.has_images():
        raise InvalidArgumentError(f"В датасете {args.data} нет изображений (сгенерируйте с --with-images)")
    out = Path(args.out)
    if args.encoder:
        encoder = load_encoder(args.encoder)
    else:
        encoder = train_encoder(ds, settings.encoder_config())
    save_encoder(encoder, out / "encoder.txt")
    save_dataset(encode_dataset(ds, encoder, keep_images=args.keep_images), out)


def _encoded_nodes(path: str) -> np.ndarray:
    ds = load_dataset(path)
    if not ds.has_features():
        raise InvalidArgumentError(f"Датасет {path} не закодирован (выполните encode)")
    return ds.node_matrix()


def _cmd_train_gmm(args, settings: Settings) -> None:
    nodes = _encoded_nodes(args.data)
    n_components = settings.gmm_components if args.components is None else args.components
    model = fit_em(nodes, n_components, settings.em_config())
    out = Path(args.out)
    save_gmm(model, out / "gmm.txt")
    (out / "clusters.csv").write_text(format_cluster_summary(summarize_clusters(model, nodes)), encoding="utf-8")


def _cmd_train_mc(args, settings: Settings) -> None:
    mlp, bounds = train_mlp(_encoded_nodes(args.data), settings.mlp_config())
    save_mlp(mlp, bounds, Path(args.out) / "mlp.txt")


def _predictor(args, settings: Settings):
    if args.method == "gmm":
        model = load_gmm(args.model)
        nodes = _encoded_nodes(args.train_data) if args.train_data else None
        mode = settings.bounds_mode if nodes is not None else "analytic"
        bounds = likelihood_bounds(model, args.sigma, mode, nodes=nodes)
        return GmmPredictor(model, bounds, adapt=settings.adapt and not args.no_adapt)
    mlp, bounds = load_mlp(args.model)
    return McPredictor(mlp, bounds, args.samples, seed=settings.seed)


def _parse_features(text: str) -> np.ndarray:
    try:
        values = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise InvalidArgumentError(f"--features: не удалось разобрать '{text}'")
    if values.shape != (FEATURE_DIM,):
        raise InvalidArgumentError(f"--features: ожидалось {FEATURE_DIM} чисел, получено {values.size}")
    return values


def _cmd_predict(args, settings: Settings) -> None:
    predictor = _predictor(args, settings)
    if args.features:
        v = _parse_features(args.features)
        if isinstance(predictor, GmmPredictor):
            result = predict_adapted(predictor.model, predictor.bounds, v, adapt_unstable=predictor.adapt)
            control = result.control
            logger.info(f"Устойчиво: {result.verdict.stable}, ближайшая компонента {result.verdict.best_component}")
        else:
            control = mc_predict(predictor.mlp, predictor.bounds, v, predictor.n_samples, predictor.seed)
        print(",".join(format_float(x) for x in control.flatten()))
        return

    ds = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "predictions.csv").open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["frame", "timestamp", "qw", "qx", "qy", "qz", "fx", "fy", "fz", "tx", "ty", "tz"])
        for index, frame in enumerate(ds.frames()):
            control = predictor.predict(np.asarray(frame.node().v), index)
            writer.writerow([index, format_float(frame.timestamp)] + [format_float(x) for x in control.flatten()])
    logger.info(f"✅ Предсказания записаны: {out / 'predictions.csv'}")


def _cmd_eval(args, settings: Settings) -> None:
    ds = load_dataset(args.data).thinned(settings.eval_stride)
    report = evaluate(_predictor(args, settings), ds, keep_records=args.records, task=args.task)
    out = Path(args.out)
    write_results_csv([report], out / "results.csv")
    write_summary([report], out / "summary.txt")
    if args.records:
        write_frame_records(report, out / "frames" / f"{args.task}_{report.method}.csv")


def _cmd_experiment(args, settings: Settings) -> None:
    run_experiment(settings, args.out)


COMMANDS = {
    "gen": _cmd_gen,
    "encode": _cmd_encode,
    "train-gmm": _cmd_train_gmm,
    "train-mc": _cmd_train_mc,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "experiment": _cmd_experiment,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args)
    except ConfigError as e:
        setup_logging()
        logger.error(f"❌ {e}")
        return 2

    setup_logging(settings.log_level, settings.log_file)
    try:
        COMMANDS[args.command](args, settings)
    except ConfigError as e:
        logger.error(f"❌ {e}")
        return 2
    except SkillError as e:
        logger.error(f"❌ {e}")
        return 1
    return 0
