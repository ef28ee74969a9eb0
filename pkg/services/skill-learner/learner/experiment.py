"""
Полная матрица эксперимента: {MC × число выборок} ∪ {GMM × уровень сигма}
на каждом разбиении.
"""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from shared.models.trajectory import Dataset, SubjectRecord

from learner.config import Settings
from learner.evaluation import (
    EvalReport,
    GmmPredictor,
    McPredictor,
    evaluate,
    write_frame_records,
    write_results_csv,
    write_summary,
)
from learner.gmm import fit_em, format_cluster_summary, summarize_clusters
from learner.image_pipeline import EncoderModel, encode_demo, save_encoder, train_encoder
from learner.mc_baseline import train_mlp
from learner.stability import likelihood_bounds
from learner.synth_data import generate_demo, generate_subject, iter_subjects, make_roster, make_split

logger = logging.getLogger(__name__)


def collect_encoder_images(settings: Settings) -> np.ndarray:
    """
    Изображения для обучения кодировщика: равномерно по кадрам первой
    демонстрации каждого испытуемого.
    """
    synth = settings.synth_config()
    roster = make_roster(synth.subjects, synth.seed)
    per_subject = math.ceil(settings.encoder_train_images / len(roster))
    images = []
    for meta in roster:
        demo = generate_demo(generate_subject(meta, synth.seed), synth.duration_s, synth.rate_hz,
                             synth.seed, demo_index=0, with_images=True)
        picks = np.linspace(0, len(demo) - 1, num=min(per_subject, len(demo))).round().astype(int)
        images.extend(demo.frames[i].image for i in np.unique(picks))
        if len(images) >= settings.encoder_train_images:
            break
    return np.stack(images[:settings.encoder_train_images])


def build_encoded_corpus(settings: Settings, encoder: EncoderModel) -> Dataset:
    """Генерация корпуса с изображениями и кодирование по одному испытуемому"""
    subjects = []
    for record in iter_subjects(settings.synth_config(), with_images=True):
        demos = tuple(encode_demo(demo, encoder) for demo in record.demos)
        subjects.append(SubjectRecord(record.meta, demos))
        logger.debug(f"Испытуемый {record.meta.id} закодирован")
    ds = Dataset(tuple(subjects))
    logger.info(f"✅ Корпус закодирован: {len(subjects)} испытуемых, {ds.n_frames} кадров")
    return ds


def run_task(settings: Settings, ds: Dataset, task: str, out_dir: Optional[Path] = None) -> List[EvalReport]:
    """Все строки одной задачи: сначала MC по возрастанию числа выборок, затем GMM по уровням сигма"""
    train, test = make_split(ds, task)
    train_nodes = train.node_matrix(stride=settings.train_stride)
    test_eval = test.thinned(settings.eval_stride)
    logger.info(
        f"🔄 Задача {task}: обучение {len(train.subjects)} испытуемых ({len(train_nodes)} узлов), "
        f"тест {len(test.subjects)} испытуемых ({test_eval.n_frames} кадров)"
    )

    reports = []
    keep = settings.keep_frame_records

    mlp, sample_bounds = train_mlp(train_nodes, settings.mlp_config())
    for n_samples in settings.mc_sample_counts():
        predictor = McPredictor(mlp, sample_bounds, n_samples, seed=settings.seed)
        reports.append(evaluate(predictor, test_eval, keep_records=keep, task=task))

    model = fit_em(train_nodes, settings.gmm_components, settings.em_config())
    if out_dir is not None:
        summary = format_cluster_summary(summarize_clusters(model, train_nodes))
        (out_dir / f"clusters_{task}.csv").write_text(summary, encoding="utf-8")

    for m in settings.sigma_level_values():
        bounds = likelihood_bounds(model, m, settings.bounds_mode, nodes=train_nodes)
        predictor = GmmPredictor(model, bounds, adapt=settings.adapt)
        reports.append(evaluate(predictor, test_eval, keep_records=keep, task=task))

    if keep and out_dir is not None:
        for report in reports:
            write_frame_records(report, out_dir / "frames" / f"{task}_{report.method}.csv")
    return reports


def run_experiment(settings: Settings, out_dir: Union[str, Path],
                   tasks: Optional[Sequence[str]] = None) -> List[EvalReport]:
    """
    Генерация корпуса, обучение кодировщика, прогон всех задач и запись
    results.csv и summary.txt в out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = list(tasks) if tasks else settings.task_list()
    logger.info(f"🚀 Эксперимент: задачи {tasks}, результаты в {out_dir}")

    encoder = train_encoder(collect_encoder_images(settings), settings.encoder_config())
    save_encoder(encoder, out_dir / "encoder.txt")
    ds = build_encoded_corpus(settings, encoder)

    reports: List[EvalReport] = []
    for task in tasks:
        reports.extend(run_task(settings, ds, task, out_dir))
        # Промежуточная запись после каждой задачи
        write_results_csv(reports, out_dir / "results.csv")

    write_results_csv(reports, out_dir / "results.csv")
    write_summary(reports, out_dir / "summary.txt")
    logger.info(f"✅ Эксперимент завершен: {len(reports)} строк")
    return reports
