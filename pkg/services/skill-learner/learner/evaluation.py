"""
Оценка методов на тестовой выборке: ошибки позы, силы, момента и FPS.
"""

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Union

import numpy as np

from shared.models.errors import InvalidArgumentError, ParseError
from shared.models.trajectory import ControlVariable, Dataset, wrench_errors
from shared.utils.matrix_text import format_float
from shared.utils.rotations import quat_angle_deg

from learner.adaptation import predict_adapted
from learner.gmm import GmmModel
from learner.image_pipeline import EncoderModel, encode_features
from learner.mc_baseline import MlpModel, SampleBounds, mc_predict
from learner.stability import LikelihoodBounds

logger = logging.getLogger(__name__)

METRICS = ("pose", "force", "torque")
STAT_FIELDS = ("mean", "std", "median", "q1", "q3")
RESULT_COLUMNS = (
    ["task", "method", "n_frames"]
    + [f"{metric}_{stat}" for metric in METRICS for stat in STAT_FIELDS]
    + ["stability_rate", "fps"]
)


@dataclass(frozen=True)
class ErrorStats:
    """Статистика ошибок; std - популяционное (деление на n)"""
    mean: float
    std: float
    median: float
    q1: float
    q3: float

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "ErrorStats":
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            raise InvalidArgumentError("Нет значений для статистики")
        q1, median, q3 = np.percentile(values, [25, 50, 75])
        return cls(
            mean=float(np.mean(values)),
            std=float(np.std(values)),
            median=float(median),
            q1=float(q1),
            q3=float(q3),
        )


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    pose: float
    force: float
    torque: float


@dataclass(frozen=True)
class EvalReport:
    method: str
    task: str
    n_frames: int
    pose: ErrorStats
    force: ErrorStats
    torque: ErrorStats
    fps: float
    stability_rate: Optional[float] = None
    records: Optional[List[FrameRecord]] = None


class Predictor(Protocol):
    name: str

    def predict(self, v: np.ndarray, frame_index: int) -> ControlVariable:
        ...


class GmmPredictor:
    """GMR -> оценка устойчивости -> адаптация"""

    def __init__(self, model: GmmModel, bounds: LikelihoodBounds, adapt: bool = True):
        self.model = model
        self.bounds = bounds
        self.adapt = adapt
        self.name = f"gmm+{bounds.sigma:g}sigma" + ("" if adapt else "+noadapt")
        self.n_predictions = 0
        self.n_stable = 0

    def predict(self, v: np.ndarray, frame_index: int) -> ControlVariable:
        result = predict_adapted(self.model, self.bounds, v, adapt_unstable=self.adapt)
        self.n_predictions += 1
        self.n_stable += int(result.verdict.stable)
        return result.control

    @property
    def stability_rate(self) -> Optional[float]:
        if not self.n_predictions:
            return None
        return self.n_stable / self.n_predictions


class McPredictor:
    """Монте-Карло с n_samples кандидатами; seed кадра = seed + frame_index"""

    def __init__(self, mlp: MlpModel, bounds: SampleBounds, n_samples: int, seed: int = 0):
        if n_samples < 1:
            raise InvalidArgumentError(f"Число выборок должно быть >= 1, получено {n_samples}")
        self.mlp = mlp
        self.bounds = bounds
        self.n_samples = n_samples
        self.seed = seed
        self.name = f"mc+{n_samples}"

    def predict(self, v: np.ndarray, frame_index: int) -> ControlVariable:
        return mc_predict(self.mlp, self.bounds, v, self.n_samples, self.seed + frame_index)


def evaluate(predictor: Predictor, test: Dataset, encoder: Optional[EncoderModel] = None,
             keep_records: bool = False, task: str = "") -> EvalReport:
    """
    Прогон предсказателя по всем кадрам тестовой выборки.

    Признаки v берутся из кадра или кодируются encoder; в FPS учитывается
    только время предсказания.
    """
    pose_errors, force_errors, torque_errors = [], [], []
    elapsed = 0.0

    for index, frame in enumerate(test.frames()):
        if frame.features is not None:
            v = np.asarray(frame.features)
        elif frame.image is not None and encoder is not None:
            v = encode_features(frame.image, encoder)
        else:
            raise InvalidArgumentError(f"Кадр {index}: нет признаков и не задан кодировщик изображений")

        started = time.perf_counter()
        predicted = predictor.predict(v, index)
        elapsed += time.perf_counter() - started

        pose_errors.append(quat_angle_deg(predicted.p.as_array(), frame.w.p.as_array()))
        force_err, torque_err = wrench_errors(predicted.f, frame.w.f)
        force_errors.append(force_err)
        torque_errors.append(torque_err)

    n_frames = len(pose_errors)
    if n_frames == 0:
        raise InvalidArgumentError("Тестовая выборка пуста")

    records = None
    if keep_records:
        records = [FrameRecord(i, p, f, t) for i, (p, f, t) in enumerate(zip(pose_errors, force_errors, torque_errors))]

    report = EvalReport(
        method=predictor.name,
        task=task,
        n_frames=n_frames,
        pose=ErrorStats.from_values(pose_errors),
        force=ErrorStats.from_values(force_errors),
        torque=ErrorStats.from_values(torque_errors),
        fps=n_frames / max(elapsed, 1e-12),
        stability_rate=getattr(predictor, "stability_rate", None),
        records=records,
    )
    logger.info(
        f"📊 {task or '-'} / {report.method}: поза {report.pose.mean:.3f}±{report.pose.std:.3f}°, "
        f"сила {report.force.mean:.3f}±{report.force.std:.3f} Н, "
        f"момент {report.torque.mean:.4f}±{report.torque.std:.4f} Н·м, FPS {report.fps:.1f}"
    )
    return report


def write_results_csv(reports: Sequence[EvalReport], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in reports:
            row = [r.task, r.method, str(r.n_frames)]
            for metric in METRICS:
                stats = getattr(r, metric)
                row.extend(format_float(getattr(stats, stat)) for stat in STAT_FIELDS)
            row.append("" if r.stability_rate is None else format_float(r.stability_rate))
            row.append(format_float(r.fps))
            writer.writerow(row)


def read_results_csv(path: Union[str, Path]) -> List[EvalReport]:
    source = str(path)
    reports = []
    with Path(path).open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != RESULT_COLUMNS:
            raise ParseError(f"неожиданный заголовок таблицы: {header}", source, 1)
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(RESULT_COLUMNS):
                raise ParseError(f"ожидалось {len(RESULT_COLUMNS)} полей, получено {len(row)}", source, line_no)
            values = dict(zip(RESULT_COLUMNS, row))
            try:
                stats = {
                    metric: ErrorStats(**{stat: float(values[f"{metric}_{stat}"]) for stat in STAT_FIELDS})
                    for metric in METRICS
                }
                reports.append(EvalReport(
                    method=values["method"],
                    task=values["task"],
                    n_frames=int(values["n_frames"]),
                    fps=float(values["fps"]),
                    stability_rate=float(values["stability_rate"]) if values["stability_rate"] else None,
                    **stats,
                ))
            except ValueError as e:
                raise ParseError(f"некорректное значение: {e}", source, line_no)
    return reports


def format_summary(reports: Sequence[EvalReport]) -> str:
    """Человекочитаемая сводка, сгруппированная по задачам"""
    lines = []
    tasks = list(dict.fromkeys(r.task for r in reports))
    for task in tasks:
        lines.append(f"=== {task} ===")
        lines.append(f"{'method':<20} {'pose, deg':>20} {'force, N':>18} {'torque, Nm':>18} {'FPS':>10} {'stable':>8}")
        for r in (r for r in reports if r.task == task):
            stable = "-" if r.stability_rate is None else f"{r.stability_rate:.3f}"
            lines.append(
                f"{r.method:<20} "
                f"{f'{r.pose.mean:.4f}±{r.pose.std:.4f}':>20} "
                f"{f'{r.force.mean:.4f}±{r.force.std:.4f}':>18} "
                f"{f'{r.torque.mean:.4f}±{r.torque.std:.4f}':>18} "
                f"{r.fps:>10.2f} {stable:>8}"
            )
        lines.append("")
    return "\n".join(lines)


def write_summary(reports: Sequence[EvalReport], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_summary(reports), encoding="utf-8")


def write_frame_records(report: EvalReport, path: Union[str, Path]) -> None:
    """Пары (кадр, ошибка) для box-plot"""
    if report.records is None:
        raise InvalidArgumentError(f"Отчет {report.method} не содержит покадровых записей")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["frame", "pose_deg", "force_N", "torque_Nm"])
        for rec in report.records:
            writer.writerow([rec.frame, format_float(rec.pose), format_float(rec.force), format_float(rec.torque)])
