"""
Синтетические демонстрации УЗИ-сканирования и разбиения train/test.

Каждая демонстрация начинается с вертикального удержания зонда (калибровка),
затем плавно переходит в сканирующую дугу. Различия испытуемых вносятся
монотонными преобразованиями: масштаб силы растет с ИМТ, смещение ориентации
зависит от возраста и пола.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from shared.models.errors import InvalidArgumentError, SplitError
from shared.models.trajectory import (
    IMAGE_SIZE,
    BmiClass,
    ControlVariable,
    Dataset,
    Demonstration,
    Frame,
    Gender,
    Quaternion,
    SubjectMeta,
    SubjectRecord,
    Wrench,
)
from shared.utils.rotations import quat_from_axis_angle, quat_multiply, slerp

logger = logging.getLogger(__name__)

SPLIT_TASKS = ("intra", "inter_patient", "inter_gender", "inter_age", "inter_bmi")

MIN_DURATION_S = 5.0
MAX_DURATION_S = 120.0

# Протокол демонстрации
HOLD_S = 3.0
BLEND_S = 2.0
SCAN_PERIOD_S = 12.0
ROLL_AMPLITUDE_DEG = 20.0
PITCH_AMPLITUDE_DEG = 12.0

# Шумы
ORIENTATION_NOISE_DEG = 0.8
FORCE_NOISE_RATIO = 0.05
NOISE_CORRELATION = 0.9
TORQUE_NOISE = 0.005
SPECKLE_SCALE = 0.12

MAX_AGE = 67.0
MIN_FORCE_SCALE = 0.05

# Волонтеры клинического эксперимента: id, возраст, пол, рост (м), вес (кг)
VOLUNTEER_ROSTER = (
    (1, 19, "male", 1.65, 49),
    (2, 35, "male", 1.74, 68),
    (3, 27, "male", 1.72, 79),
    (4, 25, "male", 1.72, 62),
    (5, 23, "male", 1.84, 90),
    (6, 24, "male", 1.62, 46),
    (7, 23, "male", 1.79, 81),
    (8, 23, "male", 1.76, 53),
    (9, 22, "male", 1.77, 80),
    (10, 24, "male", 1.82, 72),
    (11, 27, "male", 1.81, 68),
    (12, 36, "male", 1.68, 54),
    (13, 67, "female", 1.60, 65),
    (14, 24, "male", 1.70, 67),
    (15, 22, "female", 1.62, 60),
    (16, 23, "male", 1.70, 55),
    (17, 19, "female", 1.58, 46),
    (18, 24, "female", 1.63, 51),
    (19, 25, "female", 1.55, 55),
    (20, 21, "female", 1.69, 60),
    (21, 19, "female", 1.54, 39),
    (22, 19, "female", 1.61, 55),
    (23, 24, "female", 1.58, 50),
    (24, 25, "female", 1.62, 49),
)

_GRID_Y, _GRID_X = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(float)


@dataclass(frozen=True)
class SynthConfig:
    subjects: int = 24
    demos_per_subject: int = 5
    duration_s: float = 40.0
    rate_hz: float = 10.0
    seed: int = 0


@dataclass(frozen=True)
class SubjectProfile:
    meta: SubjectMeta
    force_scale: float
    orientation_bias: Quaternion
    anatomy_phase: float
    orientation_noise_deg: float = ORIENTATION_NOISE_DEG
    force_noise_ratio: float = FORCE_NOISE_RATIO


def make_roster(n: int, seed: int = 0) -> List[SubjectMeta]:
    """
    Метаданные n испытуемых: первые 24 - клинический состав, далее
    детерминированное расширение по seed.
    """
    if n < 1:
        raise InvalidArgumentError(f"Число испытуемых должно быть >= 1, получено {n}")
    roster = [
        SubjectMeta(id=sid, age=float(age), gender=gender, height=height, weight=float(weight))
        for sid, age, gender, height, weight in VOLUNTEER_ROSTER[:n]
    ]
    for sid in range(len(VOLUNTEER_ROSTER) + 1, n + 1):
        rng = np.random.default_rng([seed, sid])
        gender = Gender.MALE if rng.random() < 0.5 else Gender.FEMALE
        height = rng.normal(1.75, 0.06) if gender is Gender.MALE else rng.normal(1.62, 0.05)
        height = round(float(np.clip(height, 1.45, 2.0)), 2)
        bmi = rng.uniform(16.4, 26.7)
        roster.append(SubjectMeta(
            id=sid,
            age=float(rng.integers(19, 68)),
            gender=gender,
            height=height,
            weight=round(bmi * height ** 2, 1),
        ))
    return roster


def generate_subject(meta: SubjectMeta, seed: int = 0) -> SubjectProfile:
    """
    Профиль испытуемого: force_scale = 0.5 + 0.06·(ИМТ − 16),
    смещение ориентации = Rx(возраст/67·10°) ∘ Ry(±5°, знак по полу).
    """
    rng = np.random.default_rng([seed, meta.id])
    force_scale = max(MIN_FORCE_SCALE, 0.5 + 0.06 * (meta.bmi - 16.0))
    tilt_x = quat_from_axis_angle([1.0, 0.0, 0.0], meta.age / MAX_AGE * 10.0)
    tilt_y = quat_from_axis_angle([0.0, 1.0, 0.0], 5.0 if meta.gender is Gender.MALE else -5.0)
    return SubjectProfile(
        meta=meta,
        force_scale=force_scale,
        orientation_bias=Quaternion.from_array(quat_multiply(tilt_x, tilt_y)),
        anatomy_phase=float(rng.uniform(0.0, 2.0 * math.pi)),
    )


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _ar_noise(rng: np.random.Generator, n: int, std: float, dims: int = 1) -> np.ndarray:
    """Коррелированный шум AR(1) со стационарным СКО std"""
    innovations = rng.normal(0.0, std * math.sqrt(1.0 - NOISE_CORRELATION ** 2), size=(n, dims))
    noise = np.empty((n, dims))
    noise[0] = rng.normal(0.0, std, size=dims)
    for i in range(1, n):
        noise[i] = NOISE_CORRELATION * noise[i - 1] + innovations[i]
    return noise


def render_phantom(roll_deg: float, pitch_deg: float, normal_force: float,
                   rng: np.random.Generator) -> np.ndarray:
    """
    Яркий эллипс на спекл-шуме. Положение эллипса следует за наклоном зонда,
    сила прижатия сплющивает его.
    """
    cx = IMAGE_SIZE / 2 + 2.5 * roll_deg
    cy = IMAGE_SIZE / 2 + 3.0 * pitch_deg
    semi_x = 36.0 * (1.0 + 0.015 * normal_force)
    semi_y = max(8.0, 22.0 * (1.0 - 0.02 * normal_force))
    inside = ((_GRID_X - cx) / semi_x) ** 2 + ((_GRID_Y - cy) / semi_y) ** 2 <= 1.0

    image = rng.rayleigh(SPECKLE_SCALE, size=(IMAGE_SIZE, IMAGE_SIZE))
    image[inside] += 0.55
    # Квантование до 8 бит, как при записи на диск
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def generate_demo(profile: SubjectProfile, duration_s: float, rate_hz: float = 10.0,
                  seed: int = 0, demo_index: int = 0, with_images: bool = False) -> Demonstration:
    """
    Одна демонстрация: удержание 3 с в вертикали, плавный переход и
    синусоидальная сканирующая дуга.

    Случайность определяется seed и номером subject_id·1000 + demo_index.
    """
    if not (math.isfinite(duration_s) and MIN_DURATION_S <= duration_s <= MAX_DURATION_S):
        raise InvalidArgumentError(
            f"Длительность должна быть в [{MIN_DURATION_S}, {MAX_DURATION_S}] с, получено {duration_s}"
        )
    if not (math.isfinite(rate_hz) and rate_hz > 0):
        raise InvalidArgumentError(f"Частота записи должна быть положительной, получено {rate_hz}")

    n_frames = int(round(duration_s * rate_hz))
    if n_frames < 2:
        raise InvalidArgumentError(f"Демонстрация из {n_frames} кадров: увеличьте длительность или частоту")

    rng = np.random.default_rng([seed, profile.meta.id * 1000 + demo_index])
    times = np.arange(n_frames) / rate_hz
    blend = _smoothstep((times - HOLD_S) / BLEND_S)
    contact = _smoothstep(times / (HOLD_S + BLEND_S))

    phase = 2.0 * math.pi * (times - HOLD_S) / SCAN_PERIOD_S + profile.anatomy_phase + rng.normal(0.0, 0.2)
    roll = ROLL_AMPLITUDE_DEG * np.sin(phase) * blend
    pitch = PITCH_AMPLITUDE_DEG * np.sin(2.0 * phase + 0.5) * blend
    orientation_noise = _ar_noise(rng, n_frames, profile.orientation_noise_deg, dims=2)

    plateau = profile.force_scale * 10.0
    normal = plateau * contact * (1.0 + 0.08 * np.sin(phase) * blend)
    normal = normal + _ar_noise(rng, n_frames, profile.force_noise_ratio * plateau)[:, 0] * contact
    normal = np.maximum(normal, 0.0)

    bias = profile.orientation_bias.as_array()
    identity = np.array([1.0, 0.0, 0.0, 0.0])
    frames = []
    for i, t in enumerate(times):
        if blend[i] == 0.0:
            q = identity
        else:
            roll_i = roll[i] + orientation_noise[i, 0] * blend[i]
            pitch_i = pitch[i] + orientation_noise[i, 1] * blend[i]
            scan = quat_multiply(
                quat_multiply(bias, quat_from_axis_angle([1.0, 0.0, 0.0], roll_i)),
                quat_from_axis_angle([0.0, 1.0, 0.0], pitch_i),
            )
            q = slerp(identity, scan, float(blend[i]))
            if q[0] < 0:
                q = -q

        # Боковые силы от наклона, момент от плеча контакта
        fz = float(normal[i])
        force = np.array([
            fz * 0.3 * math.sin(math.radians(roll[i])),
            fz * 0.3 * math.sin(math.radians(pitch[i])),
            fz,
        ])
        lever = np.array([0.01 * math.sin(phase[i]), 0.01 * math.cos(phase[i]), 0.03])
        torque = np.cross(lever, force) + rng.normal(0.0, TORQUE_NOISE, size=3) * contact[i]

        image = render_phantom(roll[i], pitch[i], fz, rng) if with_images else None
        frames.append(Frame(
            timestamp=float(t),
            w=ControlVariable(p=Quaternion.from_array(q), f=Wrench(tuple(force), tuple(torque))),
            image=image,
        ))
    return Demonstration(tuple(frames))


def generate_subject_record(meta: SubjectMeta, cfg: SynthConfig, with_images: bool = False) -> SubjectRecord:
    profile = generate_subject(meta, cfg.seed)
    demos = tuple(
        generate_demo(profile, cfg.duration_s, cfg.rate_hz, cfg.seed, d, with_images)
        for d in range(cfg.demos_per_subject)
    )
    return SubjectRecord(meta, demos)


def iter_subjects(cfg: SynthConfig, with_images: bool = False) -> Iterator[SubjectRecord]:
    """Поочередная генерация испытуемых (изображения всего корпуса не держатся в памяти)"""
    for meta in make_roster(cfg.subjects, cfg.seed):
        yield generate_subject_record(meta, cfg, with_images)


def generate_dataset(cfg: SynthConfig, with_images: bool = False) -> Dataset:
    if cfg.demos_per_subject < 1:
        raise InvalidArgumentError(f"Число демонстраций должно быть >= 1, получено {cfg.demos_per_subject}")
    logger.info(
        f"🔄 Генерация: {cfg.subjects} испытуемых × {cfg.demos_per_subject} демонстраций × "
        f"{cfg.duration_s} с @ {cfg.rate_hz} Гц, изображения={with_images}"
    )
    ds = Dataset(tuple(iter_subjects(cfg, with_images)))
    logger.info(f"✅ Сгенерировано {ds.n_frames} кадров")
    return ds


def _subset(ds: Dataset, ids) -> Dataset:
    ids = set(ids)
    return Dataset(tuple(s for s in ds.subjects if s.meta.id in ids))


def make_split(ds: Dataset, task: str) -> Tuple[Dataset, Dataset]:
    """
    Разбиение на обучение и тест.

    intra - последняя демонстрация каждого испытуемого в тест;
    inter_patient - два последних испытуемых в тест;
    inter_gender - обучение на более многочисленном поле (при равенстве - мужчины);
    inter_age - старшая четверть испытуемых в тест;
    inter_bmi - обучение на нормальном ИМТ, тест на остальных.
    """
    subjects = sorted(ds.subjects, key=lambda s: s.meta.id)
    test_ids: Optional[List[int]] = None

    if task == "intra":
        short = [s.meta.id for s in subjects if len(s.demos) < 2]
        if short or not subjects:
            raise SplitError(f"intra: у испытуемых {short} меньше двух демонстраций")
        train = Dataset(tuple(SubjectRecord(s.meta, s.demos[:-1]) for s in subjects))
        test = Dataset(tuple(SubjectRecord(s.meta, s.demos[-1:]) for s in subjects))
        return train, test

    if task == "inter_patient":
        if len(subjects) < 3:
            raise SplitError(f"inter_patient: нужно не менее 3 испытуемых, получено {len(subjects)}")
        test_ids = [s.meta.id for s in subjects[-2:]]

    elif task == "inter_gender":
        males = [s.meta.id for s in subjects if s.meta.gender is Gender.MALE]
        females = [s.meta.id for s in subjects if s.meta.gender is Gender.FEMALE]
        if not males or not females:
            raise SplitError("inter_gender: в датасете представлен только один пол")
        test_ids = females if len(males) >= len(females) else males

    elif task == "inter_age":
        if len(subjects) < 2:
            raise SplitError("inter_age: нужно не менее 2 испытуемых")
        by_age = sorted(subjects, key=lambda s: (-s.meta.age, s.meta.id))
        test_ids = [s.meta.id for s in by_age[:math.ceil(len(subjects) / 4)]]

    elif task == "inter_bmi":
        test_ids = [s.meta.id for s in subjects if s.meta.bmi_class is not BmiClass.NORMAL]
        if not test_ids or len(test_ids) == len(subjects):
            raise SplitError("inter_bmi: нужны испытуемые как с нормальным, так и с ненормальным ИМТ")

    else:
        raise SplitError(f"Неизвестная задача '{task}', допустимы {list(SPLIT_TASKS)}")

    train_ids = [s.meta.id for s in subjects if s.meta.id not in set(test_ids)]
    return _subset(ds, train_ids), _subset(ds, test_ids)
