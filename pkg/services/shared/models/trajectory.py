"""
Доменные типы: ориентация, сила/момент, узлы латентного пространства,
кадры демонстраций, метаданные испытуемых и датасет.

Все типы неизменяемы после создания.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from shared.models.errors import InvalidArgumentError, SchemaError
from shared.utils.rotations import normalize_quaternion

FEATURE_DIM = 40
QUATERNION_DIM = 4
WRENCH_DIM = 6
CONTROL_DIM = QUATERNION_DIM + WRENCH_DIM
NODE_DIM = FEATURE_DIM + CONTROL_DIM
IMAGE_SIZE = 224

# Пороги ВОЗ для классификации ИМТ
BMI_UNDERWEIGHT = 18.5
BMI_OVERWEIGHT = 25.0


def _finite_tuple(values: Sequence[float], length: int, what: str) -> Tuple[float, ...]:
    result = tuple(float(x) for x in values)
    if len(result) != length:
        raise InvalidArgumentError(f"{what}: ожидалось {length} значений, получено {len(result)}")
    if not all(math.isfinite(x) for x in result):
        raise InvalidArgumentError(f"{what}: нечисловые значения")
    return result


@dataclass(frozen=True)
class Quaternion:
    """Ориентация зонда, всегда единичной нормы"""
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        unit, _ = normalize_quaternion(np.array([self.w, self.x, self.y, self.z], dtype=float))
        for name, value in zip("wxyz", unit):
            object.__setattr__(self, name, float(value))

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Quaternion":
        w, x, y, z = _finite_tuple(values, QUATERNION_DIM, "Кватернион")
        return cls(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def __array__(self, dtype=None, copy=None):
        return np.array([self.w, self.x, self.y, self.z], dtype=dtype)


@dataclass(frozen=True)
class Wrench:
    """Контактная сила (Н) и момент (Н·м) на кончике зонда"""
    force: Tuple[float, float, float]
    torque: Tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "force", _finite_tuple(self.force, 3, "Сила"))
        object.__setattr__(self, "torque", _finite_tuple(self.torque, 3, "Момент"))

    @classmethod
    def zero(cls) -> "Wrench":
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    def as_array(self) -> np.ndarray:
        return np.array(self.force + self.torque)


@dataclass(frozen=True)
class ControlVariable:
    """
    Управляемая переменная w = {p, f}.

    Развертывается в 10-вектор [p.w, p.x, p.y, p.z, fx, fy, fz, tx, ty, tz].
    """
    p: Quaternion
    f: Wrench

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.p.as_array(), self.f.as_array()])

    @classmethod
    def unflatten(cls, values: Sequence[float]) -> "ControlVariable":
        vec = _finite_tuple(values, CONTROL_DIM, "Управляющая переменная")
        return cls(
            p=Quaternion.from_array(vec[:QUATERNION_DIM]),
            f=Wrench(force=vec[4:7], torque=vec[7:10]),
        )


@dataclass(frozen=True)
class LatentNode:
    """50-мерный узел [v(40) | p(4) | f(6)]"""
    v: Tuple[float, ...]
    w: ControlVariable

    def __post_init__(self):
        object.__setattr__(self, "v", _finite_tuple(self.v, FEATURE_DIM, "Вектор признаков"))

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.array(self.v), self.w.flatten()])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "LatentNode":
        arr = np.asarray(values, dtype=float)
        if arr.shape != (NODE_DIM,):
            raise InvalidArgumentError(f"Узел должен иметь размерность {NODE_DIM}, получено {arr.shape}")
        return cls(v=tuple(arr[:FEATURE_DIM]), w=ControlVariable.unflatten(arr[FEATURE_DIM:]))


def wrench_errors(pred: Wrench, truth: Wrench) -> Tuple[float, float]:
    """
    Ошибки по силе и моменту.

    Returns:
        (норма разности сил в Н, норма разности моментов в Н·м)
    """
    force_err = float(np.linalg.norm(np.subtract(pred.force, truth.force)))
    torque_err = float(np.linalg.norm(np.subtract(pred.torque, truth.torque)))
    return force_err, torque_err


@dataclass(frozen=True, eq=False)
class Frame:
    """
    Один кадр демонстрации.

    image - 224×224 в [0, 1] (может отсутствовать),
    features - заранее закодированный 40-вектор v (может отсутствовать).
    """
    timestamp: float
    w: ControlVariable
    image: Optional[np.ndarray] = None
    features: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise InvalidArgumentError("Метка времени кадра не число")
        if self.image is not None:
            image = np.asarray(self.image, dtype=float)
            if image.shape != (IMAGE_SIZE, IMAGE_SIZE):
                raise InvalidArgumentError(f"Изображение кадра должно быть {IMAGE_SIZE}×{IMAGE_SIZE}, получено {image.shape}")
            object.__setattr__(self, "image", image)
        if self.features is not None:
            object.__setattr__(self, "features", _finite_tuple(self.features, FEATURE_DIM, "Вектор признаков"))

    def node(self) -> LatentNode:
        if self.features is None:
            raise InvalidArgumentError("У кадра нет закодированных признаков")
        return LatentNode(v=self.features, w=self.w)

    def with_features(self, features: Sequence[float], keep_image: bool = False) -> "Frame":
        return replace(self, features=tuple(features), image=self.image if keep_image else None)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        if (self.image is None) != (other.image is None):
            return False
        if self.image is not None and not np.array_equal(self.image, other.image):
            return False
        return (self.timestamp == other.timestamp and self.w == other.w
                and self.features == other.features)

    __hash__ = None


class Gender(str, Enum):
    MALE = "male"
    FEMALE = "female"


class BmiClass(str, Enum):
    UNDERWEIGHT = "underweight"
    NORMAL = "normal"
    OVERWEIGHT = "overweight"


@dataclass(frozen=True)
class SubjectMeta:
    """Физические данные испытуемого"""
    id: int
    age: float
    gender: Gender
    height: float
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "gender", Gender(self.gender))
        if self.height <= 0 or self.weight <= 0 or self.age <= 0:
            raise SchemaError(f"Испытуемый {self.id}: рост, вес и возраст должны быть положительными")

    @property
    def bmi(self) -> float:
        return self.weight / (self.height ** 2)

    @property
    def bmi_class(self) -> BmiClass:
        if self.bmi < BMI_UNDERWEIGHT:
            return BmiClass.UNDERWEIGHT
        if self.bmi >= BMI_OVERWEIGHT:
            return BmiClass.OVERWEIGHT
        return BmiClass.NORMAL


@dataclass(frozen=True)
class Demonstration:
    """Последовательность кадров со строго возрастающими метками времени"""
    frames: Tuple[Frame, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 2:
            raise SchemaError(f"Демонстрация должна содержать не менее 2 кадров, получено {len(frames)}")
        for prev, cur in zip(frames, frames[1:]):
            if not cur.timestamp > prev.timestamp:
                raise SchemaError(
                    f"Метки времени должны строго возрастать: {prev.timestamp!r} -> {cur.timestamp!r}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[Frame]:
        return iter(self.frames)

    def __getitem__(self, index):
        return self.frames[index]


@dataclass(frozen=True)
class SubjectRecord:
    """Испытуемый и его демонстрации"""
    meta: SubjectMeta
    demos: Tuple[Demonstration, ...]

    def __post_init__(self):
        demos = tuple(self.demos)
        if not demos:
            raise SchemaError(f"У испытуемого {self.meta.id} нет демонстраций")
        object.__setattr__(self, "demos", demos)

    @property
    def n_frames(self) -> int:
        return sum(len(demo) for demo in self.demos)


@dataclass(frozen=True)
class Dataset:
    """Набор демонстраций, сгруппированных по испытуемым"""
    subjects: Tuple[SubjectRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        subjects = tuple(self.subjects)
        ids = [s.meta.id for s in subjects]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"Повторяющиеся идентификаторы испытуемых: {ids}")
        object.__setattr__(self, "subjects", subjects)

    @property
    def n_frames(self) -> int:
        return sum(s.n_frames for s in self.subjects)

    @property
    def subject_ids(self) -> List[int]:
        return [s.meta.id for s in self.subjects]

    def frames(self) -> Iterator[Frame]:
        for subject in self.subjects:
            for demo in subject.demos:
                yield from demo.frames

    def has_images(self) -> bool:
        return any(frame.image is not None for frame in self.frames())

    def has_features(self) -> bool:
        return self.n_frames > 0 and all(frame.features is not None for frame in self.frames())

    def nodes(self) -> List[LatentNode]:
        return [frame.node() for frame in self.frames()]

    def node_matrix(self, stride: int = 1) -> np.ndarray:
        """Узлы как матрица (N, 50); stride прореживает кадры каждой демонстрации"""
        rows = []
        for subject in self.subjects:
            for demo in subject.demos:
                for frame in demo.frames[::stride]:
                    rows.append(frame.node().flatten())
        if not rows:
            return np.empty((0, NODE_DIM))
        return np.vstack(rows)

    def thinned(self, stride: int) -> "Dataset":
        """Копия, где в каждой демонстрации оставлен каждый stride-й кадр"""
        if stride < 1:
            raise InvalidArgumentError(f"Шаг прореживания должен быть >= 1, получено {stride}")
        if stride == 1:
            return self
        subjects = []
        for subject in self.subjects:
            demos = []
            for demo in subject.demos:
                frames = demo.frames[::stride]
                # Демонстрации короче двух кадров после прореживания сохраняют последний кадр
                if len(frames) < 2:
                    frames = (demo.frames[0], demo.frames[-1])
                demos.append(Demonstration(frames))
            subjects.append(SubjectRecord(subject.meta, tuple(demos)))
        return Dataset(tuple(subjects))
