"""
Чтение и запись датасета в текстовом формате траекторий.

Каталог датасета:
    subject_<id>.traj   - один файл на испытуемого
    images/*.raw        - изображения 224×224, по байту на пиксель, построчно
"""

import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from shared.models.errors import ParseError, SchemaError, SkillError
from shared.models.trajectory import (
    CONTROL_DIM,
    FEATURE_DIM,
    IMAGE_SIZE,
    NODE_DIM,
    ControlVariable,
    Dataset,
    Demonstration,
    Frame,
    SubjectMeta,
    SubjectRecord,
)
from shared.utils.matrix_text import format_float

logger = logging.getLogger(__name__)

TRAJECTORY_MAGIC = "#SKILL-TRAJ v1"
IMAGES_DIR = "images"
BMI_TOLERANCE = 1e-3
FRAME_NUMERIC_FIELDS = 1 + CONTROL_DIM


def _image_name(subject_id: int, demo_index: int, frame_index: int) -> str:
    return f"s{subject_id:03d}_d{demo_index:02d}_f{frame_index:05d}.raw"


def _save_image(image: np.ndarray, path: Path) -> None:
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    pixels.tofile(path)


def _load_image(path: Path, source: str, line_no: int) -> np.ndarray:
    if not path.exists():
        raise SchemaError(f"{source}:{line_no}: файл изображения не найден: {path.name}")
    pixels = np.fromfile(path, dtype=np.uint8)
    if pixels.size != IMAGE_SIZE * IMAGE_SIZE:
        raise SchemaError(
            f"{source}:{line_no}: изображение {path.name} содержит {pixels.size} байт, "
            f"ожидалось {IMAGE_SIZE * IMAGE_SIZE}"
        )
    return pixels.reshape(IMAGE_SIZE, IMAGE_SIZE).astype(float) / 255.0


def save_dataset(ds: Dataset, path: Union[str, Path]) -> None:
    """
    Сохраняет датасет в каталог.

    Файлы траекторий и изображения, оставшиеся в каталоге от прежнего
    датасета, удаляются.

    Args:
        ds: датасет
        path: каталог назначения (создается при необходимости)
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    images_dir = root / IMAGES_DIR
    n_images = 0

    stale = list(root.glob("subject_*.traj")) + list(images_dir.glob("*.raw"))
    for old in stale:
        old.unlink()
    if stale:
        logger.warning(f"⚠️ Удалено {len(stale)} файлов прежнего датасета в {root}")

    for subject in ds.subjects:
        meta = subject.meta
        lines = [
            TRAJECTORY_MAGIC,
            ",".join([
                "subject", str(meta.id), format_float(meta.age), meta.gender.value,
                format_float(meta.height), format_float(meta.weight), format_float(meta.bmi),
            ]),
        ]
        for demo_index, demo in enumerate(subject.demos):
            lines.append(f"demo,{demo_index}")
            for frame_index, frame in enumerate(demo.frames):
                image_ref = ""
                if frame.image is not None:
                    image_ref = _image_name(meta.id, demo_index, frame_index)
                    images_dir.mkdir(exist_ok=True)
                    _save_image(frame.image, images_dir / image_ref)
                    n_images += 1
                features = ""
                if frame.features is not None:
                    features = ";".join(format_float(x) for x in frame.features)
                numbers = [frame.timestamp] + list(frame.w.flatten())
                lines.append(",".join(["frame"] + [format_float(x) for x in numbers] + [image_ref, features]))

        subject_path = root / f"subject_{meta.id:03d}.traj"
        subject_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    logger.info(f"✅ Датасет сохранен: {root} ({len(ds.subjects)} испытуемых, {ds.n_frames} кадров, {n_images} изображений)")


def _parse_floats(fields: List[str], source: str, line_no: int) -> List[float]:
    try:
        return [float(x) for x in fields]
    except ValueError:
        raise ParseError(f"нечисловое значение в записи: {fields}", source, line_no)


def _load_subject(path: Path, images_dir: Path) -> SubjectRecord:
    source = path.name
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != TRAJECTORY_MAGIC:
        raise ParseError(f"ожидался заголовок '{TRAJECTORY_MAGIC}'", source, 1)

    meta: Optional[SubjectMeta] = None
    demos: List[List[Frame]] = []

    for index, raw_line in enumerate(lines[1:], start=2):
        line = raw_line.strip()
        if not line:
            continue
        fields = line.split(",")
        kind = fields[0]

        if kind == "subject":
            if meta is not None:
                raise ParseError("повторная запись subject", source, index)
            if len(fields) != 7:
                raise ParseError(f"запись subject должна содержать 7 полей, получено {len(fields)}", source, index)
            try:
                subject_id = int(fields[1])
            except ValueError:
                raise ParseError(f"некорректный id испытуемого '{fields[1]}'", source, index)
            age, height, weight, bmi = _parse_floats([fields[2], fields[4], fields[5], fields[6]], source, index)
            try:
                meta = SubjectMeta(id=subject_id, age=age, gender=fields[3], height=height, weight=weight)
            except ValueError as e:
                raise SchemaError(f"{source}:{index}: {e}")
            if abs(meta.bmi - bmi) > BMI_TOLERANCE:
                raise SchemaError(
                    f"{source}:{index}: ИМТ {bmi} не совпадает с вычисленным {meta.bmi:.6f}"
                )

        elif kind == "demo":
            if meta is None:
                raise ParseError("запись demo до записи subject", source, index)
            demos.append([])

        elif kind == "frame":
            if not demos:
                raise ParseError("запись frame до записи demo", source, index)
            if not FRAME_NUMERIC_FIELDS + 1 <= len(fields) <= FRAME_NUMERIC_FIELDS + 3:
                raise ParseError(f"запись frame содержит {len(fields)} полей", source, index)
            numbers = _parse_floats(fields[1:1 + FRAME_NUMERIC_FIELDS], source, index)
            extra = fields[1 + FRAME_NUMERIC_FIELDS:] + ["", ""]
            image_ref, features_text = extra[0].strip(), extra[1].strip()

            features = None
            if features_text:
                features = _parse_floats(features_text.split(";"), source, index)
                if len(features) + CONTROL_DIM != NODE_DIM:
                    raise SchemaError(
                        f"{source}:{index}: размерность узла {len(features) + CONTROL_DIM}, ожидалось {NODE_DIM}"
                    )
            image = _load_image(images_dir / image_ref, source, index) if image_ref else None

            try:
                frame = Frame(
                    timestamp=numbers[0],
                    w=ControlVariable.unflatten(numbers[1:]),
                    image=image,
                    features=features,
                )
            except SkillError as e:
                raise SchemaError(f"{source}:{index}: {e}")
            demos[-1].append(frame)

        else:
            raise ParseError(f"неизвестный тип записи '{kind}'", source, index)

    if meta is None:
        raise ParseError("нет записи subject", source)
    try:
        return SubjectRecord(meta=meta, demos=tuple(Demonstration(tuple(frames)) for frames in demos))
    except SchemaError as e:
        raise SchemaError(f"{source}: {e}")


def load_dataset(path: Union[str, Path]) -> Dataset:
    """
    Загружает датасет из каталога и проверяет инварианты.

    Raises:
        ParseError: синтаксическая ошибка (с файлом и строкой)
        SchemaError: нарушение инвариантов
    """
    root = Path(path)
    if not root.is_dir():
        raise ParseError("каталог датасета не найден", str(root))

    subject_files = sorted(root.glob("subject_*.traj"))
    if not subject_files:
        raise ParseError("в каталоге нет файлов subject_*.traj", str(root))

    subjects = [_load_subject(p, root / IMAGES_DIR) for p in subject_files]
    subjects.sort(key=lambda s: s.meta.id)
    ds = Dataset(tuple(subjects))
    logger.info(f"Загружен датасет {root}: {len(subjects)} испытуемых, {ds.n_frames} кадров")
    return ds
