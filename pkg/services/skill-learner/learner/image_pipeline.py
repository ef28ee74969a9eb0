"""
Предобработка УЗИ-изображений и сжатие в 40-вектор признаков.

Изображение 224×224 делится на сетку 8×8 патчей 28×28, случайный селектор
оставляет 40 из 64 патчей. Маскированный линейный автоэнкодер (аффинный
кодировщик + аффинный декодер) обучается восстанавливать скрытые патчи по
видимым; признак патча - среднее 784 восстановленных значений.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from shared.models.errors import InvalidArgumentError, ParseError
from shared.models.trajectory import FEATURE_DIM, IMAGE_SIZE, Dataset, Demonstration, SubjectRecord
from shared.utils.matrix_text import MatrixDocument, read_document, write_document

logger = logging.getLogger(__name__)

PATCH_SIZE = 28
GRID_SIZE = IMAGE_SIZE // PATCH_SIZE
N_PATCHES = GRID_SIZE * GRID_SIZE
N_KEPT = FEATURE_DIM
PATCH_PIXELS = PATCH_SIZE * PATCH_SIZE

ENCODER_MAGIC = "SKILL-ENCODER"

# Размер пакета при кодировании
ENCODE_CHUNK = 64


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """64 патча 28×28 в построчном порядке сетки"""
    patches: np.ndarray

    def flat(self) -> np.ndarray:
        return self.patches.reshape(N_PATCHES, PATCH_PIXELS)


@dataclass(frozen=True)
class MaskSelection:
    """Отсортированные индексы 40 видимых патчей"""
    kept: Tuple[int, ...]
    seed: int

    @property
    def masked(self) -> Tuple[int, ...]:
        kept = set(self.kept)
        return tuple(i for i in range(N_PATCHES) if i not in kept)


@dataclass(frozen=True)
class EncoderConfig:
    latent_dim: int = 64
    learning_rate: float = 0.2
    epochs: int = 200
    seed: int = 0
    mask_seed: int = 0


@dataclass(eq=False)
class EncoderModel:
    """Параметры маскированного линейного автоэнкодера и замороженная маска"""
    enc_weight: np.ndarray
    enc_bias: np.ndarray
    dec_weight: np.ndarray
    dec_bias: np.ndarray
    mask: MaskSelection
    learning_rate: float
    epochs: int
    seed: int
    loss_history: List[float] = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.enc_weight.shape[1]

    def params(self) -> Dict[str, np.ndarray]:
        return {
            "enc_weight": self.enc_weight,
            "enc_bias": self.enc_bias,
            "dec_weight": self.dec_weight,
            "dec_bias": self.dec_bias,
        }


def preprocess(raw: np.ndarray) -> np.ndarray:
    """
    Обрезка по центру до квадрата, билинейное масштабирование до 224×224,
    ограничение значений диапазоном [0, 1].

    Args:
        raw: изображение H×W в оттенках серого

    Returns:
        np.ndarray 224×224
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.size == 0:
        raise InvalidArgumentError(f"Ожидалось непустое двумерное изображение, получено {raw.shape}")

    if raw.shape == (IMAGE_SIZE, IMAGE_SIZE):
        return np.clip(raw, 0.0, 1.0)

    height, width = raw.shape
    side = min(height, width)
    top = (height - side) // 2
    left = (width - side) // 2
    crop = raw[top:top + side, left:left + side]

    # grid_mode=True: выравнивание по центрам пикселей, сохраняет среднее при целом шаге
    scaled = ndimage.zoom(crop, IMAGE_SIZE / side, order=1, mode="nearest", grid_mode=True)
    if scaled.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise InvalidArgumentError(f"Масштабирование дало форму {scaled.shape}")
    return np.clip(scaled, 0.0, 1.0)


def patchify(img: np.ndarray) -> PatchGrid:
    """Разбиение 224×224 на 64 патча 28×28; патч (r, c) имеет индекс r·8 + c"""
    img = np.asarray(img, dtype=float)
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise InvalidArgumentError(f"Ожидалось изображение {IMAGE_SIZE}×{IMAGE_SIZE}, получено {img.shape}")
    patches = (
        img.reshape(GRID_SIZE, PATCH_SIZE, GRID_SIZE, PATCH_SIZE)
        .swapaxes(1, 2)
        .reshape(N_PATCHES, PATCH_SIZE, PATCH_SIZE)
        .copy()
    )
    return PatchGrid(patches=patches)


def unpatchify(grid: PatchGrid) -> np.ndarray:
    patches = np.asarray(grid.patches, dtype=float)
    if patches.shape != (N_PATCHES, PATCH_SIZE, PATCH_SIZE):
        raise InvalidArgumentError(f"Ожидалась сетка {N_PATCHES}×{PATCH_SIZE}×{PATCH_SIZE}, получено {patches.shape}")
    return (
        patches.reshape(GRID_SIZE, GRID_SIZE, PATCH_SIZE, PATCH_SIZE)
        .swapaxes(1, 2)
        .reshape(IMAGE_SIZE, IMAGE_SIZE)
    )


def _patch_batch(images: np.ndarray) -> np.ndarray:
    """(n, 224, 224) -> (n, 64, 784)"""
    n = images.shape[0]
    return (
        images.reshape(n, GRID_SIZE, PATCH_SIZE, GRID_SIZE, PATCH_SIZE)
        .swapaxes(2, 3)
        .reshape(n, N_PATCHES, PATCH_PIXELS)
    )


def select_mask(seed: int) -> MaskSelection:
    """Случайный выбор 40 видимых патчей из 64 (воспроизводим по seed)"""
    noise = np.random.default_rng(seed).random(N_PATCHES)
    kept = np.sort(np.argsort(noise)[:N_KEPT])
    return MaskSelection(kept=tuple(int(i) for i in kept), seed=seed)


def init_encoder(cfg: EncoderConfig) -> EncoderModel:
    if cfg.latent_dim < 1:
        raise InvalidArgumentError(f"Ширина латентного слоя должна быть >= 1, получено {cfg.latent_dim}")
    rng = np.random.default_rng(cfg.seed)
    h = cfg.latent_dim
    return EncoderModel(
        enc_weight=rng.normal(0.0, 1.0 / np.sqrt(PATCH_PIXELS), size=(PATCH_PIXELS, h)),
        enc_bias=np.zeros(h),
        dec_weight=rng.normal(0.0, 1.0 / np.sqrt(h), size=(h, PATCH_PIXELS)),
        dec_bias=np.zeros(PATCH_PIXELS),
        mask=select_mask(cfg.mask_seed),
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        seed=cfg.seed,
    )


def masked_reconstruction_loss(params: Dict[str, np.ndarray], kept: np.ndarray,
                               masked: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Ошибка восстановления скрытых патчей и ее аналитический градиент.

    Контекст c = среднее по видимым патчам кодов x·We + be, восстановление
    r = c·Wd + bd сравнивается с каждым скрытым патчем (MSE по всем пикселям).

    Args:
        params: enc_weight (P, h), enc_bias (h), dec_weight (h, P), dec_bias (P)
        kept: видимые патчи (n, n_kept, P)
        masked: скрытые патчи (n, n_masked, P)

    Returns:
        (loss, словарь градиентов с теми же ключами)
    """
    we, be = params["enc_weight"], params["enc_bias"]
    wd, bd = params["dec_weight"], params["dec_bias"]
    n, n_masked, n_pixels = masked.shape

    # Среднее кодов = код среднего патча, кодировщик аффинный
    kept_mean = kept.mean(axis=1)
    context = kept_mean @ we + be
    recon = context @ wd + bd
    residual = recon[:, None, :] - masked

    scale = n * n_masked * n_pixels
    loss = float(np.sum(residual ** 2) / scale)

    grad_recon = 2.0 * residual.sum(axis=1) / scale
    grad_context = grad_recon @ wd.T
    grads = {
        "dec_weight": context.T @ grad_recon,
        "dec_bias": grad_recon.sum(axis=0),
        "enc_weight": kept_mean.T @ grad_context,
        "enc_bias": grad_context.sum(axis=0),
    }
    return loss, grads


def _collect_images(source: Union[Dataset, Sequence[np.ndarray]]) -> np.ndarray:
    if isinstance(source, Dataset):
        images = [frame.image for frame in source.frames() if frame.image is not None]
    else:
        images = [np.asarray(img, dtype=float) for img in source]
    if not images:
        raise InvalidArgumentError("Для обучения кодировщика нет ни одного изображения")
    for img in images:
        if img.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise InvalidArgumentError(f"Изображение должно быть {IMAGE_SIZE}×{IMAGE_SIZE}, получено {img.shape}")
    return np.stack(images)


def train_encoder(source: Union[Dataset, Sequence[np.ndarray]], cfg: EncoderConfig) -> EncoderModel:
    """
    Полнопакетный градиентный спуск по ошибке восстановления скрытых патчей.

    Args:
        source: датасет с изображениями или список изображений 224×224
        cfg: гиперпараметры

    Returns:
        EncoderModel; loss_history[0] - ошибка до обучения, далее по эпохам
    """
    images = _collect_images(source)
    model = init_encoder(cfg)

    patches = _patch_batch(images)
    kept = patches[:, list(model.mask.kept), :]
    masked = patches[:, list(model.mask.masked), :]

    logger.info(f"🔄 Обучение кодировщика: {len(images)} изображений, h={model.latent_dim}, {cfg.epochs} эпох")
    params = model.params()
    history = []
    for epoch in range(cfg.epochs):
        loss, grads = masked_reconstruction_loss(params, kept, masked)
        history.append(loss)
        for name in params:
            params[name] = params[name] - cfg.learning_rate * grads[name]
        if epoch % 50 == 0:
            logger.debug(f"Эпоха {epoch}: loss={loss:.6e}")

    final_loss, _ = masked_reconstruction_loss(params, kept, masked)
    history.append(final_loss)

    model.enc_weight = params["enc_weight"]
    model.enc_bias = params["enc_bias"]
    model.dec_weight = params["dec_weight"]
    model.dec_bias = params["dec_bias"]
    model.loss_history = history

    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise InvalidArgumentError("Обучение кодировщика разошлось: нечисловые параметры")

    logger.info(f"✅ Кодировщик обучен: loss {history[0]:.6e} -> {history[-1]:.6e}")
    return model


def encode_features(img: np.ndarray, enc: EncoderModel, mask: MaskSelection = None) -> np.ndarray:
    """
    Кодирование изображения 224×224 в 40-вектор.

    Каждый видимый патч кодируется и декодируется; суммирование по каналу
    (в виде среднего по 784 значениям) дает один признак на патч.

    Обучение восстанавливает скрытые патчи по среднему коду видимых. Кодировщик
    и декодер аффинные, поэтому среднее 40 признаков равно среднему значению
    обученного восстановления, а отдельные признаки раскладывают его по патчам.
    """
    mask = mask or enc.mask
    if len(mask.kept) != N_KEPT:
        raise InvalidArgumentError(f"Маска должна оставлять {N_KEPT} патчей, получено {len(mask.kept)}")
    if enc.enc_weight.shape[0] != PATCH_PIXELS or enc.dec_weight.shape[1] != PATCH_PIXELS:
        raise InvalidArgumentError("Размерности кодировщика не соответствуют патчам 28×28")

    kept = patchify(img).flat()[list(mask.kept)]
    codes = kept @ enc.enc_weight + enc.enc_bias
    reconstructed = codes @ enc.dec_weight + enc.dec_bias
    return reconstructed.mean(axis=1)


def encode_batch(images: np.ndarray, enc: EncoderModel) -> np.ndarray:
    """Пакетное кодирование (n, 224, 224) -> (n, 40)"""
    images = np.asarray(images, dtype=float)
    if images.ndim != 3 or images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise InvalidArgumentError(f"Ожидался пакет (n, {IMAGE_SIZE}, {IMAGE_SIZE}), получено {images.shape}")
    kept_idx = list(enc.mask.kept)
    outputs = []
    for start in range(0, len(images), ENCODE_CHUNK):
        kept = _patch_batch(images[start:start + ENCODE_CHUNK])[:, kept_idx, :]
        codes = kept @ enc.enc_weight + enc.enc_bias
        reconstructed = codes @ enc.dec_weight + enc.dec_bias
        outputs.append(reconstructed.mean(axis=2))
    if not outputs:
        return np.empty((0, N_KEPT))
    return np.concatenate(outputs)


def encode_demo(demo: Demonstration, enc: EncoderModel, keep_images: bool = False) -> Demonstration:
    """Заполняет признаки кадров демонстрации; кадры без изображения должны иметь признаки"""
    indices = [i for i, frame in enumerate(demo.frames) if frame.image is not None]
    features = {}
    if indices:
        encoded = encode_batch(np.stack([demo.frames[i].image for i in indices]), enc)
        features = dict(zip(indices, encoded))

    frames = []
    for i, frame in enumerate(demo.frames):
        if i in features:
            frames.append(frame.with_features(features[i], keep_image=keep_images))
        elif frame.features is not None:
            frames.append(frame)
        else:
            raise InvalidArgumentError(f"Кадр t={frame.timestamp} не имеет ни изображения, ни признаков")
    return Demonstration(tuple(frames))


def encode_dataset(ds: Dataset, enc: EncoderModel, keep_images: bool = False) -> Dataset:
    subjects = [
        SubjectRecord(subject.meta, tuple(encode_demo(demo, enc, keep_images) for demo in subject.demos))
        for subject in ds.subjects
    ]
    return Dataset(tuple(subjects))


def save_encoder(model: EncoderModel, path: Union[str, Path]) -> None:
    doc = MatrixDocument(
        magic=ENCODER_MAGIC,
        version=1,
        scalars={
            "patch_pixels": str(PATCH_PIXELS),
            "latent_dim": str(model.latent_dim),
            "mask_seed": str(model.mask.seed),
            "kept": " ".join(str(i) for i in model.mask.kept),
            "learning_rate": repr(model.learning_rate),
            "epochs": str(model.epochs),
            "seed": str(model.seed),
        },
        matrices={
            "enc_weight": model.enc_weight,
            "enc_bias": model.enc_bias[None, :],
            "dec_weight": model.dec_weight,
            "dec_bias": model.dec_bias[None, :],
        },
    )
    if model.loss_history:
        doc.matrices["loss_history"] = np.asarray(model.loss_history)[None, :]
    write_document(path, doc)
    logger.info(f"Кодировщик сохранен: {path}")


def load_encoder(path: Union[str, Path]) -> EncoderModel:
    source = str(path)
    doc = read_document(path, ENCODER_MAGIC)
    try:
        h = int(doc.scalar("latent_dim", source))
        kept = tuple(int(i) for i in doc.scalar("kept", source).split())
        model = EncoderModel(
            enc_weight=doc.matrix("enc_weight", source),
            enc_bias=doc.matrix("enc_bias", source).ravel(),
            dec_weight=doc.matrix("dec_weight", source),
            dec_bias=doc.matrix("dec_bias", source).ravel(),
            mask=MaskSelection(kept=kept, seed=int(doc.scalar("mask_seed", source))),
            learning_rate=float(doc.scalar("learning_rate", source)),
            epochs=int(doc.scalar("epochs", source)),
            seed=int(doc.scalar("seed", source)),
            loss_history=list(doc.matrices["loss_history"].ravel()) if "loss_history" in doc.matrices else [],
        )
    except ValueError as e:
        raise ParseError(f"некорректное поле кодировщика: {e}", source)

    expected = {
        "enc_weight": (PATCH_PIXELS, h),
        "enc_bias": (h,),
        "dec_weight": (h, PATCH_PIXELS),
        "dec_bias": (PATCH_PIXELS,),
    }
    for name, shape in expected.items():
        if model.params()[name].shape != shape:
            raise ParseError(f"матрица '{name}' имеет форму {model.params()[name].shape}, ожидалось {shape}", source)
    if len(set(kept)) != N_KEPT or not all(0 <= i < N_PATCHES for i in kept):
        raise ParseError(f"маска должна содержать {N_KEPT} различных индексов из [0, {N_PATCHES})", source)
    return model
