"""
Базовый метод Монте-Карло: MLP оценивает узлы {v, w}, предсказание -
кандидат с максимальной оценкой среди N случайных w в границах обучающих данных.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, NamedTuple, Tuple, Union

import numpy as np
from scipy.special import expit

from shared.models.errors import InvalidArgumentError, ParseError
from shared.models.trajectory import CONTROL_DIM, FEATURE_DIM, NODE_DIM, QUATERNION_DIM, ControlVariable
from shared.utils.matrix_text import MatrixDocument, read_document, write_document

from learner.gmm import NodesLike, as_node_matrix
from learner.gmr import vector_to_control

logger = logging.getLogger(__name__)

MLP_MAGIC = "SKILL-MLP"
MIN_TRAIN_NODES = 10
IDENTITY_QUATERNION = np.array([1.0, 0.0, 0.0, 0.0])

QuaternionSampling = Literal["box", "sphere"]


@dataclass(frozen=True)
class MlpConfig:
    hidden: Tuple[int, ...] = (128, 64)
    learning_rate: float = 0.1
    epochs: int = 300
    max_nodes: int = 8000
    seed: int = 0
    quaternion_sampling: QuaternionSampling = "box"


@dataclass(eq=False)
class MlpModel:
    """Полносвязная сеть: сигмоида на скрытых слоях, линейный выход"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_mean: np.ndarray
    input_scale: np.ndarray
    learning_rate: float = 0.1
    epochs: int = 0
    seed: int = 0
    quaternion_sampling: QuaternionSampling = "box"
    loss_history: List[float] = field(default_factory=list)

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def standardize(self, inputs: np.ndarray) -> np.ndarray:
        return (inputs - self.input_mean) / self.input_scale


@dataclass(frozen=True, eq=False)
class SampleBounds:
    """Покомпонентные min/max управляющей переменной на обучающих данных"""
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.asarray(self.low, dtype=float)
        high = np.asarray(self.high, dtype=float)
        if low.shape != (CONTROL_DIM,) or high.shape != (CONTROL_DIM,):
            raise InvalidArgumentError(f"Границы должны иметь размерность {CONTROL_DIM}")
        if np.any(low > high):
            raise InvalidArgumentError("Нижняя граница больше верхней")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def degenerate(self) -> bool:
        return bool(np.all(self.low == self.high))


class McResult(NamedTuple):
    control: ControlVariable
    index: int
    scores: np.ndarray
    candidates: np.ndarray


def init_mlp(cfg: MlpConfig, input_dim: int = NODE_DIM) -> MlpModel:
    rng = np.random.default_rng(cfg.seed)
    sizes = [input_dim] + list(cfg.hidden) + [1]
    weights = [rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out)) for n_in, n_out in zip(sizes, sizes[1:])]
    biases = [np.zeros(n_out) for n_out in sizes[1:]]
    return MlpModel(
        weights=weights,
        biases=biases,
        input_mean=np.zeros(input_dim),
        input_scale=np.ones(input_dim),
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        seed=cfg.seed,
        quaternion_sampling=cfg.quaternion_sampling,
    )


def _forward(weights: List[np.ndarray], biases: List[np.ndarray], inputs: np.ndarray) -> List[np.ndarray]:
    activations = [inputs]
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = activations[-1] @ w + b
        activations.append(z if i == len(weights) - 1 else expit(z))
    return activations


def mlp_loss(weights: List[np.ndarray], biases: List[np.ndarray], inputs: np.ndarray,
             targets: np.ndarray) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """
    Среднеквадратичная ошибка оценки и ее градиент обратным распространением.

    Args:
        inputs: стандартизованные узлы (N, D)
        targets: целевые оценки (N,)

    Returns:
        (loss, градиенты весов, градиенты смещений)
    """
    activations = _forward(weights, biases, inputs)
    residual = activations[-1][:, 0] - targets
    n = len(targets)
    loss = float(np.mean(residual ** 2))

    delta = (2.0 / n) * residual[:, None]
    grad_w: List[np.ndarray] = [None] * len(weights)
    grad_b: List[np.ndarray] = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            a = activations[i]
            delta = (delta @ weights[i].T) * a * (1.0 - a)
    return loss, grad_w, grad_b


def score(mlp: MlpModel, nodes) -> np.ndarray:
    """Оценки узлов (N, D) -> (N,); для одного узла - массив из одного числа"""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    if nodes.shape[1] != mlp.layer_sizes[0]:
        raise InvalidArgumentError(f"Ожидалась размерность {mlp.layer_sizes[0]}, получено {nodes.shape[1]}")
    return _forward(mlp.weights, mlp.biases, mlp.standardize(nodes))[-1][:, 0]


def sample_candidates(bounds: SampleBounds, n: int, rng: np.random.Generator,
                      mode: QuaternionSampling = "box") -> np.ndarray:
    """
    n случайных w в границах (n, 10).

    box: кватернион - 4 равномерных числа в границах, затем нормировка;
    sphere: равномерно на S³ в полусфере центра границ.
    """
    if n < 1:
        raise InvalidArgumentError(f"Число кандидатов должно быть >= 1, получено {n}")
    candidates = rng.uniform(bounds.low, bounds.high, size=(n, CONTROL_DIM))

    if mode == "sphere":
        quats = rng.normal(size=(n, QUATERNION_DIM))
        center = 0.5 * (bounds.low[:QUATERNION_DIM] + bounds.high[:QUATERNION_DIM])
        quats[quats @ center < 0] *= -1.0
    elif mode == "box":
        quats = candidates[:, :QUATERNION_DIM]
    else:
        raise InvalidArgumentError(f"Неизвестный режим выборки кватернионов '{mode}'")

    norms = np.linalg.norm(quats, axis=1)
    degenerate = norms < 1e-6
    quats = np.where(degenerate[:, None], IDENTITY_QUATERNION, quats / np.where(degenerate, 1.0, norms)[:, None])
    candidates[:, :QUATERNION_DIM] = quats
    return candidates


def sample_bounds(nodes: np.ndarray) -> SampleBounds:
    controls = nodes[:, FEATURE_DIM:]
    return SampleBounds(low=controls.min(axis=0), high=controls.max(axis=0))


def train_mlp(nodes: NodesLike, cfg: MlpConfig = MlpConfig()) -> Tuple[MlpModel, SampleBounds]:
    """
    Обучение оценщика: демонстрационные узлы - 1, те же v со случайным w - 0.

    Returns:
        (модель, границы выборки кандидатов)
    """
    data = as_node_matrix(nodes)
    if data.shape[1] != NODE_DIM:
        raise InvalidArgumentError(f"Ожидались узлы размерности {NODE_DIM}, получено {data.shape[1]}")
    if len(data) < MIN_TRAIN_NODES:
        raise InvalidArgumentError(f"Для обучения нужно не менее {MIN_TRAIN_NODES} узлов, получено {len(data)}")
    if not np.all(np.isfinite(data)):
        raise InvalidArgumentError("Узлы содержат нечисловые значения")

    bounds = sample_bounds(data)
    if bounds.degenerate:
        raise InvalidArgumentError("Границы выборки вырождены: w одинаково во всех узлах")

    rng = np.random.default_rng(cfg.seed)
    if len(data) > cfg.max_nodes:
        keep = np.sort(rng.choice(len(data), size=cfg.max_nodes, replace=False))
        data = data[keep]

    negatives = data.copy()
    negatives[:, FEATURE_DIM:] = sample_candidates(bounds, len(data), rng, cfg.quaternion_sampling)
    inputs = np.vstack([data, negatives])
    targets = np.concatenate([np.ones(len(data)), np.zeros(len(negatives))])

    model = init_mlp(cfg, NODE_DIM)
    scale = inputs.std(axis=0)
    model.input_mean = inputs.mean(axis=0)
    model.input_scale = np.where(scale > 0, scale, 1.0)
    standardized = model.standardize(inputs)

    logger.info(f"🔄 Обучение MLP {model.layer_sizes}: {len(data)} положительных узлов, {cfg.epochs} эпох")
    history = []
    for epoch in range(cfg.epochs):
        loss, grad_w, grad_b = mlp_loss(model.weights, model.biases, standardized, targets)
        history.append(loss)
        model.weights = [w - cfg.learning_rate * g for w, g in zip(model.weights, grad_w)]
        model.biases = [b - cfg.learning_rate * g for b, g in zip(model.biases, grad_b)]
        if epoch % 50 == 0:
            logger.debug(f"Эпоха {epoch}: loss={loss:.6f}")

    final_loss, _, _ = mlp_loss(model.weights, model.biases, standardized, targets)
    history.append(final_loss)
    model.loss_history = history

    if not all(np.all(np.isfinite(w)) for w in model.weights):
        raise InvalidArgumentError("Обучение MLP разошлось: нечисловые параметры")
    logger.info(f"✅ MLP обучен: loss {history[0]:.6f} -> {history[-1]:.6f}")
    return model, bounds


def best_candidate(mlp: MlpModel, v: np.ndarray, candidates: np.ndarray) -> Tuple[int, np.ndarray]:
    """Индекс кандидата с максимальной оценкой (при равенстве - первый) и все оценки"""
    nodes = np.hstack([np.broadcast_to(v, (len(candidates), len(v))), candidates])
    scores = score(mlp, nodes)
    return int(np.argmax(scores)), scores


def mc_search(mlp: MlpModel, bounds: SampleBounds, v, n_samples: int, seed: int) -> McResult:
    v = np.asarray(v, dtype=float)
    if v.shape != (FEATURE_DIM,):
        raise InvalidArgumentError(f"Ожидался вектор признаков размерности {FEATURE_DIM}, получено {v.shape}")
    rng = np.random.default_rng(seed)
    candidates = sample_candidates(bounds, n_samples, rng, mlp.quaternion_sampling)
    index, scores = best_candidate(mlp, v, candidates)
    control, _ = vector_to_control(candidates[index])
    return McResult(control=control, index=index, scores=scores, candidates=candidates)


def mc_predict(mlp: MlpModel, bounds: SampleBounds, v, n_samples: int, seed: int) -> ControlVariable:
    """Лучший по оценке MLP из n_samples случайных кандидатов (детерминирован по seed)"""
    return mc_search(mlp, bounds, v, n_samples, seed).control


def save_mlp(model: MlpModel, bounds: SampleBounds, path: Union[str, Path]) -> None:
    doc = MatrixDocument(
        magic=MLP_MAGIC,
        version=1,
        scalars={
            "layers": " ".join(str(n) for n in model.layer_sizes),
            "learning_rate": repr(model.learning_rate),
            "epochs": str(model.epochs),
            "seed": str(model.seed),
            "quaternion_sampling": model.quaternion_sampling,
        },
        matrices={
            "input_mean": model.input_mean[None, :],
            "input_scale": model.input_scale[None, :],
            "bounds_low": bounds.low[None, :],
            "bounds_high": bounds.high[None, :],
        },
    )
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        doc.matrices[f"weight_{i}"] = w
        doc.matrices[f"bias_{i}"] = b[None, :]
    if model.loss_history:
        doc.matrices["loss_history"] = np.asarray(model.loss_history)[None, :]
    write_document(path, doc)
    logger.info(f"Модель MLP сохранена: {path}")


def load_mlp(path: Union[str, Path]) -> Tuple[MlpModel, SampleBounds]:
    source = str(path)
    doc = read_document(path, MLP_MAGIC)
    try:
        sizes = [int(n) for n in doc.scalar("layers", source).split()]
        learning_rate = float(doc.scalar("learning_rate", source))
        epochs = int(doc.scalar("epochs", source))
        seed = int(doc.scalar("seed", source))
    except ValueError as e:
        raise ParseError(f"некорректное поле модели: {e}", source)
    sampling = doc.scalar("quaternion_sampling", source)
    if sampling not in ("box", "sphere"):
        raise ParseError(f"неизвестный режим выборки '{sampling}'", source)

    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        w = doc.matrix(f"weight_{i}", source)
        b = doc.matrix(f"bias_{i}", source).ravel()
        if w.shape != (n_in, n_out) or b.shape != (n_out,):
            raise ParseError(f"слой {i}: ожидалась форма ({n_in}, {n_out})", source)
        weights.append(w)
        biases.append(b)

    model = MlpModel(
        weights=weights,
        biases=biases,
        input_mean=doc.matrix("input_mean", source).ravel(),
        input_scale=doc.matrix("input_scale", source).ravel(),
        learning_rate=learning_rate,
        epochs=epochs,
        seed=seed,
        quaternion_sampling=sampling,
        loss_history=list(doc.matrices["loss_history"].ravel()) if "loss_history" in doc.matrices else [],
    )
    try:
        bounds = SampleBounds(doc.matrix("bounds_low", source).ravel(), doc.matrix("bounds_high", source).ravel())
    except InvalidArgumentError as e:
        raise ParseError(str(e), source)
    return model, bounds
