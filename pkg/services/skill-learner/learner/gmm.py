"""
Смесь гауссиан с полными ковариациями над 50-мерными узлами.

Обучение EM (инициализация k-means++), плотность через log-sum-exp,
расстояние Махаланобиса через треугольное решение с множителем Холецкого.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from shared.models.errors import InvalidArgumentError, ParseError
from shared.models.trajectory import CONTROL_DIM, FEATURE_DIM, NODE_DIM, LatentNode
from shared.utils.matrix_text import MatrixDocument, format_float, read_document, write_document
from shared.utils.rotations import tilt_from_vertical_deg

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
GMM_MAGIC = "SKILL-GMM"

# Допуск немонотонности логарифма правдоподобия EM (относительный)
EM_MONOTONE_SLACK = 1e-9
WEIGHT_SUM_TOLERANCE = 1e-12
SYMMETRY_TOLERANCE = 1e-10

NodesLike = Union[Sequence[LatentNode], np.ndarray]


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 300
    tol: float = 1e-6
    reg: float = 1e-6
    seed: int = 0


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    """Компонента N(μ, Σ) с закэшированными множителем Холецкого и log det Σ"""
    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray
    logdet: float

    @classmethod
    def from_moments(cls, mean: np.ndarray, covariance: np.ndarray) -> "GaussianComponent":
        mean = np.asarray(mean, dtype=float)
        covariance = np.asarray(covariance, dtype=float)
        dim = mean.shape[0] if mean.ndim == 1 else -1
        if dim < 1 or covariance.shape != (dim, dim):
            raise InvalidArgumentError(f"Несогласованные формы: μ {mean.shape}, Σ {covariance.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(covariance))):
            raise InvalidArgumentError("Параметры компоненты содержат нечисловые значения")
        if np.max(np.abs(covariance - covariance.T)) > SYMMETRY_TOLERANCE * max(1.0, np.max(np.abs(covariance))):
            raise InvalidArgumentError("Ковариация несимметрична")
        covariance = 0.5 * (covariance + covariance.T)
        try:
            chol = linalg.cholesky(covariance, lower=True)
        except linalg.LinAlgError:
            raise InvalidArgumentError("Ковариация не положительно определена (увеличьте EM_REG)")
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return cls(mean=mean, covariance=covariance, chol=chol, logdet=logdet)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def peak_log_density(self) -> float:
        return _gaussian_log_density(0.0, self.logdet, self.dim)

    def squared_mahalanobis(self, points: np.ndarray) -> np.ndarray:
        """(N, D) -> (N,)"""
        diff = (points - self.mean).T
        z = linalg.solve_triangular(self.chol, diff, lower=True, check_finite=False)
        return np.sum(z * z, axis=0)


def _gaussian_log_density(maha2, logdet: float, dim: int):
    # Одно и то же выражение для плотности в точке и для пика (maha2 = 0)
    return -0.5 * (maha2 + logdet + dim * LOG_2PI)


@dataclass(frozen=True, eq=False)
class GmmModel:
    """
    K взвешенных гауссиан над узлами [v | w].

    input_dim первых координат - признаки изображения, остальные output_dim -
    управляющая переменная.
    """
    weights: np.ndarray
    components: Tuple[GaussianComponent, ...]
    input_dim: int = FEATURE_DIM
    output_dim: int = CONTROL_DIM
    log_likelihood_history: Tuple[float, ...] = ()
    converged: bool = False

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        components = tuple(self.components)
        if weights.ndim != 1 or len(weights) != len(components) or not components:
            raise InvalidArgumentError(f"Число весов ({weights.shape}) не совпадает с числом компонент ({len(components)})")
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise InvalidArgumentError("Веса компонент должны быть положительными")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise InvalidArgumentError(f"Сумма весов {weights.sum()!r} отличается от 1")
        dims = {c.dim for c in components}
        if dims != {self.input_dim + self.output_dim}:
            raise InvalidArgumentError(
                f"Размерности компонент {sorted(dims)} не равны {self.input_dim} + {self.output_dim}"
            )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "log_likelihood_history", tuple(self.log_likelihood_history))

    @classmethod
    def from_parameters(cls, weights: Sequence[float], means: Sequence[np.ndarray],
                        covariances: Sequence[np.ndarray], input_dim: int = FEATURE_DIM,
                        output_dim: int = CONTROL_DIM) -> "GmmModel":
        """Сборка модели из явных параметров; веса нормируются"""
        weights = np.asarray(weights, dtype=float)
        if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise InvalidArgumentError("Веса компонент должны быть положительными")
        components = tuple(GaussianComponent.from_moments(m, c) for m, c in zip(means, covariances))
        return cls(weights=weights / weights.sum(), components=components,
                   input_dim=input_dim, output_dim=output_dim)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.input_dim + self.output_dim

    @cached_property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    @cached_property
    def means(self) -> np.ndarray:
        return np.vstack([c.mean for c in self.components])

    @cached_property
    def logdets(self) -> np.ndarray:
        return np.array([c.logdet for c in self.components])

    def _points(self, points) -> Tuple[np.ndarray, bool]:
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        points = np.atleast_2d(points)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise InvalidArgumentError(f"Ожидалась размерность {self.dim}, получено {points.shape}")
        return points, single

    def squared_mahalanobis_all(self, points) -> np.ndarray:
        """Квадраты расстояний Махаланобиса до всех компонент: (N, K) или (K,)"""
        points, single = self._points(points)
        result = np.column_stack([c.squared_mahalanobis(points) for c in self.components])
        return result[0] if single else result

    def mahalanobis_all(self, points) -> np.ndarray:
        return np.sqrt(self.squared_mahalanobis_all(points))

    def component_log_densities(self, points) -> np.ndarray:
        """log N_k(d): (N, K) или (K,)"""
        return _gaussian_log_density(self.squared_mahalanobis_all(points), self.logdets, self.dim)

    def weighted_log_densities(self, points) -> np.ndarray:
        return self.component_log_densities(points) + self.log_weights

    def log_density(self, points):
        return logsumexp(self.weighted_log_densities(points), axis=-1)

    def responsibilities(self, points) -> np.ndarray:
        weighted = self.weighted_log_densities(points)
        return np.exp(weighted - logsumexp(weighted, axis=-1, keepdims=True))

    def total_log_likelihood(self, points) -> float:
        return float(np.sum(self.log_density(np.atleast_2d(points))))


def _check_index(model: GmmModel, k: int) -> GaussianComponent:
    if not 0 <= k < model.n_components:
        raise InvalidArgumentError(f"Индекс компоненты {k} вне диапазона [0, {model.n_components})")
    return model.components[k]


def log_density(model: GmmModel, d) -> float:
    """log Σ_k π_k N(d | μ_k, Σ_k)"""
    d = np.asarray(d, dtype=float)
    if d.shape != (model.dim,):
        raise InvalidArgumentError(f"Ожидался вектор размерности {model.dim}, получено {d.shape}")
    return float(model.log_density(d))


def component_log_density(model: GmmModel, k: int, d) -> float:
    component = _check_index(model, k)
    points, _ = model._points(d)
    return float(_gaussian_log_density(component.squared_mahalanobis(points)[0], component.logdet, model.dim))


def mahalanobis(model: GmmModel, k: int, d) -> float:
    component = _check_index(model, k)
    points, _ = model._points(d)
    return float(np.sqrt(component.squared_mahalanobis(points)[0]))


def as_node_matrix(nodes: NodesLike) -> np.ndarray:
    if isinstance(nodes, np.ndarray):
        data = np.asarray(nodes, dtype=float)
    else:
        nodes = list(nodes)
        data = np.vstack([n.flatten() for n in nodes]) if nodes else np.empty((0, NODE_DIM))
    if data.ndim != 2:
        raise InvalidArgumentError(f"Ожидалась матрица узлов (N, D), получено {data.shape}")
    return data


def _m_step(data: np.ndarray, resp: np.ndarray, reg: float) -> Tuple[np.ndarray, List[GaussianComponent]]:
    n, dim = data.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = (resp.T @ data) / nk[:, None]

    components = []
    for k in range(len(nk)):
        diff = data - means[k]
        cov = (resp[:, k, None] * diff).T @ diff / nk[k]
        cov = 0.5 * (cov + cov.T) + reg * np.eye(dim)
        components.append(GaussianComponent.from_moments(means[k], cov))
    return weights / weights.sum(), components


def fit_em(nodes: NodesLike, n_components: int = 16, cfg: EmConfig = EmConfig(),
           input_dim: int = FEATURE_DIM) -> GmmModel:
    """
    Обучение смеси алгоритмом EM.

    Args:
        nodes: узлы (список LatentNode или матрица (N, D))
        n_components: число компонент K
        cfg: параметры EM
        input_dim: число входных координат (остальные - выход)

    Returns:
        GmmModel; log_likelihood_history[i] - полный логарифм правдоподобия
        после i-го M-шага (0 - начальное приближение)
    """
    data = as_node_matrix(nodes)
    n, dim = data.shape
    if n_components < 1:
        raise InvalidArgumentError(f"Число компонент должно быть >= 1, получено {n_components}")
    if n < n_components:
        raise InvalidArgumentError(f"Узлов ({n}) меньше, чем компонент ({n_components})")
    if not np.all(np.isfinite(data)):
        raise InvalidArgumentError("Узлы содержат нечисловые значения")
    if not 0 < input_dim < dim:
        raise InvalidArgumentError(f"Некорректное разбиение размерности {input_dim}/{dim - input_dim}")

    logger.info(f"🔄 EM: N={n}, D={dim}, K={n_components}, reg={cfg.reg}")

    centers, _ = kmeans_plusplus(data, n_components, random_state=cfg.seed)
    global_cov = np.cov(data, rowvar=False, bias=True).reshape(dim, dim) + cfg.reg * np.eye(dim)
    model = GmmModel(
        weights=np.full(n_components, 1.0 / n_components),
        components=tuple(GaussianComponent.from_moments(c, global_cov) for c in centers),
        input_dim=input_dim,
        output_dim=dim - input_dim,
    )

    weighted = model.weighted_log_densities(data)
    log_norm = logsumexp(weighted, axis=1)
    ll = float(log_norm.sum())
    history = [ll]
    converged = False

    for iteration in range(1, cfg.max_iter + 1):
        resp = np.exp(weighted - log_norm[:, None])
        weights, components = _m_step(data, resp, cfg.reg)
        candidate = GmmModel(weights=weights, components=tuple(components),
                             input_dim=input_dim, output_dim=dim - input_dim)

        new_weighted = candidate.weighted_log_densities(data)
        new_log_norm = logsumexp(new_weighted, axis=1)
        new_ll = float(new_log_norm.sum())
        if not np.isfinite(new_ll):
            raise InvalidArgumentError(f"EM: нечисловой логарифм правдоподобия на итерации {iteration}")

        if new_ll < ll - EM_MONOTONE_SLACK * max(1.0, abs(ll)):
            logger.warning(f"⚠️ EM: правдоподобие уменьшилось ({ll:.6f} -> {new_ll:.6f}), остановка на итерации {iteration}")
            break

        gain = new_ll - ll
        model, weighted, log_norm, ll = candidate, new_weighted, new_log_norm, new_ll
        history.append(ll)
        if iteration % 25 == 0:
            logger.debug(f"EM итерация {iteration}: ll={ll:.6f}")
        if gain < cfg.tol:
            converged = True
            break

    logger.info(f"✅ EM завершен: {len(history) - 1} итераций, ll={ll:.6f}, сходимость={converged}")
    return GmmModel(
        weights=model.weights,
        components=model.components,
        input_dim=input_dim,
        output_dim=dim - input_dim,
        log_likelihood_history=tuple(history),
        converged=converged,
    )


@dataclass(frozen=True)
class ClusterSummary:
    """Сводка по одной компоненте на обучающих узлах"""
    index: int
    weight: float
    n_assigned: int
    mean_tilt_deg: float
    mean_normal_force: float
    mean_mahalanobis: float


def summarize_clusters(model: GmmModel, nodes: NodesLike) -> List[ClusterSummary]:
    """
    Числовая сводка кластеров: вес, число узлов с максимальной
    ответственностью, средний наклон зонда, средняя нормальная сила и
    средний разброс Махаланобиса назначенных узлов.
    """
    data = as_node_matrix(nodes)
    if model.dim != NODE_DIM or model.input_dim != FEATURE_DIM:
        raise InvalidArgumentError(f"Сводка кластеров определена только для узлов размерности {NODE_DIM}")
    if data.shape[1] != NODE_DIM:
        raise InvalidArgumentError(f"Ожидалась размерность {NODE_DIM}, получено {data.shape[1]}")

    labels = np.argmax(model.weighted_log_densities(data), axis=1) if len(data) else np.empty(0, dtype=int)
    maha = model.mahalanobis_all(data) if len(data) else np.empty((0, model.n_components))
    q_slice = slice(FEATURE_DIM, FEATURE_DIM + 4)
    fz_index = FEATURE_DIM + 4 + 2

    summaries = []
    for k in range(model.n_components):
        members = labels == k
        count = int(members.sum())
        if count:
            tilts = [tilt_from_vertical_deg(q / np.linalg.norm(q)) for q in data[members, q_slice]]
            mean_tilt = float(np.mean(tilts))
            mean_force = float(np.mean(data[members, fz_index]))
            mean_maha = float(np.mean(maha[members, k]))
        else:
            mean_tilt = mean_force = mean_maha = float("nan")
        summaries.append(ClusterSummary(k, float(model.weights[k]), count, mean_tilt, mean_force, mean_maha))
    return summaries


def format_cluster_summary(summaries: Sequence[ClusterSummary]) -> str:
    lines = ["component,weight,n_assigned,mean_tilt_deg,mean_normal_force_N,mean_mahalanobis"]
    for s in summaries:
        lines.append(",".join([
            str(s.index), f"{s.weight:.6f}", str(s.n_assigned),
            f"{s.mean_tilt_deg:.4f}", f"{s.mean_normal_force:.4f}", f"{s.mean_mahalanobis:.4f}",
        ]))
    return "\n".join(lines) + "\n"


def save_gmm(model: GmmModel, path: Union[str, Path]) -> None:
    """Сохранение: K, разбиение размерности, π, затем μ_k и нижний треугольник Σ_k"""
    tril = np.tril_indices(model.dim)
    doc = MatrixDocument(
        magic=GMM_MAGIC,
        version=1,
        scalars={
            "components": str(model.n_components),
            "input_dim": str(model.input_dim),
            "output_dim": str(model.output_dim),
            "converged": str(model.converged).lower(),
        },
        matrices={"weights": model.weights[None, :]},
    )
    if model.log_likelihood_history:
        doc.scalars["final_log_likelihood"] = format_float(model.log_likelihood_history[-1])
    for k, component in enumerate(model.components):
        doc.matrices[f"mean_{k}"] = component.mean[None, :]
        doc.matrices[f"cov_tril_{k}"] = component.covariance[tril][None, :]
    write_document(path, doc)
    logger.info(f"Модель GMM сохранена: {path} (K={model.n_components})")


def load_gmm(path: Union[str, Path]) -> GmmModel:
    source = str(path)
    doc = read_document(path, GMM_MAGIC)
    try:
        n_components = int(doc.scalar("components", source))
        input_dim = int(doc.scalar("input_dim", source))
        output_dim = int(doc.scalar("output_dim", source))
    except ValueError as e:
        raise ParseError(f"некорректное поле модели: {e}", source)

    dim = input_dim + output_dim
    tril = np.tril_indices(dim)
    weights = doc.matrix("weights", source).ravel()
    if len(weights) != n_components:
        raise ParseError(f"ожидалось {n_components} весов, получено {len(weights)}", source)

    components = []
    for k in range(n_components):
        mean = doc.matrix(f"mean_{k}", source).ravel()
        packed = doc.matrix(f"cov_tril_{k}", source).ravel()
        if mean.shape != (dim,) or packed.shape != (len(tril[0]),):
            raise ParseError(f"компонента {k}: несогласованные размеры", source)
        cov = np.zeros((dim, dim))
        cov[tril] = packed
        cov = cov + np.tril(cov, -1).T
        try:
            components.append(GaussianComponent.from_moments(mean, cov))
        except InvalidArgumentError as e:
            raise ParseError(f"компонента {k}: {e}", source)

    try:
        model = GmmModel(weights=weights, components=tuple(components),
                         input_dim=input_dim, output_dim=output_dim,
                         converged=doc.scalars.get("converged") == "true")
    except InvalidArgumentError as e:
        raise ParseError(str(e), source)
    logger.info(f"Загружена модель GMM: {path} (K={n_components})")
    return model
