"""
Оценка устойчивости предсказания.

Для каждой компоненты k и уровня m строится диапазон логарифма плотности
[a_k, b_k] на m-сигма области. Узел устойчив, если хотя бы для одной
компоненты его log N_k попадает в диапазон.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from shared.models.errors import InvalidArgumentError
from shared.models.trajectory import LatentNode

from learner.gmm import GmmModel, NodesLike, as_node_matrix

logger = logging.getLogger(__name__)

# Допуск на границе диапазона в лог-пространстве
BOUNDARY_SLACK = 1e-9

BOUNDS_MODES = ("analytic", "empirical")


@dataclass(frozen=True, eq=False)
class LikelihoodBounds:
    lower: np.ndarray
    upper: np.ndarray
    sigma: float
    n_components: int
    dim: int
    mode: str = "analytic"


@dataclass(frozen=True, eq=False)
class StabilityVerdict:
    stable: bool
    best_component: int
    log_likelihoods: np.ndarray
    mahalanobis: np.ndarray
    sigma: float


def likelihood_bounds(model: GmmModel, m: float, mode: str = "analytic",
                      nodes: Optional[NodesLike] = None) -> LikelihoodBounds:
    """
    Границы log N_k на m-сигма области каждой компоненты.

    analytic: b_k - пик плотности, a_k = b_k − m²/2 (плотность монотонна по
    расстоянию Махаланобиса).
    empirical: min/max по обучающим узлам внутри области; для пустой
    области используются аналитические границы.
    """
    if not np.isfinite(m) or m <= 0:
        raise InvalidArgumentError(f"Уровень сигма должен быть положительным, получено {m}")
    if mode not in BOUNDS_MODES:
        raise InvalidArgumentError(f"Неизвестный режим границ '{mode}', допустимы {BOUNDS_MODES}")

    upper = np.array([c.peak_log_density for c in model.components])
    lower = upper - 0.5 * m * m

    if mode == "empirical":
        if nodes is None:
            raise InvalidArgumentError("Для эмпирических границ нужны обучающие узлы")
        data = as_node_matrix(nodes)
        log_liks = np.atleast_2d(model.component_log_densities(data))
        maha = np.atleast_2d(model.mahalanobis_all(data))
        for k in range(model.n_components):
            inside = maha[:, k] <= m
            if not inside.any():
                logger.warning(f"⚠️ Компонента {k}: в {m}-сигма области нет узлов, берем аналитические границы")
                continue
            lower[k] = log_liks[inside, k].min()
            upper[k] = log_liks[inside, k].max()

    return LikelihoodBounds(
        lower=lower,
        upper=upper,
        sigma=float(m),
        n_components=model.n_components,
        dim=model.dim,
        mode=mode,
    )


def classify(model: GmmModel, bounds: LikelihoodBounds,
             node: Union[LatentNode, np.ndarray]) -> StabilityVerdict:
    """
    Устойчив ли узел d̂ = {v, ŵ}.

    best_component - ближайшая по Махаланобису компонента (при равенстве
    меньший индекс).
    """
    if bounds.n_components != model.n_components or bounds.dim != model.dim:
        raise InvalidArgumentError(
            f"Границы построены для K={bounds.n_components}, D={bounds.dim}, "
            f"модель K={model.n_components}, D={model.dim}"
        )
    d = node.flatten() if isinstance(node, LatentNode) else np.asarray(node, dtype=float)
    if d.shape != (model.dim,):
        raise InvalidArgumentError(f"Ожидался узел размерности {model.dim}, получено {d.shape}")

    maha2 = model.squared_mahalanobis_all(d)
    log_liks = model.component_log_densities(d)
    in_range = (log_liks >= bounds.lower - BOUNDARY_SLACK) & (log_liks <= bounds.upper + BOUNDARY_SLACK)
    maha = np.sqrt(maha2)

    return StabilityVerdict(
        stable=bool(in_range.any()),
        best_component=int(np.argmin(maha)),
        log_likelihoods=log_liks,
        mahalanobis=maha,
        sigma=bounds.sigma,
    )
