"""
Регрессия на смеси гауссиан: условное распределение w по признакам v.
"""

import logging
import weakref
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from shared.models.errors import InvalidArgumentError
from shared.models.trajectory import CONTROL_DIM, QUATERNION_DIM, ControlVariable, Quaternion, Wrench
from shared.utils.rotations import normalize_quaternion

from learner.gmm import LOG_2PI, GmmModel

logger = logging.getLogger(__name__)

# Ниже этого значения max_k log(π_k N_k(v)) запрос считается вне носителя модели
OUT_OF_SUPPORT_LOG_DENSITY = -700.0


@dataclass(frozen=True, eq=False)
class GmrExperts:
    """Условные гауссианы всех компонент, сложенные по оси K"""
    mean_v: np.ndarray          # (K, in)
    mean_w: np.ndarray          # (K, out)
    chol_inv_v: np.ndarray      # (K, in, in), L_vv⁻¹
    gain: np.ndarray            # (K, out, in), Σ_wv Σ_vv⁻¹
    cond_cov: np.ndarray        # (K, out, out)
    log_norm_v: np.ndarray      # (K,), log π_k − ½(log det Σ_vv + in·log 2π)


@dataclass(frozen=True, eq=False)
class GmrPrediction:
    mean: np.ndarray
    covariance: np.ndarray
    responsibilities: np.ndarray
    component_means: np.ndarray
    out_of_support: bool = False
    max_log_density: float = 0.0


_experts_cache: "weakref.WeakKeyDictionary[GmmModel, GmrExperts]" = weakref.WeakKeyDictionary()


def build_experts(model: GmmModel) -> GmrExperts:
    """Разбиение μ_k, Σ_k на блоки v/w и предвычисление условных параметров (кэшируется на модель)"""
    cached = _experts_cache.get(model)
    if cached is not None:
        return cached

    n_in = model.input_dim
    eye = np.eye(n_in)
    mean_v, mean_w, chol_inv, gains, cond_covs, log_norms = [], [], [], [], [], []
    for log_weight, component in zip(model.log_weights, model.components):
        cov = component.covariance
        cov_vv, cov_vw, cov_ww = cov[:n_in, :n_in], cov[:n_in, n_in:], cov[n_in:, n_in:]
        chol_vv = linalg.cholesky(cov_vv, lower=True)
        gain = linalg.cho_solve((chol_vv, True), cov_vw).T
        cond_cov = cov_ww - gain @ cov_vw
        cond_cov = 0.5 * (cond_cov + cond_cov.T)
        logdet_vv = 2.0 * float(np.sum(np.log(np.diag(chol_vv))))

        mean_v.append(component.mean[:n_in])
        mean_w.append(component.mean[n_in:])
        chol_inv.append(linalg.solve_triangular(chol_vv, eye, lower=True))
        gains.append(gain)
        cond_covs.append(cond_cov)
        log_norms.append(log_weight - 0.5 * (logdet_vv + n_in * LOG_2PI))

    experts = GmrExperts(
        mean_v=np.array(mean_v),
        mean_w=np.array(mean_w),
        chol_inv_v=np.array(chol_inv),
        gain=np.array(gains),
        cond_cov=np.array(cond_covs),
        log_norm_v=np.array(log_norms),
    )
    _experts_cache[model] = experts
    return experts


def input_log_densities(model: GmmModel, v: np.ndarray) -> np.ndarray:
    """log π_k + log N(v | μ_kᵛ, Σ_kᵛᵛ) для всех k"""
    experts = build_experts(model)
    z = np.einsum("kij,kj->ki", experts.chol_inv_v, v - experts.mean_v)
    return experts.log_norm_v - 0.5 * np.sum(z * z, axis=1)


def predict(model: GmmModel, v) -> GmrPrediction:
    """
    Условное ожидание w при данном v.

    h_k(v) нормируются через log-sum-exp; ковариация агрегируется как
    Σ_k h_k² Σ̂_kʷʷ.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (model.input_dim,):
        raise InvalidArgumentError(f"Ожидался вектор признаков размерности {model.input_dim}, получено {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("Вектор признаков содержит нечисловые значения")

    experts = build_experts(model)
    log_dens = input_log_densities(model, v)
    max_log = float(np.max(log_dens))
    responsibilities = np.exp(log_dens - logsumexp(log_dens))

    out_of_support = max_log < OUT_OF_SUPPORT_LOG_DENSITY
    if out_of_support:
        logger.warning(f"⚠️ Запрос вне носителя модели: max log-плотность {max_log:.1f}")

    component_means = experts.mean_w + np.einsum("koi,ki->ko", experts.gain, v - experts.mean_v)
    mean = responsibilities @ component_means
    covariance = np.einsum("k,kij->ij", responsibilities ** 2, experts.cond_cov)
    return GmrPrediction(
        mean=mean,
        covariance=covariance,
        responsibilities=responsibilities,
        component_means=component_means,
        out_of_support=out_of_support,
        max_log_density=max_log,
    )


def vector_to_control(w: np.ndarray) -> Tuple[ControlVariable, float]:
    """
    10-вектор -> ControlVariable с нормировкой кватерниона.

    Returns:
        (управляющая переменная, норма исходной кватернионной части)

    Raises:
        DegenerateOrientationError: норма кватернионной части < 1e-6
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (CONTROL_DIM,):
        raise InvalidArgumentError(f"Ожидался вектор размерности {CONTROL_DIM}, получено {w.shape}")
    unit, norm = normalize_quaternion(w[:QUATERNION_DIM])
    control = ControlVariable(
        p=Quaternion.from_array(unit),
        f=Wrench(force=tuple(w[4:7]), torque=tuple(w[7:10])),
    )
    return control, norm


def prediction_to_control(pred: GmrPrediction) -> Tuple[ControlVariable, float]:
    return vector_to_control(pred.mean)
