"""
Адаптация неустойчивых предсказаний: w заменяется выходным средним
ближайшей по Махаланобису компоненты. Признаки v не меняются.
"""

import logging
from typing import NamedTuple

import numpy as np

from shared.models.errors import InvalidArgumentError
from shared.models.trajectory import ControlVariable, LatentNode

from learner.gmm import GmmModel
from learner.gmr import GmrPrediction, predict, prediction_to_control, vector_to_control
from learner.stability import LikelihoodBounds, StabilityVerdict, classify

logger = logging.getLogger(__name__)


class AdaptedPrediction(NamedTuple):
    control: ControlVariable
    verdict: StabilityVerdict
    prediction: GmrPrediction
    adapted: bool


def adapt(model: GmmModel, node: LatentNode, verdict: StabilityVerdict) -> ControlVariable:
    """
    Устойчивый узел возвращается без изменений; для неустойчивого берется
    μ_{k*}ʷ компоненты k* = verdict.best_component (кватернион нормируется).
    """
    if len(verdict.mahalanobis) != model.n_components:
        raise InvalidArgumentError(
            f"Вердикт построен для {len(verdict.mahalanobis)} компонент, в модели {model.n_components}"
        )
    if verdict.stable:
        return node.w

    target = model.components[verdict.best_component].mean[model.input_dim:]
    control, _ = vector_to_control(target)
    return control


def predict_adapted(model: GmmModel, bounds: LikelihoodBounds, v,
                    adapt_unstable: bool = True) -> AdaptedPrediction:
    """
    predict -> classify -> adapt.

    Returns:
        AdaptedPrediction: итоговая управляющая переменная и вердикт до адаптации
    """
    prediction = predict(model, v)
    control, _ = prediction_to_control(prediction)
    node = LatentNode(v=tuple(np.asarray(v, dtype=float)), w=control)
    verdict = classify(model, bounds, node)

    if verdict.stable or not adapt_unstable:
        return AdaptedPrediction(control, verdict, prediction, adapted=False)

    return AdaptedPrediction(adapt(model, node, verdict), verdict, prediction, adapted=True)
