"""
Кватернионы: нормализация, произведение, slerp, геодезический угол.

Порядок компонент везде [w, x, y, z].
"""

import math
from typing import Tuple

import numpy as np

from shared.models.errors import DegenerateOrientationError, InvalidArgumentError

# Ниже этой нормы направление кватерниона не определено
MIN_QUATERNION_NORM = 1e-6


def normalize_quaternion(q: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Нормализует кватернион.

    Args:
        q: вектор из 4 чисел [w, x, y, z]

    Returns:
        (единичный кватернион, исходная норма)
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise InvalidArgumentError(f"Ожидался кватернион из 4 компонент, получено {q.shape}")
    if not np.all(np.isfinite(q)):
        raise InvalidArgumentError("Кватернион содержит нечисловые значения")

    norm = float(np.linalg.norm(q))
    if norm < MIN_QUATERNION_NORM:
        raise DegenerateOrientationError(f"Норма кватерниона слишком мала: {norm:.3e}")

    # Уже единичный кватернион не трогаем, чтобы flatten/unflatten был точным
    if abs(norm - 1.0) <= 1e-12:
        return q.copy(), norm
    return q / norm, norm


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Произведение Гамильтона a ⊗ b"""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_axis_angle(axis: np.ndarray, angle_deg: float) -> np.ndarray:
    """Кватернион поворота на angle_deg градусов вокруг оси axis"""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = math.radians(angle_deg) / 2.0
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def slerp(q1: np.ndarray, q2: np.ndarray, t: float) -> np.ndarray:
    """
    Сферическая линейная интерполяция между единичными кватернионами.

    Args:
        q1: начальный кватернион
        q2: конечный кватернион
        t: параметр в [0, 1]
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    dot = float(np.dot(q1, q2))

    # Кратчайший путь (двойное покрытие)
    if dot < 0.0:
        q2 = -q2
        dot = -dot

    if dot > 0.9995:
        result = q1 + t * (q2 - q1)
        return result / np.linalg.norm(result)

    theta = math.acos(dot)
    sin_theta = math.sin(theta)
    w1 = math.sin((1.0 - t) * theta) / sin_theta
    w2 = math.sin(t * theta) / sin_theta
    return w1 * q1 + w2 * q2


def quat_angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    """
    Геодезический угол между ориентациями в градусах.

    2·arccos(min(1, |a·b|)), инвариантен к смене знака любого аргумента.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidArgumentError("Кватернион содержит нечисловые значения")

    dot = min(1.0, abs(float(np.dot(a, b))))
    return math.degrees(2.0 * math.acos(dot))


def tilt_from_vertical_deg(q: np.ndarray) -> float:
    """Угол отклонения оси зонда (z) от вертикали"""
    w, x, y, z = q
    # z-компонента повернутой оси z
    cos_tilt = 1.0 - 2.0 * (x * x + y * y)
    return math.degrees(math.acos(max(-1.0, min(1.0, cos_tilt))))