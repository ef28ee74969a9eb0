#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Конфигурация сервиса обучения навыков.

Файл конфигурации - плоский формат key=value (как .env). Ключи в верхнем
регистре соответствуют полям Settings: GMM_COMPONENTS=16, MC_SAMPLES=50,100.
"""

import logging
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from shared.models.errors import ConfigError

from learner.gmm import EmConfig
from learner.image_pipeline import EncoderConfig
from learner.mc_baseline import MlpConfig
from learner.synth_data import SPLIT_TASKS, SynthConfig

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def _parse_list(raw: str, cast, what: str) -> list:
    items = [item.strip() for item in raw.split(",") if item.strip()]
    if not items:
        raise ValueError(f"{what}: пустой список")
    try:
        return [cast(item) for item in items]
    except ValueError:
        raise ValueError(f"{what}: не удалось разобрать '{raw}'")


class Settings(BaseSettings):
    """Все гиперпараметры сервиса"""

    model_config = SettingsConfigDict(case_sensitive=False, extra="forbid")

    # Общие
    seed: int = Field(0, ge=0)
    log_level: str = "INFO"
    log_file: Optional[str] = None

    # Синтетический корпус
    subjects: int = Field(24, ge=1)
    demos_per_subject: int = Field(5, ge=1)
    demo_duration_s: float = Field(40.0, ge=5.0, le=120.0)
    record_rate_hz: float = Field(10.0, gt=0.0)

    # Кодировщик изображений
    encoder_latent_dim: int = Field(64, ge=1)
    encoder_learning_rate: float = Field(0.2, gt=0.0)
    encoder_epochs: int = Field(200, ge=0)
    encoder_train_images: int = Field(64, ge=1)
    mask_seed: int = 0

    # GMM / EM
    gmm_components: int = Field(16, ge=1)
    em_max_iter: int = Field(300, ge=1)
    em_tol: float = Field(1e-6, gt=0.0)
    em_reg: float = Field(1e-6, ge=0.0)

    # Оценка устойчивости и адаптация
    sigma_levels: str = "1,2,3"
    bounds_mode: Literal["analytic", "empirical"] = "analytic"
    adapt: bool = True

    # Базовый метод Монте-Карло
    mlp_hidden: str = "128,64"
    mlp_learning_rate: float = Field(0.1, gt=0.0)
    mlp_epochs: int = Field(300, ge=0)
    mlp_train_max_nodes: int = Field(8000, ge=10)
    mc_samples: str = "50,100,200,500,1000,2000,5000,10000"
    mc_quaternion_sampling: Literal["box", "sphere"] = "box"

    # Эксперимент
    tasks: str = ",".join(SPLIT_TASKS)
    train_stride: int = Field(4, ge=1)
    eval_stride: int = Field(10, ge=1)
    keep_frame_records: bool = False

    @field_validator("log_file")
    @classmethod
    def _empty_log_file(cls, value: Optional[str]) -> Optional[str]:
        return value or None

    @field_validator("log_level")
    @classmethod
    def _check_log_level(cls, value: str) -> str:
        if value.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"неизвестный уровень логирования '{value}'")
        return value.upper()

    @field_validator("sigma_levels")
    @classmethod
    def _check_sigma_levels(cls, value: str) -> str:
        levels = _parse_list(value, float, "SIGMA_LEVELS")
        if any(m <= 0 for m in levels):
            raise ValueError("SIGMA_LEVELS: уровни должны быть положительными")
        return value

    @field_validator("mc_samples")
    @classmethod
    def _check_mc_samples(cls, value: str) -> str:
        counts = _parse_list(value, int, "MC_SAMPLES")
        if any(n < 1 for n in counts):
            raise ValueError("MC_SAMPLES: число выборок должно быть >= 1")
        return value

    @field_validator("mlp_hidden")
    @classmethod
    def _check_mlp_hidden(cls, value: str) -> str:
        sizes = _parse_list(value, int, "MLP_HIDDEN")
        if any(n < 1 for n in sizes):
            raise ValueError("MLP_HIDDEN: размеры слоев должны быть >= 1")
        return value

    @field_validator("tasks")
    @classmethod
    def _check_tasks(cls, value: str) -> str:
        unknown = [t for t in _parse_list(value, str, "TASKS") if t not in SPLIT_TASKS]
        if unknown:
            raise ValueError(f"TASKS: неизвестные задачи {unknown}, допустимы {list(SPLIT_TASKS)}")
        return value

    @classmethod
    def from_file(cls, path: Optional[Union[str, Path]] = None, **overrides) -> "Settings":
        """
        Загрузка конфигурации из файла key=value.

        Args:
            path: путь к файлу (None - только значения по умолчанию и окружение)
            overrides: явные значения, имеющие приоритет над файлом

        Raises:
            ConfigError: файл не найден, неизвестный ключ или некорректное значение
        """
        if path is not None and not Path(path).is_file():
            raise ConfigError(f"Файл конфигурации не найден: {path}")

        try:
            settings = cls(_env_file=str(path) if path is not None else None, **overrides)
        except ValidationError as e:
            problems = []
            for error in e.errors():
                field_path = ".".join(str(part) for part in error["loc"]).upper()
                problems.append(f"{field_path}: {error['msg']}")
            raise ConfigError("Некорректная конфигурация: " + "; ".join(problems))

        if path is not None:
            logger.info(f"✅ Конфигурация загружена: {path}")
        return settings

    # Разобранные списки

    def sigma_level_values(self) -> List[float]:
        return _parse_list(self.sigma_levels, float, "SIGMA_LEVELS")

    def mc_sample_counts(self) -> List[int]:
        return _parse_list(self.mc_samples, int, "MC_SAMPLES")

    def mlp_hidden_sizes(self) -> List[int]:
        return _parse_list(self.mlp_hidden, int, "MLP_HIDDEN")

    def task_list(self) -> List[str]:
        return _parse_list(self.tasks, str, "TASKS")

    # Конфигурации подсистем

    def em_config(self) -> EmConfig:
        return EmConfig(max_iter=self.em_max_iter, tol=self.em_tol, reg=self.em_reg, seed=self.seed)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            latent_dim=self.encoder_latent_dim,
            learning_rate=self.encoder_learning_rate,
            epochs=self.encoder_epochs,
            seed=self.seed,
            mask_seed=self.mask_seed,
        )

    def mlp_config(self) -> MlpConfig:
        return MlpConfig(
            hidden=tuple(self.mlp_hidden_sizes()),
            learning_rate=self.mlp_learning_rate,
            epochs=self.mlp_epochs,
            max_nodes=self.mlp_train_max_nodes,
            seed=self.seed,
            quaternion_sampling=self.mc_quaternion_sampling,
        )

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            subjects=self.subjects,
            demos_per_subject=self.demos_per_subject,
            duration_s=self.demo_duration_s,
            rate_hz=self.record_rate_hz,
            seed=self.seed,
        )


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Настройка корневого логгера"""
    log_level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(level=log_level, format=LOG_FORMAT)
    logging.getLogger().setLevel(log_level)

    # Добавляем файловый логгер, если указан файл
    if log_file:
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(log_level)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(file_handler)
