"""
Исключения общего слоя: типы данных, форматы файлов, модели
"""

from typing import Optional


class SkillError(Exception):
    """Базовая ошибка для всех сервисов обучения навыков"""


class InvalidArgumentError(SkillError, ValueError):
    """Некорректный аргумент (форма, размерность, нечисловые значения)"""


class ParseError(SkillError):
    """Ошибка разбора файла с указанием файла и строки"""

    def __init__(self, message: str, source: Optional[str] = None, line: Optional[int] = None):
        self.source = source
        self.line = line
        location = ""
        if source is not None:
            location = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(f"{location}{message}")


class SchemaError(SkillError):
    """Данные разобраны, но нарушают инварианты схемы"""


class DegenerateOrientationError(SkillError):
    """Кватернион с почти нулевой нормой"""


class SplitError(SkillError):
    """Невозможно построить запрошенное разбиение train/test"""


class ConfigError(SkillError):
    """Ошибка конфигурации (файл, ключ, значение)"""
