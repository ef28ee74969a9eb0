"""
Версионированный текстовый формат для параметров моделей.

Структура документа:

    #<MAGIC> v<version>
    key value
    ...
    matrix <name> <rows> <cols>
    <rows строк по cols чисел через пробел>

Числа пишутся с 17 значащими цифрами, чтение восстанавливает их побитово.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Union

import numpy as np

from shared.models.errors import ParseError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "{:.16e}"


def format_float(value: float) -> str:
    return FLOAT_FORMAT.format(float(value))


@dataclass
class MatrixDocument:
    """Разобранный документ: скалярные поля и именованные матрицы"""
    magic: str
    version: int
    scalars: Dict[str, str] = field(default_factory=dict)
    matrices: Dict[str, np.ndarray] = field(default_factory=dict)

    def scalar(self, key: str, source: str = None) -> str:
        if key not in self.scalars:
            raise ParseError(f"отсутствует поле '{key}'", source)
        return self.scalars[key]

    def matrix(self, key: str, source: str = None) -> np.ndarray:
        if key not in self.matrices:
            raise ParseError(f"отсутствует матрица '{key}'", source)
        return self.matrices[key]


def write_document(path: Union[str, Path], doc: MatrixDocument) -> None:
    """Записывает документ на диск"""
    lines = [f"#{doc.magic} v{doc.version}"]
    for key, value in doc.scalars.items():
        lines.append(f"{key} {value}")
    for name, matrix in doc.matrices.items():
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        rows, cols = matrix.shape
        lines.append(f"matrix {name} {rows} {cols}")
        for row in matrix:
            lines.append(" ".join(format_float(x) for x in row))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug(f"Записан документ {doc.magic} v{doc.version}: {path}")


def read_document(path: Union[str, Path], magic: str, versions: Iterable[int] = (1,)) -> MatrixDocument:
    """
    Читает документ и проверяет заголовок.

    Args:
        path: путь к файлу
        magic: ожидаемая сигнатура
        versions: поддерживаемые версии

    Returns:
        MatrixDocument
    """
    source = str(path)
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ParseError(f"не удалось прочитать файл: {e}", source)

    if not lines:
        raise ParseError("пустой файл", source, 1)

    header = lines[0].strip()
    expected_prefix = f"#{magic} v"
    if not header.startswith(expected_prefix):
        raise ParseError(f"ожидался заголовок '{expected_prefix}N', получено '{header}'", source, 1)
    try:
        version = int(header[len(expected_prefix):])
    except ValueError:
        raise ParseError(f"некорректная версия в заголовке '{header}'", source, 1)
    if version not in tuple(versions):
        raise ParseError(f"неподдерживаемая версия {version}", source, 1)

    doc = MatrixDocument(magic=magic, version=version)
    index = 1
    while index < len(lines):
        line_no = index + 1
        line = lines[index].strip()
        index += 1
        if not line:
            continue

        parts = line.split()
        if parts[0] != "matrix":
            if len(parts) < 2:
                raise ParseError(f"ожидалось 'ключ значение', получено '{line}'", source, line_no)
            doc.scalars[parts[0]] = " ".join(parts[1:])
            continue

        if len(parts) != 4:
            raise ParseError(f"некорректный заголовок матрицы '{line}'", source, line_no)
        name = parts[1]
        try:
            rows, cols = int(parts[2]), int(parts[3])
        except ValueError:
            raise ParseError(f"некорректные размеры матрицы '{line}'", source, line_no)

        if index + rows > len(lines):
            raise ParseError(f"матрица '{name}' обрывается: ожидалось {rows} строк", source, line_no)
        data = np.empty((rows, cols))
        for r in range(rows):
            row_line = lines[index]
            index += 1
            try:
                values = [float(x) for x in row_line.split()]
            except ValueError:
                raise ParseError(f"нечисловое значение в матрице '{name}'", source, index)
            if len(values) != cols:
                raise ParseError(
                    f"матрица '{name}': ожидалось {cols} чисел в строке, получено {len(values)}", source, index
                )
            data[r] = values
        doc.matrices[name] = data

    return doc
