"""
Общие модели данных: доменные типы (trajectory), исключения (errors),
формат файлов траекторий (storage).

Подмодули импортируются явно, например ``from shared.models.trajectory import Dataset``.
"""
