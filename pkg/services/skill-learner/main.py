#!/usr/bin/env python3
"""
Точка входа сервиса обучения навыков
"""

import sys
from pathlib import Path

# Добавляем пути к модулям
current_dir = Path(__file__).parent
services_dir = current_dir.parent
sys.path.insert(0, str(services_dir))
sys.path.insert(0, str(current_dir))

from learner.cli import main

if __name__ == "__main__":
    sys.exit(main())
