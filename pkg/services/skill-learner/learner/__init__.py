"""
Обучение навыков роботизированного УЗИ-сканирования: латентные узлы,
GMM/GMR, оценка устойчивости и адаптация, базовый метод Монте-Карло.
"""

__version__ = "1.0.0"
