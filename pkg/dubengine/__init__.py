"""
DubEngine - потоковый дубляж видео по аудио на синтетическом латентном мире
"""

__version__ = "1.0.0"
