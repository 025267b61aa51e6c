"""
Иерархия исключений DubEngine
Каждый класс несет код выхода, который использует CLI
"""


class DubEngineError(Exception):
    """Базовая ошибка DubEngine"""

    exit_code = 1


class ConfigError(DubEngineError):
    """Ошибка конфигурации или схемы"""

    exit_code = 2


class DataError(DubEngineError):
    """Ошибка входных данных"""

    exit_code = 3


class AlignmentError(DataError):
    """Длина не выровнена по шагу временного сжатия"""


class TooShortError(DataError):
    """Вход короче одного чанка"""


class LengthMismatchError(DataError):
    """Несовпадение длин аудио и видео"""


class AssemblyError(DataError):
    """Несовместимые входы при сборке условий"""


class InfeasibleReferenceError(DataError):
    """Нет допустимых кадров для выбранной стратегии референса"""


class ContainerError(DataError):
    """Поврежденный или нечитаемый контейнер"""


class NumericalError(DubEngineError):
    """NaN, расходимость и прочие численные сбои"""

    exit_code = 4


class DivergenceError(NumericalError):
    """Потеря превысила допустимый порог"""
