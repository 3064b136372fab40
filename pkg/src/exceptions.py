"""
Excepciones del proyecto
========================
Jerarquía de errores que la CLI traduce a códigos de salida.
"""


class EIVitError(Exception):
    """Error base del proyecto"""


class ShapeError(EIVitError, ValueError):
    """Formas incompatibles entre tensores o configuraciones"""


class NumericError(EIVitError, ArithmeticError):
    """Valores no finitos, pérdida NaN o gradcheck fuera de tolerancia"""

    def __init__(self, message: str, step: int = None):
        super().__init__(message)
        self.step = step


class ConfigError(EIVitError, ValueError):
    """Configuración inválida"""


class GraphError(EIVitError, RuntimeError):
    """Uso inválido del grafo de autodiferenciación"""


class DegenerateHistogramError(EIVitError, ValueError):
    """Histograma sin varianza (todos los valores iguales)"""

    def __init__(self, message: str = "degenerate histogram"):
        super().__init__(message)


class CheckpointError(EIVitError, ValueError):
    """Archivo de checkpoint corrupto o de versión desconocida"""
