"""
errors.py
=========
Jerarquía de excepciones de SHIELD. Cada excepción lleva el código de salida que
usa la CLI: 2 error de configuración, 3 fallo de etapa, 4 fallo del proveedor LLM.
"""


class ShieldError(Exception):
    exit_code = 3


# ------------------------------------------------
# Configuración y proveedor
# ------------------------------------------------
class ConfigError(ShieldError):
    exit_code = 2


class ProviderError(ShieldError):
    exit_code = 4


class EmptyResponse(ProviderError):
    pass


# ------------------------------------------------
# Ingesta
# ------------------------------------------------
class IoError(ShieldError):
    pass


class SchemaError(ShieldError):
    pass


class RejectRatioExceeded(ShieldError):
    def __init__(self, path, rejected: int, total: int, max_ratio: float):
        self.path = path
        self.rejected = rejected
        self.total = total
        self.max_ratio = max_ratio
        super().__init__(
            f"{path}: {rejected}/{total} líneas rechazadas supera el máximo permitido "
            f"({max_ratio:.2%})"
        )


class InvalidLogLabel(ShieldError):
    pass


# ------------------------------------------------
# MAE y detección
# ------------------------------------------------
class VocabularyMissing(ShieldError):
    pass


class EmptyTrainingSet(ShieldError):
    pass


class NonFiniteLoss(ShieldError):
    pass


class CheckpointError(ShieldError):
    pass


class InsufficientData(ShieldError):
    pass


# ------------------------------------------------
# Evidencia, investigación y evaluación
# ------------------------------------------------
class NoSeedMatch(ShieldError):
    pass


class BudgetUnsatisfiable(ShieldError):
    pass


class ParseError(ShieldError):
    def __init__(self, message: str, raw_response: str):
        super().__init__(message)
        self.raw_response = raw_response


class PopulationTooSmall(ShieldError):
    pass


class NoAttackEntities(ShieldError):
    pass


class StageError(ShieldError):
    """Error de una etapa del pipeline con su contexto (etapa y artefacto)."""

    def __init__(self, stage: str, artifact, cause: Exception):
        self.stage = stage
        self.artifact = artifact
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
        super().__init__(f"[{stage}] {cause} (artefacto: {artifact})")
