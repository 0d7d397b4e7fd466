"""
Exceptions - MF-PPO

Hiérarchie des erreurs levées par la bibliothèque. La CLI traduit ces
exceptions en codes de sortie (voir cli.app).
"""


class MfPpoError(Exception):
    """Erreur de base de la bibliothèque."""


class DegenerateConfigurationError(MfPpoError, ValueError):
    """Configuration jointe vide ou incohérente."""

    def __init__(self, detail: str = ""):
        message = "degenerate configuration"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class InstanceTooLargeError(MfPpoError, ValueError):
    """Instance au-delà des garde-fous d'énumération."""

    def __init__(self, detail: str = ""):
        message = "instance too large for enumeration"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class RewardBoundError(MfPpoError, ValueError):
    """Récompense hors de la borne déclarée r̄."""


class DimensionMismatchError(MfPpoError, ValueError):
    """Paramètres incompatibles avec la disposition des features."""


class SupportError(MfPpoError, ValueError):
    """q nulle là où p est strictement positive."""


class NonFiniteError(MfPpoError, ArithmeticError):
    """Logits ou pertes non finis."""


class ConfigError(MfPpoError, ValueError):
    """Fichier de configuration invalide."""


class SolverError(MfPpoError, ArithmeticError):
    """Solveur numérique dont la solution ne vérifie pas ses contraintes."""
