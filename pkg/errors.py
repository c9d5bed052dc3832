"""
Exceptions partagées par la bibliothèque, la CLI et le serveur HTTP.

Chaque classe porte son code de sortie CLI et son statut HTTP, pour que
`cli.py` et `main.py` convertissent les erreurs de la même façon.
"""


class SparseRegError(Exception):
    """Base error of the package."""
    exit_code = 1
    http_status = 500


class InvalidArgumentError(SparseRegError, ValueError):
    """A precondition of an operation is violated."""
    exit_code = 2
    http_status = 400


class ConfigError(SparseRegError):
    """Invalid configuration file, key or CLI value."""
    exit_code = 2
    http_status = 400


class DataError(SparseRegError):
    """Input data cannot be read or is inconsistent."""
    exit_code = 3
    http_status = 422


class PgmParseError(DataError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class IdxFormatError(DataError):
    pass


class InfiniteStabilizerError(InvalidArgumentError):
    """Isotropic mother function under a group containing rotations."""


class AtomEscapesDomainError(InvalidArgumentError):
    pass


class EmptyGridError(InvalidArgumentError):
    pass


class GridTooLargeError(InvalidArgumentError):
    def __init__(self, points: int, budget: int):
        super().__init__(f"grid has {points} points, budget is {budget}; coarsen the sweep")
        self.points = points
        self.budget = budget
