"""Exception hierarchy shared by the library and the command line.

Configuration and file problems map to exit code 2, numerical failures to
exit code 1.
"""

from typing import Optional


class FibernetError(Exception):
    exit_code = 1


class ConfigError(FibernetError, ValueError):
    exit_code = 2


class FormatError(FibernetError):
    exit_code = 2


class NumericalError(FibernetError, RuntimeError):
    exit_code = 1


class NetworkError(NumericalError):
    pass


class AssemblyError(NumericalError):
    pass


class SolverError(NumericalError):
    pass


class CorrectorError(SolverError):
    coarse_dof: Optional[int]

    def __init__(self, message: str, coarse_dof: Optional[int] = None) -> None:
        if coarse_dof is not None:
            message = "coarse dof {}: {}".format(coarse_dof, message)
        super().__init__(message)
        self.coarse_dof = coarse_dof


class StudyError(NumericalError):
    pass
