"""Exception hierarchy.

Every error carries a machine-readable ``code`` used by the CLI when it
reports failures.
"""

from __future__ import annotations


class ErgoError(Exception):
    """Base class for all library errors."""

    code = "error"


class DSLSyntaxError(ErgoError, SyntaxError):
    """Malformed map expression.

    Parameters
    ----------
    message : str
        Human readable description.
    position : int
        Zero-based character offset of the offending token.
    token : str
        Text of the offending token (empty at end of input).
    """

    code = "syntax_error"

    def __init__(self, message: str, position: int, token: str = ""):
        self.position = position
        self.token = token
        super().__init__(f"{message} at position {position} (token {token!r})")


class DimensionMismatch(ErgoError):
    code = "dimension_mismatch"


class UnboundedDerivative(ErgoError):
    code = "unbounded_derivative"


class NotATorusMap(ErgoError):
    """The lift does not descend to a continuous map of the torus."""

    code = "not_a_torus_map"


class PrecisionUnreachable(ErgoError):
    code = "precision_unreachable"


class EpsilonOutOfRange(ErgoError):
    code = "epsilon_out_of_range"


class UnsupportedKernel(ErgoError):
    code = "unsupported_kernel"


class MassMismatch(ErgoError):
    code = "mass_mismatch"


class PartitionMismatch(ErgoError):
    code = "partition_mismatch"


class MeshTooCoarse(ErgoError):
    code = "mesh_too_coarse"


class DegenerateScale(ErgoError):
    code = "degenerate_scale"


class NoConvergence(ErgoError):
    code = "no_convergence"

    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(message)


class ZeroMatrix(ErgoError):
    code = "zero_matrix"


class NotIrreducible(ErgoError):
    code = "not_irreducible"


class CertificateUnobtainable(ErgoError):
    code = "certificate_unobtainable"


class ResourceCap(ErgoError):
    code = "resource_cap"


class GammaTooLarge(ErgoError):
    code = "gamma_too_large"


class QuadratureFailure(ErgoError):
    code = "quadrature_failure"


class ContractionViolated(ErgoError):
    code = "contraction_violated"


class InsufficientSamples(ErgoError):
    code = "insufficient_samples"


class ConfigError(ErgoError):
    """Invalid run configuration.

    Parameters
    ----------
    message : str
        Description of the problem.
    field : str, optional
        Dotted name of the offending field.
    line : int, optional
        One-based line number in the config file.
    """

    code = "config_error"

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
