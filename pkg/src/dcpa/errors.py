"""Error hierarchy. Every raised error carries a stable code string that the
CLI prints and the HTTP layer maps into {code, message} bodies."""


class DcpaError(Exception):
    code = "E_INTERNAL"

    def __init__(self, message):
        super().__init__(message)
        self.message = message


class ParseError(DcpaError):
    code = "E_PARSE"


class SchemaError(DcpaError):
    code = "E_SCHEMA"


class ResolutionError(DcpaError):
    code = "E_RESOLUTION"


class ConvergenceError(DcpaError):
    code = "E_NOCONVERGE"


class IncompatibleFluxError(DcpaError):
    code = "E_INCOMPATIBLE"


class SplitError(DcpaError):
    code = "E_SPLIT"


class UnconvergedCaseError(DcpaError):
    code = "E_UNCONVERGED"


class FormatError(DcpaError):
    code = "E_FORMAT"


class HashMismatchError(DcpaError):
    code = "E_HASH"


class ShapeError(DcpaError):
    code = "E_SHAPE"


class NonScalarError(DcpaError):
    code = "E_NONSCALAR"


class DomainError(DcpaError):
    code = "E_DOMAIN"


class StageOrderError(DcpaError):
    code = "E_ORDER"


class VersionError(DcpaError):
    code = "E_VERSION"


class RangeError(DcpaError):
    code = "E_RANGE"


class BindError(DcpaError):
    code = "E_BIND"


class IoError(DcpaError):
    code = "E_IO"
