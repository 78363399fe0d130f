"""Exception hierarchy shared across the package.

Input problems (schema, validation, data) and numerical failures
(rank deficiency, divergence, degenerate tuning) are kept distinct so
the CLI can map them to exit codes 2 and 3 respectively.
"""


class ConfselError(Exception):
    """Base class for all package errors."""


class InputError(ConfselError):
    """Base class for problems with user-supplied inputs (CLI exit 2)."""


class SchemaError(InputError):
    """A required column or field is missing."""


class ValidationError(InputError):
    """Inputs are present but violate a contract (e.g. non-binary treatment)."""


class DataError(InputError):
    """A cell-level data problem; message names the row and column."""


class DegenerateColumnError(InputError):
    """A covariate column has zero variance and cannot be standardized."""


class NumericalError(ConfselError):
    """Base class for numerical failures (CLI exit 3)."""


class RankDeficiencyError(NumericalError):
    """Normal equations are singular and no ridge was requested."""


class DivergenceError(NumericalError):
    """Iterative solver diverged (e.g. complete separation in logistic fits)."""


class DegenerateDofError(NumericalError):
    """Effective degrees of freedom reached the sample size; lambda too small."""


class SelectionError(NumericalError):
    """No usable lambda on the tuning grid."""


class StudyError(NumericalError):
    """Too many replicate failures in a simulation study."""
