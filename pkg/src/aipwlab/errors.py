"""Exception types shared across the package."""


class AipwLabError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(AipwLabError, ValueError):
    """A parameter lies outside its documented domain."""


class InvalidInputError(AipwLabError, ValueError):
    """Input data has the wrong shape, type or contents."""


class NotPositiveDefiniteError(AipwLabError, ValueError):
    """A covariance matrix failed its Cholesky factorization."""


class SingularDesignError(AipwLabError, ValueError):
    """The regression design matrix is rank deficient.

    ``columns`` lists the design columns found to be linearly dependent on
    earlier ones (0-based, intercept excluded).
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class FoldDegeneracyError(AipwLabError, ValueError):
    """A cross-fitting fold lacks treated or control units."""
