"""Exception types shared across the package."""


class DataError(ValueError):
    """Raised for malformed input data, bad paths, or violated data contracts.

    The CLI maps this to exit code 2; genuine internal invariant violations
    surface as ordinary exceptions and map to exit code 3.
    """
