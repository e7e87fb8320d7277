"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid user-supplied configuration (grid sizes, tolerances, ...)."""


class FormatError(ValueError):
    """Malformed input file (raster headers, manifests, bundles)."""


class NumericalError(RuntimeError):
    """A solve failed beyond the admissible nullspace / tolerance."""


class ModelError(ValueError):
    """A coefficient model produced inadmissible values (e.g. k <= 0)."""
