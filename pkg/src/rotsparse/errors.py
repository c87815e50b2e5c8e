"""Exception types shared across the package."""


class FormatError(Exception):
    """A file does not conform to one of the supported formats (PGM, RSCDICT, ...)."""


class ConsistencyError(RuntimeError):
    """An internal numerical invariant was violated (e.g. large imaginary residue)."""


class UnusedAtomError(Exception):
    """Raised by the atom update when no patch uses the requested atom."""


class TrainingError(RuntimeError):
    """Classifier training could not proceed (e.g. a class with no usable patches)."""
