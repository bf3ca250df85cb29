"""Exception types shared across the package."""


class StyleditError(Exception):
    """Base class for package errors."""


class ConfigError(StyleditError):
    """Invalid or inconsistent configuration values."""


class CorpusLoadError(StyleditError):
    """A corpus file is missing or unreadable."""


class ContractError(StyleditError):
    """An operation was called outside its documented contract."""


class PreconditionError(StyleditError):
    """A pipeline stage was started without its required inputs."""


class DivergenceError(StyleditError):
    """Training produced non-finite losses."""


class TrajectoryExhausted(StyleditError):
    """Every editable position is masked; the revision loop must stop."""
