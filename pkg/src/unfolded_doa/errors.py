"""Exception types shared across the package."""


class InvalidGeometry(ValueError):
    pass


class GridTooSmall(ValueError):
    pass


class AliasingError(ValueError):
    pass


class SamplingFailure(ValueError):
    pass


class StructureViolation(ValueError):
    """Operation needs the gamma=1/2 circulant Gram structure."""


class ContractError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    pass


class NearSingularLayer(ArithmeticError):
    pass


class UndefinedLoss(ArithmeticError):
    pass
