class LatentDepthError(Exception):
    pass


class ConfigurationError(LatentDepthError, ValueError):
    pass


class ParseError(LatentDepthError, ValueError):
    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class ShapeError(LatentDepthError, ValueError):
    pass


class DomainError(LatentDepthError, ValueError):
    pass


class DegenerateError(LatentDepthError, ValueError):
    pass


class NumericalError(LatentDepthError, FloatingPointError):
    pass


class IntegrityError(LatentDepthError, RuntimeError):
    pass
