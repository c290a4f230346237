class GeoDemoError(RuntimeError):
    pass


class ConfigError(GeoDemoError):
    pass


class DataError(GeoDemoError):
    pass


class ParseError(DataError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = "line %d: %s" % (line_number, message)
        super(ParseError, self).__init__(message)


class FormatError(DataError):
    pass


class GeoidMismatch(DataError):
    pass


class VariantMismatch(DataError):
    pass


class DegenerateTarget(DataError):
    pass


class UndefinedCorrelation(DataError):
    pass


class DivergenceError(GeoDemoError):
    def __init__(self, epoch, step, message="SGD diverged"):
        self.epoch = epoch
        self.step = step
        super(DivergenceError, self).__init__(
            "%s (epoch %d, step %d)" % (message, epoch, step))
