'''
   exceptions raised by the func_module functions

   the library raises; mbs_train.py catches, prints a banner
   to stderr and turns the exception into an exit code

   access these values in other modules by
        import func_module.errors_func as er
'''


class MbsError(Exception):
    exit_code = 1


class ConfigError(MbsError):
    exit_code = 2


class ShapeError(MbsError, ValueError):
    '''
        layer shapes do not compose, or an input does not match
        the shape the model was built for
    '''

    def __init__(self, message, layer_index= None):
        if layer_index is not None:
            message = f'layer {layer_index}: {message}'
        super().__init__(message)
        self.layer_index = layer_index


class NumericOverflowError(MbsError, ArithmeticError):

    def __init__(self, message, layer_index= None):
        if layer_index is not None:
            message = f'layer {layer_index}: {message}'
        super().__init__(message)
        self.layer_index = layer_index


class TapeConsumedError(MbsError, RuntimeError):
    pass


class KeyMismatchError(MbsError, KeyError):

    def __str__(self):
        return str(self.args[0]) if self.args else ''


class AccumulationError(MbsError, RuntimeError):
    pass


class ModelDoesNotFitError(MbsError):
    '''
        capacity cannot hold the parameter space
        plus a single sample of data space
    '''
    exit_code = 3

    def __init__(self, required_bytes, capacity_bytes):
        super().__init__(
            f'model does not fit: needs {required_bytes} bytes '
            f'for one sample, capacity is {capacity_bytes} bytes')
        self.required_bytes = required_bytes
        self.capacity_bytes = capacity_bytes


class IdxFormatError(MbsError, ValueError):

    def __init__(self, message, offset= 0):
        super().__init__(f'{message} (at byte offset {offset})')
        self.offset = offset


class IdxTruncatedError(IdxFormatError):

    def __init__(self, path, expected, actual):
        super().__init__(
            f'{path} is truncated: expected {expected} bytes, '
            f'found {actual}', offset= actual)
        self.expected = expected
        self.actual = actual


class IncompatibleRunsError(MbsError, ValueError):
    pass
