from .variables import ErrorCode


class ImplantMambaException(Exception):
    """Base exception class for all exceptions in implant_mamba"""
    code = ErrorCode.UNKNOWN

    def to_dict(self):
        return {'error': self.code.name, 'code': int(self.code), 'message': str(self)}


class ContractError(ImplantMambaException, ValueError):
    code = ErrorCode.CONTRACT


class DimensionError(ContractError):
    code = ErrorCode.DIMENSION


class DegenerateGeometryError(ContractError):
    code = ErrorCode.DEGENERATE_GEOMETRY


class NumericalError(ImplantMambaException, ArithmeticError):
    code = ErrorCode.NUMERICAL


class NonFiniteLossError(NumericalError):
    code = ErrorCode.NON_FINITE_LOSS

    def __init__(self, step, param_norms=None):
        self.step = step
        self.param_norms = dict(param_norms or {})
        super().__init__(step, self.param_norms)

    def __str__(self):
        # nan norms sort first
        worst = sorted(self.param_norms.items(),
                       key=lambda kv: -(kv[1] if kv[1] == kv[1] else float('inf')))[:5]
        dump = ', '.join(f'{name}={norm:.4g}' for name, norm in worst)
        return f'{self.__class__.__name__}[step={self.step}] non-finite loss; largest parameter norms: {dump}'


class GradCheckError(ImplantMambaException):
    code = ErrorCode.GRADCHECK


class ContainerFormatError(ImplantMambaException):
    code = ErrorCode.CONTAINER_FORMAT

    def __init__(self, message, offset=None):
        self.offset = offset
        super().__init__(message)

    def __str__(self):
        where = f'[offset={self.offset}]' if self.offset is not None else ''
        return f'{self.__class__.__name__}{where} {self.args[0]}'


class IntegrityError(ImplantMambaException):
    code = ErrorCode.INTEGRITY
