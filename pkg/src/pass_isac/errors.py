"""Exception types raised by the solver library."""


class PassIsacError(Exception):
    """Base class for all library errors."""


class InfeasibleLayout(PassIsacError, ValueError):
    """PA positions violate the waveguide length / spacing constraints."""


class DegenerateGeometry(PassIsacError, ValueError):
    pass


class SingularFim(PassIsacError, ArithmeticError):
    """The positional Schur complement of the FIM is not invertible."""


class Infeasible(PassIsacError):
    """SINR targets cannot be met under the power budget."""


class SolverFailure(PassIsacError, RuntimeError):
    pass


class DegenerateBeam(PassIsacError, ArithmeticError):
    """A user receives (numerically) no power from its relaxed beamformer."""


class SurrogateInfeasible(PassIsacError):
    pass


class EmptyFeasibleInterval(PassIsacError, ValueError):
    pass


class NoFeasibleIterate(PassIsacError):
    pass
