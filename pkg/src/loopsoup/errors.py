"""Exception hierarchy shared by every module."""


class LoopSoupError(Exception):
    """Base class for all errors raised by this package."""


class ChainError(LoopSoupError, ValueError):
    """A chain definition violates a standing assumption.

    ``entry`` names the offending array entry (for example ``"q[0][0]"``)
    when a single entry is to blame.
    """

    def __init__(self, message, entry=None):
        super().__init__(message)
        self.entry = entry


class BadRates(ChainError):
    """Negative rate, nonzero diagonal, nonpositive weight or zero total rate."""


class SingularGenerator(ChainError):
    """The generator is not invertible: the chain is not transient."""


class NotIrreducible(ChainError):
    """Some Green kernel entry u(x, y) vanishes."""


class EmptySubset(LoopSoupError, ValueError):
    pass


class TooLarge(LoopSoupError, ValueError):
    """Permutation enumeration requested beyond the size cap."""


class OutOfDomain(LoopSoupError, ValueError):
    """Moment generating function evaluated outside its convergence domain."""


class NoDecay(LoopSoupError, RuntimeError):
    """No certified bound below one on the jump-chain spectral radius."""


class ZeroIntensity(LoopSoupError, ValueError):
    """No rooted skeleton of the requested length has positive weight."""


class QuadratureFailure(LoopSoupError, RuntimeError):
    pass


class NotABijection(LoopSoupError, ValueError):
    pass


class BadDensity(LoopSoupError, ValueError):
    pass


class BadSupport(LoopSoupError, ValueError):
    pass


class SchemaError(LoopSoupError, ValueError):
    """Configuration document does not match the schema.

    ``path`` is a JSON-path string locating the offending entry.
    """

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnknownExperiment(SchemaError):
    pass


class BadChain(SchemaError):
    pass
