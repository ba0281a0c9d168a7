"""Exception hierarchy.

Everything raised on purpose derives from :class:`NlstopError` so the CLI can
map failures to exit codes without catching unrelated bugs.
"""


class NlstopError(Exception):
    pass


class MalformedTree(NlstopError, ValueError):
    pass


class HorizonTooLarge(NlstopError, ValueError):
    pass


class TreeMismatch(NlstopError, ValueError):
    pass


class NonCanonicalRule(NlstopError, ValueError):
    pass


class OrderViolation(NlstopError, ValueError):
    """A stopping rule stops before the time it is required to follow."""


class NegativeReward(NlstopError, ValueError):
    def __init__(self, node, value):
        super().__init__(f"negative reward {value} at node {node}")
        self.node = node
        self.value = value


class MalformedKernel(NlstopError, ValueError):
    pass


class MalformedEngine(NlstopError, ValueError):
    pass


class ArityMismatch(NlstopError, ValueError):
    pass


class NonBinomialNode(NlstopError, ValueError):
    pass


class TimeOrderViolation(NlstopError, ValueError):
    pass


class MissingValues(NlstopError, KeyError):
    pass


class EnvelopeOverflow(NlstopError, ValueError):
    pass


class LambdaOutOfRange(NlstopError, ValueError):
    pass


class LambdaGridError(NlstopError, ValueError):
    pass


class CoordinateOutOfRange(NlstopError, IndexError):
    pass


class NodeNotInSubtree(NlstopError, ValueError):
    pass


class LengthMismatch(NlstopError, ValueError):
    pass


class BudgetExceeded(NlstopError, RuntimeError):
    def __init__(self, what, needed, budget):
        shown = needed if needed < 10**15 else f"about 10^{len(str(needed)) - 1}"
        super().__init__(f"{what}: needs {shown}, budget is {budget}")
        self.needed = needed
        self.budget = budget


class SpecError(NlstopError, ValueError):
    """Invalid problem file; ``path`` names the offending field."""

    def __init__(self, path, message=None):
        super().__init__(path if message is None else f"{path}: {message}")
        self.path = path
