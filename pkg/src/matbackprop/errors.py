"""Exception hierarchy shared by all modules."""


class MatBackpropError(Exception):
    pass


class ContractError(MatBackpropError, ValueError):
    """Input violates a shape, symmetry or finiteness precondition."""


class DecompositionError(MatBackpropError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class DegenerateSpectrumError(MatBackpropError):
    def __init__(self, i, j, gap, min_gap):
        super().__init__(
            f"spectral gap between entries {i} and {j} is {gap:.3e} < min_gap={min_gap:.3e}"
        )
        self.pair = (i, j)
        self.gap = gap


class RankDeficiencyError(MatBackpropError):
    pass


class DomainError(MatBackpropError, ValueError):
    """Scalar function evaluated outside its domain (e.g. log of a nonpositive value)."""


class AffinityDomainError(MatBackpropError):
    def __init__(self, i, j, value):
        super().__init__(f"affinity entry W[{i},{j}] = {value:.6g} is negative")
        self.pair = (i, j)


class DisconnectedPixelError(MatBackpropError):
    def __init__(self, rows):
        rows = list(rows)
        super().__init__(f"pixels with zero degree: {rows[:10]}{'...' if len(rows) > 10 else ''}")
        self.rows = rows


class EmptyClusterError(MatBackpropError):
    pass


class RankLemmaViolation(AssertionError):
    """Projectors closer than 1 in Frobenius norm but numerical ranks differ."""


class TrainingFailure(MatBackpropError):
    def __init__(self, message, epoch, last_params):
        super().__init__(message)
        self.epoch = epoch
        self.last_params = last_params


class ProbeError(MatBackpropError):
    def __init__(self, index, cause):
        super().__init__(f"function failed at probe entry {index}: {cause}")
        self.index = index
        self.cause = cause


class CsvFormatError(MatBackpropError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
