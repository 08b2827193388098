class DomainError(ValueError):
    """An argument lies outside the domain of a function or generator."""


class ConfigError(ValueError):
    """A run configuration is malformed or violates a solver invariant."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class SolverError(RuntimeError):
    """A solve failed; ``iteration`` records where."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        prefix = f"iteration {iteration}: " if iteration is not None else ""
        super().__init__(prefix + message)
