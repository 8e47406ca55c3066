class NumericFailure(ArithmeticError):
    """A computation produced a nonfinite value.

    ``step`` carries the iteration index for iterative solvers, else None.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
