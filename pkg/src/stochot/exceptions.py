"""Exception types shared across the package."""

__all__ = ["SolverFailure", "SupportCapExceeded"]


class SolverFailure(RuntimeError):
    """A numerical routine failed to produce a usable result."""


class SupportCapExceeded(SolverFailure):
    """An exact OT solve was requested on supports larger than the cap."""
