"""Exception types shared across the package."""

from __future__ import annotations


class DelayIOSError(Exception):
    """Base class for all errors raised by delayios."""


class UnreachableTarget(DelayIOSError):
    """Inversion target lies outside the validated range of a function."""


class EnvelopeDiverged(DelayIOSError):
    """No power map yields a finite exponential envelope on the grid."""


class NonConvergent(DelayIOSError):
    """A bisection bracket could not be established."""


class EmptySampleSet(DelayIOSError):
    pass


class ConfigMismatch(DelayIOSError):
    """History grid, delay and step size do not line up."""


class BlowUp(DelayIOSError):
    """State norm exceeded the blow-up guard during integration."""

    def __init__(self, t: float, member: int = 0, norm: float = float("inf")):
        self.t = float(t)
        self.member = int(member)
        self.norm = float(norm)
        super().__init__(f"|x| = {norm:.3g} exceeded guard at t = {t:.6g} (member {member})")


class NoDelayFreeOutput(DelayIOSError):
    """The operation needs a delay-free output map h0 but the model has none."""


class MissingFunction(DelayIOSError):
    """An estimate candidate lacks a comparison function its form requires."""


class NoCertificate(DelayIOSError):
    """Output redefinition requested without an IOS certificate (beta, gamma)."""


class ConfigError(DelayIOSError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)
