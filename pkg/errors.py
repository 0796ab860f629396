from typing import Any, Optional


class LabError(Exception):
    """Base error for degenlab; carries a detail message and a process exit code"""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# Expression layer

class ExpressionSyntaxError(LabError):
    def __init__(self, position: int, expected: str, text: str = ""):
        self.position = position
        self.expected = expected
        super().__init__(f"Syntax error at position {position}: expected {expected}" + (f" in '{text}'" if text else ""))


class UnknownVariable(LabError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Unknown variable '{name}'")


class ArityError(LabError):
    def __init__(self, name: str, got: int, expected: str):
        self.name = name
        super().__init__(f"Function '{name}' takes {expected} argument(s), got {got}")


class UnboundVariable(LabError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Variable '{name}' is not bound")


class DomainError(LabError):
    def __init__(self, node: str, value: Any):
        self.node = node
        self.value = value
        super().__init__(f"Domain error at node {node} for value {value!r}")


class NonDifferentiableNode(LabError):
    pass


class VarSetError(LabError):
    pass


# Grids and profiles

class GridError(LabError):
    pass


class StepTooLarge(LabError):
    def __init__(self, point: Any, step: float, radius: float):
        self.point = point
        super().__init__(f"Stencil of step {step:g} at {point} leaves the support radius {radius:g}")


class EmptyShell(LabError):
    def __init__(self, radius: float):
        self.radius = radius
        super().__init__(f"No grid nodes in the shell at radius {radius:g}")


# Koike functional and families

class FamilyError(LabError):
    def __init__(self, detail: str, hint: Optional[str] = None):
        self.hint = hint
        super().__init__(detail + (f" (hint: {hint})" if hint else ""))


class NoCrossing(LabError):
    def __init__(self, tau: float, s_max: float):
        self.tau = tau
        self.s_max = s_max
        super().__init__(f"1/s - tau*f0(s) has no root below s_max={s_max:g} for tau={tau:g}")


class ResolutionExhausted(LabError):
    pass


# Matrix checks

class NotPSD(LabError):
    def __init__(self, name: str, point: Any, value: float):
        self.point = point
        self.value = value
        super().__init__(f"Matrix {name} is not positive semidefinite at x={point} (eigenvalue {value:g})")


class RangeMismatch(LabError):
    def __init__(self, point: Any, direction: Any, axis: int):
        self.point = point
        self.direction = direction
        self.axis = axis
        super().__init__(f"d/dx{axis} A does not vanish on the null space of A at x={point}")


class DimensionMismatch(LabError):
    pass


# Symbol calculus

class NotElliptic(LabError):
    def __init__(self, point: Any, value: float, detail: Optional[str] = None):
        self.point = point
        self.value = value
        super().__init__(detail or f"Symbol is not elliptic on the lattice at {point} (|a|/|xi|^m = {value:g})")


class PsiNegative(LabError):
    def __init__(self, point: Any, value: float):
        self.point = point
        super().__init__(f"psi is negative at {point} (value {value:g})")


class NotHomogeneous(LabError):
    def __init__(self, point: Any, value: float):
        self.point = point
        super().__init__(f"psi changes by {value:g} under xi -> t*xi at {point}; it must be homogeneous of degree 0 in xi")


# Spectral engine

class NotConverged(LabError):
    def __init__(self, iterations: int, best: Any = None):
        self.iterations = iterations
        self.best = best
        super().__init__(f"Inverse iteration did not converge in {iterations} iterations")


# Inequalities

class DegenerateMin(LabError):
    def __init__(self, s: float):
        self.s = s
        super().__init__(f"min of f over |x| >= {s:g} underflows to zero")


# Front end

class ConfigError(LabError):
    def __init__(self, detail: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{detail}" + (f" [key: {key}]" if key else ""))


class IoError(LabError):
    pass
