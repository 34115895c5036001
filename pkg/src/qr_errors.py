# qr_errors.py
"""
Exception hierarchy for the Quasiregular Dynamics Lab
"""


class QRLabError(Exception):
    """Base class for every lab failure."""


class GeometryError(QRLabError):
    """Input geometry violates a precondition (dimension, placement, A(0) != 0)."""


class NonConformal(GeometryError):
    """Fitted linear map is not of the form lambda * orthogonal."""


class Diverged(QRLabError):
    """An enumeration failed to close within its limit."""


class NoFiniteOrder(QRLabError):
    """Orthogonal matrix has no finite order below the search bound."""


class NoConvergence(QRLabError):
    """Inverse-branch search did not reach its tolerance."""


class BranchImage(QRLabError):
    """Point lies on the image of the branch set."""


class IllConditioned(QRLabError):
    """A least-squares system is too ill-conditioned to trust."""


class NotContracting(QRLabError):
    """Conjugacy iteration steps stopped decaying geometrically."""


class MethodDisagreement(QRLabError):
    """Independent numerical methods disagree beyond tolerance."""


class PoorFit(QRLabError):
    """Log-log homogeneity fit residual exceeds tolerance."""


class NotConverging(QRLabError):
    """Rescaled maps do not settle as the scale shrinks."""


class DegenerateJacobian(QRLabError):
    """Jacobian determinant is (numerically) zero."""


class BranchPoint(QRLabError):
    """Linearizer requested at a branch image."""


class Inconclusive(QRLabError):
    """Dynamics near a fixed point depend on direction."""


class ConfigError(QRLabError):
    """Invalid campaign configuration or command-line flags."""


class ToleranceFail(QRLabError):
    """One or more report criteria failed."""


class EmitError(QRLabError):
    """Report files could not be written."""
