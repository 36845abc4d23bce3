"""
tools/errors.py
Exception hierarchy shared by every stage of the pipeline
"""

from typing import Optional


class ScaffoldDriveError(Exception):
    """Base class for all pipeline errors"""


# ==================== SCHEMA / SCAFFOLD ====================

class UnknownToken(ScaffoldDriveError):
    """An anchor or value token is missing from the vocabulary"""


class SchemaShape(ScaffoldDriveError):
    """Schema sections or field counts do not match the four-section family"""


class ValueOverflow(ScaffoldDriveError):
    """A numeric value does not fit the fixed-width numeral"""


class TextTooLong(ScaffoldDriveError):
    """Free text exceeds its section capacity"""


class ParseError(ScaffoldDriveError):
    """Base for errors raised while parsing a decoded token sequence"""

    def __init__(self, message: str, position: Optional[int] = None):
        super().__init__(message if position is None else f"{message} (position {position})")
        self.position = position


class AnchorViolation(ParseError):
    """Token at an anchor position differs from the template"""


class MalformedNumber(ParseError):
    """A waypoint coordinate is not sign + 3 digits + '.' + 2 digits"""


class MalformedValue(ParseError):
    """A closed-class value is not one of the schema's values"""


class InteriorNull(ParseError):
    """NULL padding is followed by a non-NULL token in the same section"""


# ==================== MODEL ====================

class MaskInCausal(ScaffoldDriveError):
    """MASK token fed to a causal-mode forward pass"""


class LengthOverflow(ScaffoldDriveError):
    """Sequence would exceed the model's position table"""


class StaleCandidate(ScaffoldDriveError):
    """Candidate KV was computed against a different context length"""


class CheckpointFormatError(ScaffoldDriveError):
    """Checkpoint file is truncated or not an FDDR1 file"""


# ==================== TRAINING ====================

class MaskOnAnchor(ScaffoldDriveError):
    """A corrupted example masks an anchor position"""


class Diverged(ScaffoldDriveError):
    """Training loss became NaN or infinite"""


# ==================== ROLLOUTS / METRICS ====================

class SingularSystem(ScaffoldDriveError):
    """Jerk-minimizing spline system could not be solved"""


class ShapeMismatch(ScaffoldDriveError):
    """Trajectories to combine do not share timestamps"""


# ==================== CLI ====================

class ConfigError(ScaffoldDriveError):
    """Invalid configuration value, key or command-line choice"""


class CheckFailed(ScaffoldDriveError):
    """A self-check did not pass"""

    def __init__(self, check_name: str, detail: str = "", verdict: Optional[dict] = None):
        super().__init__(f"check '{check_name}' failed" + (f": {detail}" if detail else ""))
        self.check_name = check_name
        self.verdict = verdict
