"""Exception types shared across the toolchain.

CLI maps ToolError (and argparse failures) to exit code 2; tolerance
failures in `compare` use exit code 1 and are not exceptions.
"""


class ToolError(Exception):
    """Base class for user-facing errors (bad config, bad file, infeasible plan)."""


class ConfigError(ToolError):
    """Invalid network configuration or preset name."""


class FormatError(ToolError):
    """Malformed input file (image, weights container, JSON interchange)."""


class CalibrationError(ToolError):
    """Calibration data missing or produced unusable scales."""


class TilingError(ToolError):
    """No feasible tiling under the given memory hierarchy."""


class CapacityError(TilingError):
    """A whole-network residency constraint (L2/L3) cannot be met."""
