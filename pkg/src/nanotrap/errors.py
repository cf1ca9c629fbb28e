"""Exception hierarchy.

Every error carries a short machine-readable ``code`` used by the CLI
for its single-line error report.
"""


class NanotrapError(Exception):
    code = "NANOTRAP_ERROR"


class BracketingFailure(NanotrapError):
    code = "BRACKETING_FAILURE"


class RootNonconvergence(NanotrapError):
    code = "ROOT_NONCONVERGENCE"


class NoMinimumFound(NanotrapError):
    code = "NO_MINIMUM_FOUND"


class LevelAboveDepth(NanotrapError):
    code = "LEVEL_ABOVE_DEPTH"


class InsufficientScanRange(NanotrapError):
    code = "INSUFFICIENT_SCAN_RANGE"


class FitNonconvergence(NanotrapError):
    code = "FIT_NONCONVERGENCE"


class DegenerateData(NanotrapError):
    code = "DEGENERATE_DATA"


class DegenerateObservation(NanotrapError):
    code = "DEGENERATE_OBSERVATION"


class StepTooLarge(NanotrapError):
    code = "STEP_TOO_LARGE"


class NonFiniteState(NanotrapError):
    code = "NON_FINITE_STATE"


class EnergyOutOfRange(NanotrapError):
    code = "ENERGY_OUT_OF_RANGE"


class ScenarioError(NanotrapError):
    code = "SCENARIO_INVALID"
