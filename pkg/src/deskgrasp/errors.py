"""Error taxonomy shared across the package.

Every public failure mode maps to one of these classes so the CLI can emit a
machine-readable {"error": {"type": ..., "message": ...}} object and a nonzero
exit code.
"""


class DeskGraspError(Exception):
    """Base class; `code` is the stable machine-readable identifier."""

    code = "error"

    def to_json(self) -> dict:
        return {"error": {"type": self.code, "message": str(self)}}


class DimensionError(DeskGraspError):
    code = "dimension_error"


class NumericError(DeskGraspError):
    code = "numeric_error"


class ConfigurationError(DeskGraspError):
    code = "configuration_error"


class InputError(DeskGraspError):
    code = "input_error"


class ParseError(DeskGraspError):
    code = "parse_error"


class TargetNotFound(DeskGraspError):
    code = "target_not_found"


class NoFeasibleSkill(DeskGraspError):
    code = "no_feasible_skill"


class InterpreterUnavailable(DeskGraspError):
    code = "interpreter_unavailable"


class SkillModelMissing(DeskGraspError):
    code = "skill_model_missing"
