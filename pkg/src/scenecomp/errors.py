"""Exception types shared across the package."""


class SceneCompError(Exception):
    """Base class for all scenecomp errors."""


class InvalidTransformError(SceneCompError, ValueError):
    """Transform parameters are out of domain (e.g. non-positive scale)."""


class InvalidInputError(SceneCompError, ValueError):
    """An input violates a precondition (degenerate sizes, bad ranges)."""


class ShapeMismatchError(SceneCompError, ValueError):
    """Array/tensor shapes are inconsistent with each other or the config."""


class InvalidBBoxError(SceneCompError, ValueError):
    """A bounding box is degenerate or falls outside its frame."""


class EmptyObjectError(SceneCompError, ValueError):
    """An instance mask is empty where an object was expected."""


class ClassTableError(SceneCompError, ValueError):
    """A class name/id is missing from or inconsistent with the class table."""


class LabelError(SceneCompError, ValueError):
    """A label map contains ids that the class table cannot resolve."""


class DatasetIOError(SceneCompError, OSError):
    """A dataset file is missing, corrupt, or inconsistent. Carries the path."""


class IngestError(SceneCompError, ValueError):
    """Parallel directories of a real dataset do not line up."""


class ConfigError(SceneCompError, ValueError):
    """A configuration value is unusable (missing classes, mismatched tables)."""


class EvalError(SceneCompError, ValueError):
    """An evaluation was requested on unusable inputs (e.g. empty sets)."""


class TrainingDivergedError(SceneCompError, RuntimeError):
    """A loss became non-finite; message carries the diagnostic dump."""
