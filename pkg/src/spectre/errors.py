"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SpectreError(Exception):
    exit_code = 1
    code = "error"


class ConfigError(SpectreError, ValueError):
    exit_code = 2
    code = "config"


class ArtifactError(SpectreError):
    """A required file is missing, corrupt or inconsistent."""

    exit_code = 3
    code = "artifact"


class MissingArtifactError(ArtifactError):
    code = "missing_input_artifact"

    def __init__(self, path):
        super().__init__(f"missing input artifact: {path}")
        self.path = str(path)


class BadMagicError(ArtifactError):
    code = "bad_magic"


class VersionMismatchError(ArtifactError):
    code = "version_mismatch"


class TruncatedPayloadError(ArtifactError):
    code = "truncated_payload"


class ShapeMismatchError(ArtifactError):
    code = "shape_mismatch"


class PatchMisalignmentError(ArtifactError):
    code = "patch_misalignment"


class HashMismatchError(ArtifactError):
    code = "config_hash_mismatch"


class NumericalError(SpectreError, ArithmeticError):
    exit_code = 4
    code = "numerical"
