"""Exception hierarchy.  ``exit_code`` is what the CLI returns for each family."""


class DocrelError(Exception):
    exit_code = 1


class InputError(DocrelError):
    """Bad input file, bad configuration, or invalid arguments."""

    exit_code = 2


class ConfigError(InputError):
    pass


class ParseError(InputError):
    pass


class SchemaError(InputError):
    pass


class ValidationError(InputError):
    pass


class CheckpointMismatch(DocrelError):
    """A checkpoint tensor does not match the shape the configuration implies."""

    exit_code = 3

    def __init__(self, name, expected, found):
        super().__init__(f"tensor {name!r}: expected shape {expected}, checkpoint has {found}")
        self.name = name
        self.expected = expected
        self.found = found


class NumericError(DocrelError):
    exit_code = 4
