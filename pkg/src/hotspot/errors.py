"""Exception hierarchy.

Everything raised on purpose derives from :class:`HotspotError`. The CLI maps
:class:`ConfigError` to exit code 2 and :class:`DataError` to exit code 3.
"""


class HotspotError(Exception):
    pass


class ConfigError(HotspotError):
    pass


class DataError(HotspotError):
    pass


class InvalidConfig(ConfigError, ValueError):
    pass


class UnknownPreset(ConfigError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownField(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DomainViolation(DataError, ValueError):
    pass


class HeaderMismatch(DataError):
    pass


class MissingLabel(DataError):
    pass


class TooShort(DataError, ValueError):
    pass


class SingleClassData(DataError):
    pass


class NonFiniteInput(DataError, ValueError):
    pass


class ColumnMismatch(DataError):
    pass


class DegenerateSplit(HotspotError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


class SingleClassLabels(DataError):
    pass


class NoPositives(DataError):
    pass
