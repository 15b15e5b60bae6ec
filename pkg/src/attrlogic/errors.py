"""Shared exception hierarchy.

Every domain error raised by this package derives from AttrLogicError so the
CLI can map any of them to a single non-zero exit code.
"""


class AttrLogicError(Exception):
    """Base class for all domain errors raised by attrlogic."""


class DimensionMismatchError(AttrLogicError):
    """A matrix or vector width does not match the schema or its peer."""


class InputValueError(AttrLogicError):
    """An input value is out of its documented domain (e.g. non-finite score)."""
