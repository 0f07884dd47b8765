"""Python bindings for the twinforge digital twin platform."""

from ._core import (
    Error,
    Platform,
    WatchdogEngine,
    bench,
    decode_values,
    encode_values,
    is_valid_envelope,
    load_config,
    parse_thing_id,
    substitute,
)

__all__ = [
    "Error",
    "Platform",
    "WatchdogEngine",
    "bench",
    "decode_values",
    "encode_values",
    "is_valid_envelope",
    "load_config",
    "parse_thing_id",
    "substitute",
]
