"""Historian twin: file receiver, compression pipeline and point archive."""

from .archive import ArchiveOrderError, StreamArchive, StreamKey, UnknownStreamError
from .compression import (
    DEFAULT_SETTINGS,
    PASS_THROUGH,
    CompressionSettings,
    DoorState,
    ExceptionState,
    compress_series,
    door_flush,
    exception_filter,
    parse_settings,
    swinging_door,
    zero_settings,
)
from .receiver import FileReceiver
from .service import Historian, IngestReport

__all__ = [
    "ArchiveOrderError",
    "CompressionSettings",
    "DEFAULT_SETTINGS",
    "DoorState",
    "ExceptionState",
    "FileReceiver",
    "Historian",
    "IngestReport",
    "PASS_THROUGH",
    "StreamArchive",
    "StreamKey",
    "UnknownStreamError",
    "compress_series",
    "door_flush",
    "exception_filter",
    "parse_settings",
    "swinging_door",
    "zero_settings",
]
