from .config import ChainConfig
from .logstore import Key, LogEntry, LogStore, Value
from .messages import (
    PCL,
    DecodeError,
    Packet,
    PacketKind,
    PiggybackLog,
    PiggybackMessage,
    decode_piggyback,
    empty_pl,
    encode_piggyback,
    message_size,
    pcl_size,
)
from .partition import fnv1a_64, partition_of
from .vclock import ConfigurationError, VectorClock, vc_join, vc_leq, vc_merge, vc_zero


def log_insert(store: LogStore, entry: LogEntry) -> bool:
    return store.insert(entry)


def log_latest(store: LogStore, key: Key):
    return store.latest(key)


def log_prune(store: LogStore, upto: VectorClock) -> None:
    store.prune(upto)


__all__ = [
    "ChainConfig",
    "ConfigurationError",
    "DecodeError",
    "Key",
    "LogEntry",
    "LogStore",
    "PCL",
    "Packet",
    "PacketKind",
    "PiggybackLog",
    "PiggybackMessage",
    "Value",
    "VectorClock",
    "decode_piggyback",
    "empty_pl",
    "encode_piggyback",
    "fnv1a_64",
    "log_insert",
    "log_latest",
    "log_prune",
    "message_size",
    "partition_of",
    "pcl_size",
    "vc_join",
    "vc_leq",
    "vc_merge",
    "vc_zero",
]
