"""Router twin: report listener, spool directories and file distributor."""

from .distributor import DistributeResult, Distributor, DistributorStats, TcpChannel, TransferChannel, distribute
from .listener import ConnectionSession, Gateway, ListenerStats
from .spool import PurgeResult, SpoolConfig, SpoolFile, SpoolWriter, list_spool, mark_sent, parse_spool_path, purge

__all__ = [
    "ConnectionSession",
    "DistributeResult",
    "Distributor",
    "DistributorStats",
    "Gateway",
    "ListenerStats",
    "PurgeResult",
    "SpoolConfig",
    "SpoolFile",
    "SpoolWriter",
    "TcpChannel",
    "TransferChannel",
    "distribute",
    "list_spool",
    "mark_sent",
    "parse_spool_path",
    "purge",
]
