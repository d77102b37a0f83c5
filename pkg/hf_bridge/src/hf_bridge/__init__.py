"""Exporter that drives the led sampling service with a pretrained causal LM's layers."""

from .client import BridgeClient, BridgeConnectionError, BridgeError, BridgeProtocolError
from .exporter import ExportConfig, ExportConfigError, export_run

__all__ = [
    "BridgeClient",
    "BridgeConnectionError",
    "BridgeError",
    "BridgeProtocolError",
    "ExportConfig",
    "ExportConfigError",
    "export_run",
]
