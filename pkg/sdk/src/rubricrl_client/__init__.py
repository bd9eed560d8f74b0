"""Trainer-side client for the rubricrl reward service."""

from .client import (
    INTERFACE_VERSION,
    ClientConfig,
    ClientError,
    IncompatibleInterface,
    RequestRejected,
    RewardClient,
    ScoreResult,
    ServiceUnavailable,
)

__all__ = [
    "INTERFACE_VERSION",
    "ClientConfig",
    "ClientError",
    "IncompatibleInterface",
    "RequestRejected",
    "RewardClient",
    "ScoreResult",
    "ServiceUnavailable",
]
