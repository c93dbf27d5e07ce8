"""Configuration dataclasses shared across the engine, gateway, and server."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class EngineMode(str, Enum):
    # Full adaptive pipeline: mental state, strategy rotation, tailored prompt.
    FULL = "full"
    # Fixed generic reminder, no strategy tailoring.
    SIMPLE = "simple"
    # Intent dialog only; habitual opens proceed without persuasion.
    BASELINE = "baseline"


@dataclass(frozen=True)
class RemoteBackendConfig:
    """Where and how to reach a chat-completion service."""

    base_url: str
    model: str = "gpt-4"
    api_key_env: str = "NUDGELOOP_API_KEY"
    connect_timeout_s: float = 2.0
    read_timeout_s: float = 10.0


@dataclass(frozen=True)
class GatewayConfig:
    # Streaming must start fast enough for a dialog to feel live.
    first_chunk_timeout_s: float = 2.0
    deadline_s: float = 10.0
    word_cap: int = 70


@dataclass(frozen=True)
class EngineConfig:
    mode: EngineMode = EngineMode.FULL
    round_cadence_s: float = 120.0
    # Sessions with no terminal signal are flagged after this long.
    orphan_timeout_s: float = 1800.0
    timezone: str = "UTC"


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    data_dir: Path = Path("data")
    mode: EngineMode = EngineMode.FULL
    round_cadence_s: float = 120.0
    # Client check-ins arrive every 5 minutes; two misses means trouble.
    heartbeat_threshold_s: float = 600.0
    auth_token: str | None = None
    remote: RemoteBackendConfig | None = None
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
