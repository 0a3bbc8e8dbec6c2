"""Provenance headers for output files.

Every primary output starts with '#'-prefixed lines recording the tool
version, seed, and a digest of the effective configuration. Timestamps
live only in a ``# created:`` line, which is excluded from the
digest-checked region so reruns are byte-identical.
"""
from __future__ import annotations

import datetime as dt
import hashlib
from typing import Mapping

from . import __version__


def config_digest(config: Mapping[str, object]) -> str:
    payload = "\n".join(f"{k}={config[k]!r}" for k in sorted(config))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def provenance_lines(command: str, seed: int, digest: str) -> tuple[str, ...]:
    return (
        f"# loskit {__version__} {command}",
        f"# seed: {seed}",
        f"# config: sha256:{digest}",
        f"# created: {dt.datetime.now(dt.timezone.utc).isoformat(timespec='seconds')}",
    )


def digest_checked_region(text: str) -> str:
    """Drop '# created:' lines; what remains must be byte-identical across reruns."""
    return "\n".join(
        line for line in text.splitlines() if not line.startswith("# created:")
    )
