"""CSV files with '#'-prefixed provenance lines."""

import hashlib
import json
import logging
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)


def config_hash(payload):
    """First 16 hex digits of the SHA-256 of canonical JSON."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def write_csv(df, path, metadata=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}={value}\n")
        df.to_csv(fh, index=False)
    logger.info("Successfully wrote %d rows to %s", len(df), path)
    return path


def read_csv(path):
    """Read a CSV written by ``write_csv``; returns (frame, metadata dict)."""
    metadata = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            metadata[key.strip()] = value.strip()
    df = pd.read_csv(path, comment="#")
    return df, metadata
