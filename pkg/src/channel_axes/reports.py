"""Run manifests, canonical serialization, and atomic report files.

Every artifact the CLI writes embeds a RunManifest (what command produced
it, hashes of its configuration and input bundle, engine version, seeds,
timestamp) so reruns can be compared byte for byte. Serialization is
canonical: JSON with sorted keys and no whitespace variance, CSV with a
mandatory header, '.' decimals, '\n' newlines, UTF-8. The timestamp comes
from the CHANNEL_AXES_TIMESTAMP environment variable and defaults to empty,
which keeps identical runs byte-identical.
"""

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__

SCHEMA_PREFIX = "channel-axes"


def _plain(obj):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_json(obj):
    """Deterministic JSON text: sorted keys, compact separators."""
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def run_timestamp():
    return os.environ.get("CHANNEL_AXES_TIMESTAMP", "")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    bundle_hash: str = ""
    engine_version: str = __version__
    seeds: list = field(default_factory=list)
    timestamp: str = field(default_factory=run_timestamp)

    def as_dict(self):
        return _plain(asdict(self))


def build_manifest(command, config, bundle_hash="", seeds=()):
    return RunManifest(
        command=command,
        config_hash=config_hash(config),
        bundle_hash=bundle_hash,
        seeds=[int(s) for s in seeds],
    )


def atomic_write_bytes(path, data):
    """Write via a sibling temp file and rename, so readers never see partials."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def json_report(schema, payload, manifest):
    """Full JSON report document; schema names look like 'metrics/v1'."""
    doc = {
        "schema": f"{SCHEMA_PREFIX}/{schema}",
        "manifest": manifest.as_dict(),
        "data": _plain(payload),
    }
    return canonical_json(doc) + "\n"


def format_cell(value):
    """One CSV cell: repr for floats (shortest round-trip, '.' decimal)."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def csv_report(schema, header, rows, manifest):
    """CSV text with the manifest embedded as leading comment lines."""
    lines = [
        f"# schema: {SCHEMA_PREFIX}/{schema}",
        "# manifest: " + canonical_json(manifest.as_dict()),
        ",".join(header),
    ]
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} != header width {len(header)}")
        lines.append(",".join(format_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def read_csv_rows(text):
    """Parse a report CSV (or a plain external one): header dict rows.

    Comment lines starting with '#' are skipped. Numeric-looking cells are
    converted to float; integers stay exact through float when small.
    """
    rows = []
    header = None
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        cells = line.split(",")
        if header is None:
            header = cells
            continue
        row = {}
        for key, cell in zip(header, cells):
            try:
                row[key] = float(cell)
            except ValueError:
                row[key] = cell
        rows.append(row)
    if header is None:
        raise ValueError("CSV has no header row")
    return header, rows
