"""Checkpoint files: a self-describing container for a policy bundle.

Layout, all little-endian:

    8 bytes   magic  b"QPCKPT01"
    8 bytes   uint64 manifest length in bytes
    N bytes   manifest, UTF-8 JSON
    M bytes   parameter blob, float32 arrays packed back to back

The manifest records the phase tag, every parameter's name/shape/offset,
the full configuration echo with its hash, the rng seed record, and the
sha256 of the blob. Loading verifies the checksum and rebuilds networks
from the embedded configuration, so a checkpoint is reproducible without
the file that configured the original run.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from . import config as config_mod
from . import nets, rl

MAGIC = b"QPCKPT01"
FORMAT_VERSION = 1

_HEADER_BYTES = len(MAGIC) + 8


class CheckpointError(Exception):
    """Checkpoint cannot be used (wrong phase, parameter mismatch, ...)."""


class CorruptCheckpoint(CheckpointError):
    """File structure or checksum is broken."""


def save_bundle(path, bundle: rl.PolicyBundle, run_cfg: config_mod.RunConfig,
                rng_state: dict | None = None) -> dict:
    """Write the bundle; returns the manifest that was stored."""
    state = bundle.state()
    params = []
    offset = 0
    chunks = []
    for name, arr in state.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        params.append({"name": name, "shape": list(arr.shape),
                       "offset": offset, "size": int(data.size)})
        chunks.append(data.tobytes())
        offset += data.size
    blob = b"".join(chunks)
    cfg_dict = run_cfg.to_dict()
    manifest = {
        "format": FORMAT_VERSION,
        "phase": bundle.phase,
        "config": cfg_dict,
        "config_hash": config_mod.config_hash(cfg_dict),
        "rng_state": rng_state if rng_state is not None
        else {"seed": cfg_dict["rl"]["seed"]},
        "params": params,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    payload = json.dumps(manifest, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(payload).to_bytes(8, "little"))
        fh.write(payload)
        fh.write(blob)
    return manifest


def _read(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e}") from e
    if len(raw) < _HEADER_BYTES or raw[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint("not a checkpoint file (bad magic)")
    n = int.from_bytes(raw[len(MAGIC):_HEADER_BYTES], "little")
    if _HEADER_BYTES + n > len(raw):
        raise CorruptCheckpoint("truncated manifest")
    try:
        manifest = json.loads(raw[_HEADER_BYTES:_HEADER_BYTES + n])
    except json.JSONDecodeError as e:
        raise CorruptCheckpoint(f"manifest is not valid JSON: {e}") from e
    if manifest.get("format") != FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported format {manifest.get('format')!r}")
    return manifest, raw[_HEADER_BYTES + n:]


def read_manifest(path, verify: bool = False) -> dict:
    """Manifest only; verify=True also checks the blob checksum."""
    manifest, blob = _read(path)
    if verify and hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CorruptCheckpoint("parameter blob checksum mismatch")
    return manifest


def load_bundle(path):
    """Rebuild the bundle from a checkpoint; returns (bundle, manifest)."""
    manifest, blob = _read(path)
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CorruptCheckpoint("parameter blob checksum mismatch")
    try:
        run_cfg = config_mod.RunConfig.from_dict(manifest["config"])
    except config_mod.ConfigError as e:
        raise CorruptCheckpoint(f"embedded config invalid: {e}") from e
    try:
        bundle = rl.make_bundle(run_cfg.rl, manifest["phase"],
                                np.random.default_rng(0))
    except ValueError as e:
        raise CorruptCheckpoint(str(e)) from e
    flat = np.frombuffer(blob, dtype="<f4")
    arrays = {}
    for p in manifest["params"]:
        end = p["offset"] + p["size"]
        if end > flat.size:
            raise CorruptCheckpoint(f"parameter {p['name']} overruns the blob")
        try:
            arrays[p["name"]] = flat[p["offset"]:end].reshape(p["shape"])
        except ValueError as e:
            raise CorruptCheckpoint(f"parameter {p['name']}: {e}") from e
    try:
        nets.load_state(bundle.nets(), arrays)
    except (KeyError, ValueError) as e:
        raise CheckpointError(str(e)) from e
    return bundle, manifest
