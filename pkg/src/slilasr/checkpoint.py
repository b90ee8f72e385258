"""Versioned, checksummed model checkpoints.

Layout (integers little-endian)::

    magic        8 bytes   b"SLILCKPT"
    version      uint32
    header_len   uint64
    header       JSON (sorted keys, compact): stage, config, vocab, extra,
                 and a table of {name, shape, offset} for every array
    blob         float64 arrays, concatenated in table order
    digest       32 bytes  SHA-256 of everything above

Identical models and metadata give byte-identical files.
"""
import hashlib
import json
import os
import struct

import numpy as np

MAGIC = b"SLILCKPT"
VERSION = 1
STAGES = ("lid", "asr")


class CheckpointError(ValueError):
    pass


def encode_checkpoint(stage, config, state, vocab=None, extra=None):
    if stage not in STAGES:
        raise CheckpointError(f"unknown stage {stage!r}")
    table, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {"version": VERSION, "stage": stage, "config": config, "vocab": vocab,
              "extra": extra or {}, "params": table}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<IQ", VERSION, len(head)) + head + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(buf, stage=None):
    """Returns ``(header, state)``; verifies checksum, version and (optionally) stage."""
    buf = bytes(buf)
    fixed = len(MAGIC) + 12
    if len(buf) < fixed + 32 or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or too short)")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    version, head_len = struct.unpack("<IQ", buf[len(MAGIC):fixed])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(body[fixed:fixed + head_len])
    if stage is not None and header["stage"] != stage:
        raise CheckpointError(f"expected a {stage} checkpoint, found stage {header['stage']!r}")
    blob = body[fixed + head_len:]
    state = {}
    for entry in header["params"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=start).reshape(entry["shape"])
        state[entry["name"]] = arr.astype(np.float64)
    return header, state


def save_checkpoint(path, stage, config, state, vocab=None, extra=None, overwrite=False):
    data = encode_checkpoint(stage, config, state, vocab, extra)
    with open(path, "wb" if overwrite else "xb") as fh:
        fh.write(data)
    return path


def load_checkpoint(path, stage=None):
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), stage)


def state_hash(state):
    """SHA-256 over sorted names, shapes and float64 bytes of a state dict."""
    h = hashlib.sha256()
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        h.update(name.encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def model_hash(model):
    return state_hash(model.state_dict())


# --------------------------------------------------------------------------
# model-level helpers
# --------------------------------------------------------------------------

def save_lid(path, model, overwrite=False):
    return save_checkpoint(path, "lid", model.config.to_dict(), model.state_dict(),
                           overwrite=overwrite)


def load_lid(path):
    from .lid import LidConfig, LidModel

    header, state = load_checkpoint(path, "lid")
    model = LidModel(LidConfig(**header["config"]))
    model.load_state_dict(state)
    model.eval()
    return model


def save_asr(path, model, vocab, lid_hash=None, overwrite=False):
    extra = {"lid_hash": lid_hash} if lid_hash else {}
    return save_checkpoint(path, "asr", model.config.to_dict(), model.state_dict(),
                           vocab=list(vocab), extra=extra, overwrite=overwrite)


def load_asr(path):
    """Returns ``(model, vocab tokens, extra)``."""
    from .asr import AsrConfig, AsrModel

    header, state = load_checkpoint(path, "asr")
    model = AsrModel(AsrConfig(**header["config"]))
    model.load_state_dict(state)
    model.eval()
    return model, header["vocab"], header["extra"]
