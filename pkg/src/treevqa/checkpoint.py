"""Binary checkpoint format.

Layout: magic ``STCG1``, a length-prefixed JSON header (config, word
vocabulary, answer labels), then each parameter sorted by name as
name / trainable flag / shape / float32 little-endian values. Values are
down-cast to 32-bit on save and up-cast back to the 64-bit compute type
on load. Writes go to a temp file first and are renamed into place, so a
crash never leaves a partial checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .answer_head import AnswerSpace
from .config import ModelConfig
from .model import Model

__all__ = ["CheckpointError", "MAGIC", "save_model", "load_model"]

MAGIC = b"STCG1"


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


def save_model(model: Model, path) -> None:
    header = {
        "config": model.config.to_dict(),
        "word_vocab": list(model.word_vocab),
        "word_trainable": model.word_trainable,
        "answer_labels": list(model.space.labels),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            params = list(model.store.items())
            fh.write(struct.pack("<I", len(params)))
            for name, node in params:
                encoded = name.encode("utf-8")
                arr = node.value.array
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<B", 1 if node.trainable else 0))
                fh.write(struct.pack("<B", arr.ndim))
                for dim in arr.shape:
                    fh.write(struct.pack("<I", dim))
                fh.write(arr.astype("<f4").tobytes(order="C"))
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint file")
    return buf


def load_model(path) -> Model:
    """Rebuild a model from a checkpoint, verifying magic and shapes."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a recognized checkpoint (bad magic)")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            header = json.loads(_read_exact(fh, blob_len).decode("utf-8"))
            config = ModelConfig.from_dict(header["config"])
            word_vocab = list(header["word_vocab"])
            word_trainable = bool(header["word_trainable"])
            space = AnswerSpace(header["answer_labels"])
        except (KeyError, ValueError) as err:
            raise CheckpointError(f"{path}: bad header: {err}") from None

        model = Model(config, word_vocab, space, word_trainable=word_trainable)
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        expected = dict(model.store.items())
        seen = set()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (trainable,) = struct.unpack("<B", _read_exact(fh, 1))
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0]
                          for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, size * 4)
            if name not in expected:
                raise CheckpointError(f"{path}: unexpected parameter {name!r}")
            node = expected[name]
            if node.value.shape != shape:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {shape}, "
                    f"model expects {node.value.shape}")
            node.value.array[...] = np.frombuffer(raw, dtype="<f4").reshape(shape)
            node.trainable = bool(trainable)
            seen.add(name)
        missing = set(expected) - seen
        if missing:
            raise CheckpointError(f"{path}: missing parameters {sorted(missing)[:3]}")
    return model
