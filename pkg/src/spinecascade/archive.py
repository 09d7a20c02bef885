"""Versioned, checksummed serialization of trained models.

Layout: magic, format version, a JSON header describing both cascades and an
array index, the raw array payload, and a trailing SHA-256 over header+payload.
Serialization is byte-stable: identical models produce identical archives, and
a loaded model reproduces the original's inference outputs bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .cascade import CascadeModel, StageRegressor
from .imaging import PatchSpec
from .network import EncoderConfig, StageNet
from .pipeline import FullModel, PreprocessConfig
from .shapes import NormalizedShape, ShapeKind, TransitionMatrix

MAGIC = b"SCAR"
FORMAT_VERSION = 1


class ArchiveError(RuntimeError):
    """Malformed or unreadable model archive."""


class ArchiveVersionError(ArchiveError):
    """Archive format version is not supported."""


class ArchiveChecksumError(ArchiveError):
    """Archive payload does not match its checksum."""


def _encoder_meta(cfg: EncoderConfig) -> dict:
    return {
        "in_h": cfg.in_h,
        "in_w": cfg.in_w,
        "stem_channels": cfg.stem_channels,
        "stem_kernel": cfg.stem_kernel,
        "stem_stride": cfg.stem_stride,
        "blocks": [list(b) for b in cfg.blocks],
        "feature_dim": cfg.feature_dim,
        "norm": cfg.norm,
    }


def _encoder_from_meta(meta: dict) -> EncoderConfig:
    return EncoderConfig(
        in_h=meta["in_h"],
        in_w=meta["in_w"],
        stem_channels=meta["stem_channels"],
        stem_kernel=meta["stem_kernel"],
        stem_stride=meta["stem_stride"],
        blocks=tuple(tuple(b) for b in meta["blocks"]),
        feature_dim=meta["feature_dim"],
        norm=meta["norm"],
    )


class _ArrayStore:
    def __init__(self):
        self.index: list[dict] = []
        self.chunks: list[bytes] = []
        self.offset = 0

    def add(self, name: str, array: np.ndarray) -> None:
        array = np.ascontiguousarray(array)
        dtype = array.dtype.newbyteorder("<")
        data = array.astype(dtype, copy=False).tobytes()
        self.index.append(
            {
                "name": name,
                "dtype": dtype.str,
                "shape": list(array.shape),
                "offset": self.offset,
                "nbytes": len(data),
            }
        )
        self.chunks.append(data)
        self.offset += len(data)


def _dump_cascade(name: str, model: CascadeModel, store: _ArrayStore) -> dict:
    store.add(f"{name}/mean", model.mean.points)
    stages_meta = []
    for i, stage in enumerate(model.stages):
        prefix = f"{name}/s{i}"
        if stage.transition is not None:
            store.add(f"{prefix}/transition_rows", stage.transition.rows)
            store.add(f"{prefix}/transition_eigs", stage.transition.eigenvalues)
        state = stage.net.state_dict()
        for key, tensor in state.items():
            store.add(f"{prefix}/net/{key}", tensor.detach().numpy())
        stages_meta.append(
            {
                "use_pca": stage.transition is not None,
                "out_dim": stage.net.out_dim,
                "patch_spec": [
                    stage.patch_spec.crop_h,
                    stage.patch_spec.crop_w,
                    stage.patch_spec.out_h,
                    stage.patch_spec.out_w,
                ],
                "encoder": _encoder_meta(stage.net.encoder.config),
                "state_keys": list(state.keys()),
            }
        )
    return {
        "kind": model.kind.name,
        "geometry": model.geometry,
        "stages": stages_meta,
    }


def save_model(path, model: FullModel, config_snapshot: dict | None = None) -> None:
    """Serialize a full two-step model to a checksummed archive."""
    store = _ArrayStore()
    header = {
        "seed": model.seed,
        "preprocess": {
            "clahe_clip": model.preprocess.clahe_clip,
            "clahe_tiles": list(model.preprocess.clahe_tiles),
            "resize_height": model.preprocess.resize_height,
        },
        "center": _dump_cascade("center", model.center_model, store),
        "corner": _dump_cascade("corner", model.corner_model, store),
        "config_snapshot": config_snapshot or {},
    }
    header["arrays"] = store.index
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(store.chunks)
    body = header_bytes + payload
    blob = (
        MAGIC
        + struct.pack("<I", FORMAT_VERSION)
        + struct.pack("<Q", len(header_bytes))
        + body
        + hashlib.sha256(body).digest()
    )
    Path(path).write_bytes(blob)


def _load_cascade(name: str, meta: dict, arrays: dict[str, np.ndarray]) -> CascadeModel:
    kind = ShapeKind[meta["kind"]]
    mean = NormalizedShape(arrays[f"{name}/mean"], kind)
    stages = []
    for i, smeta in enumerate(meta["stages"]):
        prefix = f"{name}/s{i}"
        transition = None
        if smeta["use_pca"]:
            transition = TransitionMatrix(
                arrays[f"{prefix}/transition_rows"], arrays[f"{prefix}/transition_eigs"]
            )
        enc_cfg = _encoder_from_meta(smeta["encoder"])
        net = StageNet(enc_cfg, num_patches=kind.num_points, out_dim=smeta["out_dim"])
        state = {
            key: torch.from_numpy(arrays[f"{prefix}/net/{key}"].copy())
            for key in smeta["state_keys"]
        }
        net.load_state_dict(state)
        net.eval()
        ch, cw, oh, ow = smeta["patch_spec"]
        stages.append(
            StageRegressor(
                net=net,
                transition=transition,
                patch_spec=PatchSpec(crop_h=ch, crop_w=cw, out_h=oh, out_w=ow),
            )
        )
    return CascadeModel(mean=mean, stages=stages, geometry=dict(meta["geometry"]))


def load_model(path) -> FullModel:
    """Load an archive written by :func:`save_model`, verifying its checksum."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 + 4 + 8 + 32 or blob[:4] != MAGIC:
        raise ArchiveError(f"{path}: not a model archive")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != FORMAT_VERSION:
        raise ArchiveVersionError(
            f"{path}: format version {version} not supported (expected {FORMAT_VERSION})"
        )
    header_len = struct.unpack_from("<Q", blob, 8)[0]
    body = blob[16:-32]
    if hashlib.sha256(body).digest() != blob[-32:]:
        raise ArchiveChecksumError(f"{path}: checksum mismatch, archive corrupted")
    if header_len > len(body):
        raise ArchiveError(f"{path}: truncated header")
    try:
        header = json.loads(body[:header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: unreadable header: {exc}") from exc

    payload = body[header_len:]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise ArchiveError(f"{path}: array {entry['name']} out of bounds")
        dtype = np.dtype(entry["dtype"])
        arr = np.frombuffer(payload, dtype=dtype, count=n // dtype.itemsize, offset=start)
        arr = arr.reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))

    pp = header["preprocess"]
    return FullModel(
        center_model=_load_cascade("center", header["center"], arrays),
        corner_model=_load_cascade("corner", header["corner"], arrays),
        preprocess=PreprocessConfig(
            clahe_clip=pp["clahe_clip"],
            clahe_tiles=tuple(pp["clahe_tiles"]),
            resize_height=pp["resize_height"],
        ),
        seed=header["seed"],
    )
