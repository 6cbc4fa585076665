"""
Model files: a magic line, a one-line JSON manifest, then a little-endian
float32 blob holding every layer's tensors in manifest order.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import torch

from config.settings import MODEL_MAGIC, MODEL_SCHEMA_VERSION, VERSION
from core.network import Network
from utils.error_handler import (
    BlobLengthError,
    ChecksumMismatchError,
    ModelFormatError,
    SchemaVersionError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _encode_blob(net: Network) -> bytes:
    arrays = [tensor.detach().cpu().numpy().astype('<f4').ravel() for tensor in net.blob_tensors()]
    if not arrays:
        return b''
    return np.concatenate(arrays).tobytes()


def build_manifest(net: Network, blob: bytes) -> Dict[str, Any]:
    return {
        'schema_version': MODEL_SCHEMA_VERSION,
        'producer': VERSION,
        'task': net.task,
        'input_shape': list(net.input_shape),
        'n_outputs': net.n_outputs,
        'layers': net.descriptors(),
        'dtype': 'float32-le',
        'blob_length': len(blob),
        'sha256': hashlib.sha256(blob).hexdigest(),
    }


def save_model(net: Network, path: PathLike) -> Dict[str, Any]:
    """
    Write a network to disk.

    Returns:
        the manifest that was written
    """
    blob = _encode_blob(net)
    manifest = build_manifest(net, blob)
    with open(path, 'wb') as f:
        f.write(f"{MODEL_MAGIC}\n".encode('ascii'))
        f.write(json.dumps(manifest, sort_keys=True).encode('utf-8') + b'\n')
        f.write(blob)
    logger.info(f"Saved model with {len(manifest['layers'])} layers ({len(blob)} blob bytes) to {path}")
    return manifest


def _split_file(raw: bytes, path: PathLike):
    magic_end = raw.find(b'\n')
    if magic_end < 0 or raw[:magic_end].decode('ascii', errors='replace') != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file (missing {MODEL_MAGIC} header)")
    manifest_end = raw.find(b'\n', magic_end + 1)
    if manifest_end < 0:
        raise ModelFormatError(f"{path}: manifest line is not terminated")
    try:
        manifest = json.loads(raw[magic_end + 1:manifest_end].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"{path}: manifest is not valid JSON: {e}") from e
    return manifest, raw[manifest_end + 1:]


def load_model(path: PathLike) -> Network:
    """
    Read a network written by save_model.

    Raises:
        SchemaVersionError: unknown schema version
        BlobLengthError: blob shorter or longer than declared, or than the layers need
        ChecksumMismatchError: blob bytes do not match the manifest digest
        ShapeMismatchError: layer descriptors do not chain
    """
    with open(path, 'rb') as f:
        raw = f.read()
    manifest, blob = _split_file(raw, path)

    version = manifest.get('schema_version')
    if version != MODEL_SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: schema version {version}, expected {MODEL_SCHEMA_VERSION}")
    if len(blob) != manifest.get('blob_length'):
        raise BlobLengthError(
            f"{path}: blob holds {len(blob)} bytes, manifest declares {manifest.get('blob_length')}"
        )
    if hashlib.sha256(blob).hexdigest() != manifest.get('sha256'):
        raise ChecksumMismatchError(f"{path}: blob checksum mismatch")

    net = Network.from_descriptors(manifest['layers'], manifest['input_shape'],
                                   task=manifest.get('task', 'classification'),
                                   n_outputs=manifest.get('n_outputs'))
    values = np.frombuffer(blob, dtype='<f4')
    targets = net.blob_tensors()
    needed = sum(t.numel() for t in targets)
    if needed != values.size:
        raise BlobLengthError(f"{path}: layers need {needed} values, blob holds {values.size}")

    offset = 0
    dtype = torch.get_default_dtype()
    for layer in net.layers:
        tensors: List[torch.Tensor] = []
        for target in layer.blob_tensors():
            chunk = values[offset:offset + target.numel()]
            tensors.append(torch.from_numpy(chunk.astype(np.float64)).to(dtype))
            offset += target.numel()
        if tensors:
            layer.load_blob_tensors(tensors)
    logger.info(f"Loaded model from {path}: {len(net.layers)} layers, {net.n_outputs} outputs")
    return net
