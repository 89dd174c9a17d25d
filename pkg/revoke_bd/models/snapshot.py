"""
Parameter snapshots and checkpoint files.

A checkpoint is two files sharing a stem: `<stem>.json` (manifest with names,
shapes, dtypes, byte offsets, phase tag) and `<stem>.bin` (raw little-endian
payload in manifest order). Buffers such as BatchNorm statistics are stored
alongside parameters so a restore reproduces forward outputs bit-exactly.
"""

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from ..errors import ContractError, CorruptDataError

PHASES = ('clean', 'backdoored', 'unlearned', 'generator', 'victim', 'revoked')
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True, eq=False)
class ParameterSnapshot:
    """Immutable copy of a model's state (parameters and buffers, in order)."""
    tensors: Tuple[Tuple[str, torch.Tensor], ...]
    phase: str = 'clean'
    step: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.tensors]

    @property
    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tuple(t.shape) for name, t in self.tensors}

    def get(self, name: str) -> torch.Tensor:
        for key, tensor in self.tensors:
            if key == name:
                return tensor
        raise KeyError(name)

    def state_dict(self) -> 'OrderedDict[str, torch.Tensor]':
        return OrderedDict((name, t.clone()) for name, t in self.tensors)


def snapshot(model: nn.Module, phase: str = 'clean', step: int = 0, **metadata) -> ParameterSnapshot:
    if phase not in PHASES:
        raise ContractError(f"Unknown snapshot phase '{phase}'", {'allowed': PHASES})
    tensors = tuple((name, t.detach().cpu().clone()) for name, t in model.state_dict().items())
    return ParameterSnapshot(tensors=tensors, phase=phase, step=step, metadata=dict(metadata))


def restore(model: nn.Module, snap: ParameterSnapshot):
    """Load a snapshot into a model of the same architecture."""
    current = model.state_dict()
    if list(current.keys()) != snap.names:
        raise ContractError("Snapshot does not match model architecture",
                            {'missing': sorted(set(current) - set(snap.names)),
                             'unexpected': sorted(set(snap.names) - set(current))})
    for name, tensor in snap.tensors:
        if tuple(current[name].shape) != tuple(tensor.shape):
            raise ContractError(f"Shape mismatch for '{name}'",
                                {'model': list(current[name].shape), 'snapshot': list(tensor.shape)})
    with torch.no_grad():
        for name, tensor in snap.tensors:
            current[name].copy_(tensor)


def differing_tensors(a: ParameterSnapshot, b: ParameterSnapshot) -> List[str]:
    """Names whose tensors are not bitwise equal."""
    if a.names != b.names:
        raise ContractError("Snapshots have different layouts")
    return [name for (name, x), (_, y) in zip(a.tensors, b.tensors) if not torch.equal(x, y)]


def _little_endian(array: np.ndarray) -> np.ndarray:
    return array.astype(array.dtype.newbyteorder('<'), copy=False)


def save_checkpoint(snap: ParameterSnapshot, stem: Union[str, Path],
                    extra: Dict[str, Any] = None) -> Path:
    """Write <stem>.json + <stem>.bin; returns the manifest path."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(stem.with_suffix('.bin'), 'wb') as payload:
        for name, tensor in snap.tensors:
            array = _little_endian(tensor.contiguous().numpy())
            data = array.tobytes()
            entries.append({'name': name, 'shape': list(array.shape), 'dtype': array.dtype.str,
                            'offset': offset, 'nbytes': len(data)})
            payload.write(data)
            offset += len(data)

    manifest = {
        'format': CHECKPOINT_FORMAT,
        'phase': snap.phase,
        'step': snap.step,
        'metadata': snap.metadata,
        'byteorder': 'little',
        'tensors': entries,
        **(extra or {}),
    }
    manifest_path = stem.with_suffix('.json')
    with open(manifest_path, 'w') as f:
        json.dump(manifest, f, indent=2)
    return manifest_path


def load_checkpoint(stem: Union[str, Path]) -> Tuple[ParameterSnapshot, Dict[str, Any]]:
    """Read a checkpoint written by save_checkpoint; returns (snapshot, manifest)."""
    stem = Path(stem)
    with open(stem.with_suffix('.json'), 'r') as f:
        manifest = json.load(f)
    buffer = stem.with_suffix('.bin').read_bytes()

    tensors = []
    for entry in manifest['tensors']:
        end = entry['offset'] + entry['nbytes']
        if end > len(buffer):
            raise CorruptDataError(f"Checkpoint payload truncated at '{entry['name']}'",
                                   {'expected': end, 'size': len(buffer)})
        dtype = np.dtype(entry['dtype'])
        array = np.frombuffer(buffer, dtype=dtype, count=entry['nbytes'] // max(dtype.itemsize, 1),
                              offset=entry['offset']).reshape(entry['shape'])
        native = array.astype(dtype.newbyteorder('='))
        tensors.append((entry['name'], torch.from_numpy(native.copy())))

    snap = ParameterSnapshot(tensors=tuple(tensors), phase=manifest['phase'],
                             step=int(manifest.get('step', 0)), metadata=manifest.get('metadata', {}))
    return snap, manifest
