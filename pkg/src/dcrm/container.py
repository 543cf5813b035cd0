"""Binary dataset container.

Layout (little-endian)::

    b"DCRM0001"
    u32 case_id, u64 seed, u32 N, u32 C_in, u32 DOF, u8 has_outputs
    C_in x (f64 mean, f64 std)
    f64 inputs  [N, C_in, DOF, DOF]   row-major
    f64 outputs [N, 1, DOF, DOF]      only when has_outputs
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .grid import CaseId, Dataset, NormStats

MAGIC = b"DCRM0001"
_HEADER = struct.Struct("<IQIIIB")


class ContainerError(ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class HeaderMismatchError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


def dataset_to_bytes(d: Dataset) -> bytes:
    n, c, dof, _ = d.inputs.shape
    parts = [
        MAGIC,
        _HEADER.pack(int(d.case_id), int(d.seed), n, c, dof, int(d.has_labels)),
    ]
    stats = np.empty((c, 2), dtype="<f8")
    stats[:, 0] = d.norm_stats.mean
    stats[:, 1] = d.norm_stats.std
    parts.append(stats.tobytes())
    parts.append(np.ascontiguousarray(d.inputs, dtype="<f8").tobytes())
    if d.has_labels:
        parts.append(np.ascontiguousarray(d.outputs, dtype="<f8").tobytes())
    return b"".join(parts)


def dataset_from_bytes(buf: bytes) -> Dataset:
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise BadMagicError("bad magic: not a dataset container")
    pos = len(MAGIC)
    if len(buf) < pos + _HEADER.size:
        raise TruncatedPayloadError("truncated payload: header incomplete")
    case_id, seed, n, c, dof, has_outputs = _HEADER.unpack_from(buf, pos)
    pos += _HEADER.size
    if case_id not in {int(k) for k in CaseId} or c not in (1, 2) or dof < 3 or has_outputs > 1:
        raise HeaderMismatchError(
            f"header mismatch: case_id={case_id} C_in={c} DOF={dof} has_outputs={has_outputs}"
        )
    field_count = n * c * dof * dof
    expected = pos + 16 * c + 8 * field_count + (8 * n * dof * dof if has_outputs else 0)
    if len(buf) < expected:
        raise TruncatedPayloadError(f"truncated payload: expected {expected} bytes, got {len(buf)}")
    if len(buf) > expected:
        raise HeaderMismatchError(f"header mismatch: {len(buf) - expected} trailing bytes")

    stats = np.frombuffer(buf, dtype="<f8", count=2 * c, offset=pos).reshape(c, 2)
    pos += 16 * c
    inputs = np.frombuffer(buf, dtype="<f8", count=field_count, offset=pos).reshape(n, c, dof, dof)
    pos += 8 * field_count
    outputs = None
    if has_outputs:
        outputs = np.frombuffer(buf, dtype="<f8", count=n * dof * dof, offset=pos).reshape(n, 1, dof, dof)
    return Dataset(
        inputs=inputs.astype(np.float64),
        outputs=None if outputs is None else outputs.astype(np.float64),
        norm_stats=NormStats(stats[:, 0].copy(), stats[:, 1].copy()),
        seed=seed,
        case_id=CaseId(case_id),
    )


def write_dataset(d: Dataset, path) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(dataset_to_bytes(d))


def read_dataset(path) -> Dataset:
    with open(os.fspath(path), "rb") as fh:
        return dataset_from_bytes(fh.read())
