"""Binary file formats: tensors and packed-layer artifacts.

Tensor format (.tensor):
    bytes 0:12   magic b"BWLATENSOR\\x00\\x00"
    bytes 12:16  u32 version (1)
    u32 rank, then rank u64 dims, then little-endian f32 payload (row-major)

Artifact format (.bwla): 8-byte magic b"BWLALAYR", u32 version (1), then
sections, each [u32 id][u64 payload length][payload]:
    1 DIMS    u64 n, u64 m, u8 axis (0 row / 1 column), u8 has_rotation,
              u8 has_residual, u8 reserved
    2 SIGNS   flat sign bitstream, row-major, little-endian bit order,
              ceil(n*m/8) bytes (set bit = +1)
    3 SCALES  f32 scale[channels], f32 offset[channels], f32 row_shift[n]
    4 ROT     u32 n1, u32 n2, f32 R1 (n1*n1), f32 R2 (n2*n2)
    5 CONFIG  canonical JSON (sorted keys), UTF-8
    6 RESID   u32 k, f32 A (n*k), f32 B_rot (k*m)

All integers little-endian. Unknown versions are rejected outright (no
silent migration); truncated or corrupt files fail with a diagnostic.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .binarize import BinarizedWeights, pack_signs
from .kernel import PackedLayer
from .kronecker import KroneckerDims, KroneckerRotation

TENSOR_MAGIC = b"BWLATENSOR\x00\x00"
TENSOR_VERSION = 1
LAYER_MAGIC = b"BWLALAYR"
LAYER_VERSION = 1

_SEC_DIMS = 1
_SEC_SIGNS = 2
_SEC_SCALES = 3
_SEC_ROT = 4
_SEC_CONFIG = 5
_SEC_RESID = 6


class FormatError(ValueError):
    """Raised for malformed, truncated, or wrong-version files."""


def save_tensor(path, array):
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise FormatError("tensor files hold rank-1 or rank-2 arrays")
    payload = arr.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", TENSOR_VERSION))
        fh.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            fh.write(struct.pack("<Q", d))
        fh.write(payload)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:12] != TENSOR_MAGIC:
        raise FormatError("not a tensor file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 12)
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    (rank,) = struct.unpack_from("<I", blob, 16)
    if rank not in (1, 2):
        raise FormatError(f"unsupported tensor rank {rank}")
    dims = struct.unpack_from(f"<{rank}Q", blob, 20)
    off = 20 + 8 * rank
    count = int(np.prod(dims))
    expected = off + 4 * count
    if len(blob) != expected:
        raise FormatError(f"tensor payload truncated ({len(blob)} != {expected} bytes)")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
    return data.astype(np.float64).reshape(dims)


def _flat_signs(bw: BinarizedWeights) -> bytes:
    n, m = bw.shape
    bits = np.unpackbits(bw.packed.view(np.uint8), axis=1, bitorder="little")[:, :m]
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def _signs_from_flat(blob: bytes, n: int, m: int) -> np.ndarray:
    expected = (n * m + 7) // 8
    if len(blob) != expected:
        raise FormatError(f"sign section has {len(blob)} bytes, expected {expected}")
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8), bitorder="little")[: n * m]
    return pack_signs(bits.reshape(n, m).astype(bool))


def save_layer(path, layer: PackedLayer, config: dict | None = None):
    n, m = layer.shape
    bw = layer.weights
    axis_code = 0 if bw.axis == "row" else 1
    sections: list[tuple[int, bytes]] = []
    sections.append((_SEC_DIMS, struct.pack(
        "<QQBBBB", n, m, axis_code,
        1 if layer.rotation is not None else 0,
        1 if layer.residual_left is not None else 0,
        0,
    )))
    sections.append((_SEC_SIGNS, _flat_signs(bw)))
    sections.append((_SEC_SCALES,
                     bw.scale.astype("<f4").tobytes()
                     + bw.offset.astype("<f4").tobytes()
                     + layer.row_shift.astype("<f4").tobytes()))
    if layer.rotation is not None:
        rot = layer.rotation
        sections.append((_SEC_ROT, struct.pack("<II", rot.dims.n1, rot.dims.n2)
                         + rot.R1.astype("<f4").tobytes()
                         + rot.R2.astype("<f4").tobytes()))
    if config is not None:
        sections.append((_SEC_CONFIG,
                         json.dumps(config, sort_keys=True).encode("utf-8")))
    if layer.residual_left is not None:
        k = layer.residual_left.shape[1]
        sections.append((_SEC_RESID, struct.pack("<I", k)
                         + layer.residual_left.astype("<f4").tobytes()
                         + layer.residual_right_rot.astype("<f4").tobytes()))
    with open(path, "wb") as fh:
        fh.write(LAYER_MAGIC)
        fh.write(struct.pack("<I", LAYER_VERSION))
        for sec_id, payload in sections:
            fh.write(struct.pack("<IQ", sec_id, len(payload)))
            fh.write(payload)


def load_layer(path) -> tuple[PackedLayer, dict | None]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != LAYER_MAGIC:
        raise FormatError("not a layer artifact (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != LAYER_VERSION:
        raise FormatError(f"unsupported artifact version {version}; "
                          "no migration path is provided")
    sections: dict[int, bytes] = {}
    off = 12
    while off < len(blob):
        if off + 12 > len(blob):
            raise FormatError("truncated section header")
        sec_id, length = struct.unpack_from("<IQ", blob, off)
        off += 12
        if off + length > len(blob):
            raise FormatError(f"section {sec_id} truncated")
        sections[sec_id] = blob[off:off + length]
        off += length

    if _SEC_DIMS not in sections or _SEC_SIGNS not in sections or _SEC_SCALES not in sections:
        raise FormatError("missing mandatory sections")
    n, m, axis_code, has_rot, has_resid, _ = struct.unpack("<QQBBBB", sections[_SEC_DIMS])
    axis = "row" if axis_code == 0 else "column"
    channels = n if axis == "row" else m

    packed = _signs_from_flat(sections[_SEC_SIGNS], n, m)
    scales_blob = sections[_SEC_SCALES]
    expected = 4 * (2 * channels + n)
    if len(scales_blob) != expected:
        raise FormatError("scale section has the wrong size")
    f = np.frombuffer(scales_blob, dtype="<f4")
    scale = f[:channels].astype(np.float64)
    offset = f[channels:2 * channels].astype(np.float64)
    row_shift = f[2 * channels:].astype(np.float64)
    bw = BinarizedWeights(packed=packed, scale=scale, offset=offset,
                          axis=axis, shape=(int(n), int(m)))

    rotation = None
    if has_rot:
        if _SEC_ROT not in sections:
            raise FormatError("rotation flagged but section missing")
        rb = sections[_SEC_ROT]
        n1, n2 = struct.unpack_from("<II", rb, 0)
        f = np.frombuffer(rb, dtype="<f4", offset=8)
        if f.size != n1 * n1 + n2 * n2:
            raise FormatError("rotation section has the wrong size")
        r1 = f[:n1 * n1].astype(np.float64).reshape(n1, n1)
        r2 = f[n1 * n1:].astype(np.float64).reshape(n2, n2)
        rotation = KroneckerRotation(dims=KroneckerDims(n1=n1, n2=n2), R1=r1, R2=r2)

    res_a = res_b = None
    if has_resid:
        if _SEC_RESID not in sections:
            raise FormatError("residual flagged but section missing")
        rb = sections[_SEC_RESID]
        (k,) = struct.unpack_from("<I", rb, 0)
        f = np.frombuffer(rb, dtype="<f4", offset=4)
        if f.size != n * k + k * m:
            raise FormatError("residual section has the wrong size")
        res_a = f[:n * k].astype(np.float64).reshape(n, k)
        res_b = f[n * k:].astype(np.float64).reshape(k, m)

    config = None
    if _SEC_CONFIG in sections:
        try:
            config = json.loads(sections[_SEC_CONFIG].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"config section corrupt: {exc}") from exc

    layer = PackedLayer(weights=bw, row_shift=row_shift, rotation=rotation,
                        residual_left=res_a, residual_right_rot=res_b)
    return layer, config
