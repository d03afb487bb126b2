"""File formats: NIfTI-1 volumes, raw displacement fields, CSV reports, PPM slices.

NIfTI support covers the uncompressed single-file variant (``.nii``) with
``uint8``, ``int16`` and ``float32`` payloads.  Orientation matrices are not
interpreted; spacing comes from ``pixdim`` and the origin from the
``qoffset`` fields.

Displacement fields use a small raw layout::

    offset  0  4 bytes  tag b"DFLD"
    offset  4  uint32   version (1)
    offset  8  uint32   nx, ny, nz
    offset 20  uint32   reserved (0)
    offset 24  float32  (ux, uy, uz) per voxel, x index fastest

All multi-byte values are little-endian.
"""

from __future__ import annotations

import csv
import io as stdio
import math
import os
import struct
from dataclasses import dataclass, fields

import numpy as np

from .exceptions import (
    BadMagicError,
    FormatError,
    ParameterError,
    TruncatedPayloadError,
    UnsupportedDatatypeError,
    UnsupportedVariantError,
)
from .volume import LabelMask, Volume
from .warp import DisplacementField

__all__ = [
    "read_nifti",
    "write_nifti",
    "read_field",
    "write_field",
    "ReportRow",
    "write_report",
    "read_report",
    "write_slice_image",
    "NIFTI_HEADER_SIZE",
    "NIFTI_VOX_OFFSET",
]

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]
_HEADER_LE = np.dtype(_HEADER_FIELDS).newbyteorder("<")

# NIfTI datatype code -> numpy scalar type
_DATATYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
_BITPIX = {2: 8, 4: 16, 16: 32}

_FIELD_TAG = b"DFLD"
_FIELD_VERSION = 1
_FIELD_HEADER = struct.Struct("<4s5I")


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def read_nifti(path, as_label=False):
    """Read an uncompressed single-file NIfTI-1 volume.

    Parameters
    ----------
    path : str or path-like
    as_label : bool
        Return a :class:`LabelMask`.  The payload must be integer-typed and
        contain only 0 and 1.

    Raises
    ------
    FormatError
        Subclasses name the failing part: :class:`BadMagicError`,
        :class:`UnsupportedVariantError`, :class:`UnsupportedDatatypeError`,
        :class:`TruncatedPayloadError`.
    ParameterError
        ``as_label`` was requested for a non-binary or float payload.
    """
    raw = _read_bytes(path)
    if len(raw) < NIFTI_HEADER_SIZE:
        raise TruncatedPayloadError(f"{path}: {len(raw)} bytes is shorter than a NIfTI-1 header",
                                    field="sizeof_hdr")
    (size_le,) = struct.unpack_from("<i", raw, 0)
    if size_le == NIFTI_HEADER_SIZE:
        dtype = _HEADER_LE
    elif struct.unpack_from(">i", raw, 0)[0] == NIFTI_HEADER_SIZE:
        dtype = _HEADER_LE.newbyteorder(">")
    else:
        raise FormatError(f"{path}: sizeof_hdr is {size_le}, expected 348", field="sizeof_hdr")
    hdr = np.frombuffer(raw, dtype=dtype, count=1)[0]

    magic = bytes(hdr["magic"]).ljust(4, b"\0")
    if magic == b"ni1\0":
        raise UnsupportedVariantError(f"{path}: detached-header NIfTI (ni1) is not supported",
                                      field="magic")
    if magic != b"n+1\0":
        raise BadMagicError(f"{path}: magic {magic!r} is not a NIfTI-1 single-file marker",
                            field="magic")

    dim = [int(d) for d in hdr["dim"]]
    ndim = dim[0]
    if not 3 <= ndim <= 7 or any(d != 1 for d in dim[4:ndim + 1]):
        raise FormatError(f"{path}: only 3-D volumes are supported, dim = {dim}", field="dim")
    dims = tuple(dim[1:4])
    if min(dims) < 1:
        raise FormatError(f"{path}: non-positive dimension in {dims}", field="dim")

    code = int(hdr["datatype"])
    if code not in _DATATYPES:
        raise UnsupportedDatatypeError(f"{path}: datatype code {code} is not supported", field="datatype")
    if int(hdr["bitpix"]) != _BITPIX[code]:
        raise FormatError(f"{path}: bitpix {int(hdr['bitpix'])} does not match datatype {code}",
                          field="bitpix")

    spacing = tuple(float(v) for v in hdr["pixdim"][1:4])
    if not all(math.isfinite(s) and s > 0 for s in spacing):
        raise FormatError(f"{path}: pixdim spacing {spacing} must be positive", field="pixdim")
    origin = (float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"]))
    if not all(math.isfinite(o) for o in origin):
        raise FormatError(f"{path}: qoffset origin {origin} is not finite", field="qoffset")

    offset = float(hdr["vox_offset"])
    if not math.isfinite(offset) or offset < NIFTI_VOX_OFFSET or offset != int(offset):
        raise FormatError(f"{path}: vox_offset {offset} is invalid", field="vox_offset")
    offset = int(offset)
    scalar = np.dtype(_DATATYPES[code]).newbyteorder(dtype.byteorder)
    count = dims[0] * dims[1] * dims[2]
    need = offset + count * scalar.itemsize
    if len(raw) < need:
        raise TruncatedPayloadError(f"{path}: payload needs {need} bytes, file has {len(raw)}",
                                    field="payload")
    values = np.frombuffer(raw, dtype=scalar, count=count, offset=offset).astype(scalar.newbyteorder("="))
    data = values.reshape(dims, order="F")

    if as_label:
        if scalar.kind == "f" or not np.all((data == 0) | (data == 1)):
            raise ParameterError(f"{path}: label volume must hold only the integer values 0 and 1")
        return LabelMask(data.astype(np.uint8), spacing, origin)

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if scalar.kind == "f":
        data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise FormatError(f"{path}: payload contains NaN or Inf", field="payload")
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data.astype(np.float64) * (slope if slope != 0.0 else 1.0) + inter
    return Volume(data, spacing, origin)


def write_nifti(obj, path):
    """Write a volume (``float32``) or mask (``uint8``) as a single-file NIfTI-1.

    The header is followed by a 4-byte empty extension block, so the payload
    starts at byte 352.
    """
    if isinstance(obj, LabelMask):
        code, payload = 2, obj.data.astype(np.uint8)
    elif isinstance(obj, Volume):
        code, payload = 16, obj.data.astype("<f4")
    else:
        raise ParameterError(f"cannot write {type(obj).__name__} as NIfTI")
    hdr = np.zeros((), dtype=_HEADER_LE)
    hdr["sizeof_hdr"] = NIFTI_HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *obj.dims, 1, 1, 1, 1]
    hdr["datatype"] = code
    hdr["bitpix"] = _BITPIX[code]
    hdr["pixdim"] = [1.0, *obj.spacing, 0.0, 0.0, 0.0, 0.0]
    hdr["vox_offset"] = NIFTI_VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["qform_code"] = 1
    hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = obj.origin
    hdr["magic"] = b"n+1\0"
    with open(path, "wb") as fh:
        fh.write(hdr.tobytes())
        fh.write(b"\0" * (NIFTI_VOX_OFFSET - NIFTI_HEADER_SIZE))
        fh.write(payload.ravel(order="F").tobytes())


def write_field(field, path):
    """Write a displacement field in the raw ``.dfield`` layout (float32)."""
    nx, ny, nz = field.dims
    vec = field.vectors.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_FIELD_HEADER.pack(_FIELD_TAG, _FIELD_VERSION, nx, ny, nz, 0))
        fh.write(vec.transpose(2, 1, 0, 3).tobytes())


def read_field(path):
    """Read a ``.dfield`` file written by :func:`write_field`."""
    raw = _read_bytes(path)
    if len(raw) < _FIELD_HEADER.size:
        raise TruncatedPayloadError(f"{path}: {len(raw)} bytes is shorter than the field header",
                                    field="header")
    tag, version, nx, ny, nz, _ = _FIELD_HEADER.unpack_from(raw, 0)
    if tag != _FIELD_TAG:
        raise BadMagicError(f"{path}: tag {tag!r} is not {_FIELD_TAG!r}", field="tag")
    if version != _FIELD_VERSION:
        raise UnsupportedVariantError(f"{path}: field version {version} is not supported", field="version")
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{path}: non-positive dims {(nx, ny, nz)}", field="dims")
    need = _FIELD_HEADER.size + 12 * nx * ny * nz
    if len(raw) != need:
        kind = TruncatedPayloadError if len(raw) < need else FormatError
        raise kind(f"{path}: payload size {len(raw) - _FIELD_HEADER.size} does not match dims "
                   f"{(nx, ny, nz)}", field="payload")
    vec = np.frombuffer(raw, dtype="<f4", offset=_FIELD_HEADER.size).reshape(nz, ny, nx, 3)
    vec = vec.transpose(2, 1, 0, 3).astype(np.float64)
    if not np.all(np.isfinite(vec)):
        raise FormatError(f"{path}: field contains NaN or Inf", field="payload")
    return DisplacementField(vec)


@dataclass(frozen=True)
class ReportRow:
    """One line of an evaluation report.

    Per-case rows have ``n_cases = 1`` and equal median/min/max.  Summary
    rows aggregate several cases by their median and report the min and max
    alongside it.
    """

    experiment: str
    combination: str
    n_cases: int
    dice_median: float
    dice_min: float
    dice_max: float
    jaccard_median: float
    jaccard_min: float
    jaccard_max: float
    localization_hits: int
    mi_bits: float = float("nan")


REPORT_COLUMNS = tuple(f.name for f in fields(ReportRow))


def _fmt(value):
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_report(rows, path):
    """Write report rows as CSV with a header line and LF line endings."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, name)) for name in REPORT_COLUMNS])


def read_report(path):
    """Parse a CSV produced by :func:`write_report` back into rows."""
    try:
        text = _read_bytes(path).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text ({exc.reason} at byte {exc.start})", field="encoding") from None
    reader = csv.reader(stdio.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty report", field="header") from None
    except csv.Error as exc:
        raise FormatError(f"{path}: {exc}", field="header") from None
    if tuple(header) != REPORT_COLUMNS:
        raise FormatError(f"{path}: unexpected header {header}", field="header")
    rows = []
    try:
        for line_no, values in enumerate(reader, start=2):
            if len(values) != len(REPORT_COLUMNS):
                raise FormatError(f"{path}: line {line_no} has {len(values)} columns", field="row")
            kwargs = {}
            try:
                for f, cell in zip(fields(ReportRow), values):
                    if f.type == "str":
                        kwargs[f.name] = cell
                    elif f.type == "int":
                        kwargs[f.name] = int(cell)
                    else:
                        kwargs[f.name] = float(cell) if cell else float("nan")
            except ValueError as exc:
                raise FormatError(f"{path}: line {line_no}: {exc}", field="row") from None
            rows.append(ReportRow(**kwargs))
    except csv.Error as exc:
        raise FormatError(f"{path}: {exc}", field="row") from None
    return rows


_TINTS = ((255, 0, 0), (0, 255, 0))


def write_slice_image(vol, axis, index, overlays=(), path=None):
    """Export one slice as a binary PPM (P6) with optional mask overlays.

    The slice is taken perpendicular to ``axis``; image rows follow the lower
    remaining axis.  Intensities are clipped to [0, 1] and scaled to 8 bits.
    Up to two masks are blended at 50 % with red and green respectively.

    Returns the ``(rows, cols, 3)`` uint8 array that was written.
    """
    if axis not in (0, 1, 2):
        raise ParameterError(f"axis must be 0, 1 or 2, got {axis}")
    if not 0 <= index < vol.dims[axis]:
        raise ParameterError(f"slice index {index} outside [0, {vol.dims[axis] - 1}] on axis {axis}")
    if len(overlays) > 2:
        raise ParameterError(f"at most two overlays are supported, got {len(overlays)}")
    gray = np.clip(np.take(vol.data.astype(np.float64), index, axis=axis), 0.0, 1.0)
    rgb = np.repeat(np.round(gray * 255.0)[..., None], 3, axis=-1)
    for mask, tint in zip(overlays, _TINTS):
        if mask.dims != vol.dims:
            raise ParameterError(f"overlay dims {mask.dims} differ from volume dims {vol.dims}")
        sel = np.take(mask.data, index, axis=axis).astype(bool)
        rgb[sel] = np.floor(0.5 * rgb[sel] + 0.5 * np.asarray(tint, dtype=float))
    img = rgb.astype(np.uint8)
    if path is not None:
        rows, cols = img.shape[:2]
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (cols, rows))
            fh.write(img.tobytes())
    return img


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
