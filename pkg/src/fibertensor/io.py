"""MetaImage (.mhd + .raw) and headerless RAW volume I/O.

Only uncompressed, single-channel 3D images are handled. Element spacing
is stored in micrometres; headers written by other tools in millimetres
must be read with ``spacing_unit="mm"``.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MhdFormatError, SizeMismatchError, UnsupportedElementTypeError
from .volume import Mask, Volume, from_flat, to_flat

log = logging.getLogger(__name__)

# MetaImage names and short aliases -> numpy base type
ELEMENT_TYPES = {
    "MET_UCHAR": "u1",
    "MET_USHORT": "u2",
    "MET_SHORT": "i2",
    "MET_FLOAT": "f4",
}
_ALIASES = {
    "u8": "MET_UCHAR", "uint8": "MET_UCHAR",
    "u16": "MET_USHORT", "uint16": "MET_USHORT",
    "i16": "MET_SHORT", "int16": "MET_SHORT",
    "f32": "MET_FLOAT", "float32": "MET_FLOAT",
}
SPACING_UNITS = {"um": 1.0, "mm": 1000.0}
_MSB_KEYS = ("byteordermsb", "binarydatabyteordermsb", "elementbyteordermsb")

# keys we understand but do not need
_IGNORED_KEYS = {
    "objecttype", "binarydata", "offset", "position", "origin", "transformmatrix",
    "rotation", "orientation", "centerofrotation", "anatomicalorientation",
    "elementsize", "comment", "objectsubtype", "transformtype", "name",
    "elementmin", "elementmax", "headersize",
}


def element_type_name(element_type: str) -> str:
    """Normalize ``'u8'``, ``'uint16'``, ``'MET_FLOAT'`` ... to the MetaImage name."""
    key = str(element_type)
    if key.upper() in ELEMENT_TYPES:
        return key.upper()
    if key.lower() in _ALIASES:
        return _ALIASES[key.lower()]
    raise UnsupportedElementTypeError("ElementType", f"unsupported element type {element_type!r}")


def _dtype(element_type: str, msb: bool) -> np.dtype:
    return np.dtype((">" if msb else "<") + ELEMENT_TYPES[element_type_name(element_type)])


@dataclass
class MhdHeader:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    element_type: str
    data_file: str
    msb: bool = False
    header_bytes: int = 0  # offset of a LOCAL payload inside the header file

    @property
    def dtype(self) -> np.dtype:
        return _dtype(self.element_type, self.msb)

    @property
    def nbytes(self) -> int:
        d = self.dims
        return d[0] * d[1] * d[2] * self.dtype.itemsize


def _parse_bool(field, value):
    v = value.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise MhdFormatError(field, f"expected True/False, got {value!r}")


def _parse_numbers(field, value, kind, count=3):
    parts = value.split()
    if len(parts) != count:
        raise MhdFormatError(field, f"expected {count} values, got {len(parts)} ({value!r})")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError:
        raise MhdFormatError(field, f"cannot parse {value!r}") from None


def read_mhd_header(path, spacing_unit: str = "um") -> MhdHeader:
    path = Path(path)
    if spacing_unit not in SPACING_UNITS:
        raise ValueError(f"spacing unit must be one of {sorted(SPACING_UNITS)}, got {spacing_unit!r}")
    with open(path, "rb") as fh:
        raw = fh.read()
    fields: dict[str, str] = {}
    pos = 0
    data_file = None
    while pos < len(raw):
        end = raw.find(b"\n", pos)
        end = len(raw) if end < 0 else end + 1
        line = raw[pos:end].decode("latin-1").strip()
        pos = end
        if not line:
            continue
        if "=" not in line:
            raise MhdFormatError(line.split()[0], f"malformed header line {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        lkey = key.lower()
        if lkey == "elementdatafile":
            data_file = value
            break
        fields[lkey] = value
    if data_file is None:
        raise MhdFormatError("ElementDataFile", "missing")

    for key in fields:
        if key not in _IGNORED_KEYS and key not in (
            "ndims", "dimsize", "elementspacing", "elementtype", *_MSB_KEYS,
            "compresseddata", "compresseddatasize",
            "elementnumberofchannels",
        ):
            log.warning("ignoring unknown MetaImage key %r in %s", key, path)

    if "ndims" in fields:
        try:
            ndims = int(fields["ndims"])
        except ValueError:
            raise MhdFormatError("NDims", f"cannot parse {fields['ndims']!r}") from None
        if ndims != 3:
            raise MhdFormatError("NDims", f"only 3D images are supported, got {ndims}")
    if "compresseddata" in fields and _parse_bool("CompressedData", fields["compresseddata"]):
        raise MhdFormatError("CompressedData", "compressed payloads are not supported")
    if int(fields.get("elementnumberofchannels", "1")) != 1:
        raise UnsupportedElementTypeError("ElementNumberOfChannels", "only single-channel images")
    if "dimsize" not in fields:
        raise MhdFormatError("DimSize", "missing")
    dims = _parse_numbers("DimSize", fields["dimsize"], int)
    if any(d <= 0 for d in dims):
        raise MhdFormatError("DimSize", f"dimensions must be positive, got {dims}")
    spacing = (1.0, 1.0, 1.0)
    if "elementspacing" in fields:
        spacing = _parse_numbers("ElementSpacing", fields["elementspacing"], float)
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise MhdFormatError("ElementSpacing", f"spacing must be positive, got {spacing}")
    factor = SPACING_UNITS[spacing_unit]
    spacing = tuple(s * factor for s in spacing)
    if "elementtype" not in fields:
        raise MhdFormatError("ElementType", "missing")
    etype = fields["elementtype"].strip().upper()
    if etype not in ELEMENT_TYPES:
        raise UnsupportedElementTypeError("ElementType", f"unsupported element type {etype!r}")
    msb = False
    for key in _MSB_KEYS:
        if key in fields:
            msb = _parse_bool("ByteOrderMSB", fields[key])
    return MhdHeader(dims, spacing, etype, data_file, msb, header_bytes=pos)


def _read_payload(path: Path, dims, dtype: np.dtype, offset: int = 0) -> np.ndarray:
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    found = os.path.getsize(path) - offset
    if found != expected:
        raise SizeMismatchError(str(path), expected, found)
    flat = np.fromfile(path, dtype=dtype, count=expected // dtype.itemsize, offset=offset)
    return from_flat(flat, dims)


def read_mhd(path, spacing_unit: str = "um") -> Volume:
    """Load a MetaImage volume, promoting the payload to float32."""
    path = Path(path)
    hdr = read_mhd_header(path, spacing_unit)
    if hdr.data_file.upper() == "LOCAL":
        data = _read_payload(path, hdr.dims, hdr.dtype, hdr.header_bytes)
    else:
        data_path = path.parent / hdr.data_file
        if not data_path.exists():
            raise FileNotFoundError(f"{data_path}: data file named in ElementDataFile not found")
        data = _read_payload(data_path, hdr.dims, hdr.dtype)
    return Volume.adopt(data.astype(np.float32, order="F"), hdr.spacing)


def read_raw(path, dims, element_type="u8", byte_order: str = "little",
             spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Load a headerless x-fastest volume."""
    path = Path(path)
    if byte_order not in ("little", "big"):
        raise ValueError(f"byte order must be 'little' or 'big', got {byte_order!r}")
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    dims = tuple(int(d) for d in dims)
    dtype = _dtype(element_type, byte_order == "big")
    data = _read_payload(path, dims, dtype)
    return Volume.adopt(data.astype(np.float32, order="F"), spacing)


def _header_text(dims, spacing, element_type, data_file) -> str:
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        "DimSize = " + " ".join(str(int(d)) for d in dims),
        "ElementSpacing = " + " ".join(repr(float(s)) for s in spacing),
        f"ElementType = {element_type}",
        f"ElementDataFile = {data_file}",
    ]
    return "\n".join(lines) + "\n"


def _write(array: np.ndarray, spacing, path, element_type: str) -> Path:
    path = Path(path)
    etype = element_type_name(element_type)
    dtype = _dtype(etype, False)
    if path.suffix.lower() != ".mhd":
        path = path.with_suffix(".mhd")
    raw_path = path.with_suffix(".raw")
    if dtype.kind in "ui":
        info = np.iinfo(dtype)
        if array.min() < info.min or array.max() > info.max:
            raise ValueError(f"values outside the {etype} range [{info.min}, {info.max}]")
        payload = np.rint(array).astype(dtype)
    else:
        payload = array.astype(dtype)
    try:
        to_flat(payload).tofile(raw_path)
        path.write_text(_header_text(array.shape, spacing, etype, raw_path.name))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {exc.filename or path}: {exc.strerror}") from exc
    return path


def write_mhd(volume: Volume, path, element_type: str = "MET_FLOAT") -> Path:
    """Write header ``path`` and sibling ``.raw`` payload; returns the header path."""
    return _write(volume.data, volume.spacing, path, element_type)


def write_mask(mask: Mask, path, spacing=(1.0, 1.0, 1.0)) -> Path:
    """Masks go to disk as unsigned bytes holding 0/1."""
    return _write(mask.bits.astype(np.uint8), spacing, path, "MET_UCHAR")


def write_orientation_field(field, prefix) -> list[Path]:
    """Export a field as three float32 component volumes plus a u8 validity mask."""
    prefix = Path(prefix)
    paths = []
    for k, axis in enumerate("xyz"):
        comp = np.asfortranarray(field.directions[..., k], dtype=np.float32)
        paths.append(_write(comp, field.spacing, f"{prefix}_{axis}.mhd", "MET_FLOAT"))
    paths.append(write_mask(Mask(field.valid), f"{prefix}_valid.mhd", field.spacing))
    return paths
