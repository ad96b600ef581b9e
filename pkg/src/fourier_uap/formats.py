"""On-disk formats: CSPT tensors, 8-bit PGM/PPM images, network JSON, CSV grids.

CSPT layout (little-endian)::

    b"CSPT" | u32 version (=1) | u32 channels | u32 n | channels*n*n float64

Every writer goes through :func:`atomic_write` (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .conv import ConvLayer, Network
from .errors import (
    BadMagicError,
    FormatError,
    InvalidHeaderError,
    TruncatedPayloadError,
    VersionMismatchError,
)

TENSOR_MAGIC = b"CSPT"
TENSOR_VERSION = 1
_TENSOR_HEADER = struct.Struct("<4sIII")


def atomic_write(path, data: bytes | str):
    path = os.fspath(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- tensors ---------------------------------------------------------------

def tensor_bytes(x) -> bytes:
    x = np.asarray(x, dtype="<f8")
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != x.shape[2] or x.shape[0] == 0:
        raise ValueError(f"expected (C, N, N) tensor, got shape {x.shape}")
    c, n, _ = x.shape
    return _TENSOR_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, c, n) + np.ascontiguousarray(x).tobytes()


def parse_tensor(data: bytes) -> np.ndarray:
    if len(data) < _TENSOR_HEADER.size:
        if data[:4] != TENSOR_MAGIC[: len(data[:4])]:
            raise BadMagicError("not a CSPT tensor file")
        raise TruncatedPayloadError("file shorter than the CSPT header")
    magic, version, c, n = _TENSOR_HEADER.unpack_from(data)
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != TENSOR_VERSION:
        raise VersionMismatchError(f"unsupported CSPT version {version}")
    if c == 0 or n == 0:
        raise InvalidHeaderError(f"invalid dimensions channels={c} n={n}")
    expected = 8 * c * n * n
    payload = data[_TENSOR_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, header needs {expected}")
    if len(payload) > expected:
        raise InvalidHeaderError(f"{len(payload) - expected} trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f8").reshape(c, n, n).astype(np.float64)


def write_tensor(path, x):
    atomic_write(path, tensor_bytes(x))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_tensor(fh.read())


# -- images ----------------------------------------------------------------

def _tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("image header ended early")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def parse_image(data: bytes) -> np.ndarray:
    """P5/P6 bytes -> ``(C, H, W)`` floats in ``[0, 1]`` (C is 1 or 3)."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise BadMagicError(f"expected P5 or P6 image, got {magic!r}")
    try:
        tokens, offset = _tokens(data, 4)
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"malformed image header: {exc}") from exc
    if maxval != 255:
        raise FormatError(f"only 8-bit images (maxval 255) are supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise InvalidHeaderError(f"invalid image size {width}x{height}")
    channels = 1 if magic == b"P5" else 3
    size = width * height * channels
    raster = data[offset:offset + size]
    if len(raster) < size:
        raise TruncatedPayloadError(f"image raster has {len(raster)} bytes, expected {size}")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return np.moveaxis(img, -1, 0).astype(np.float64) / 255.0


def image_bytes(x) -> bytes:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[0] not in (1, 3):
        raise ValueError(f"images need 1 or 3 channels, got shape {x.shape}")
    c, h, w = x.shape
    raster = np.round(255 * np.clip(x, 0.0, 1.0)).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    return header + np.moveaxis(raster, 0, -1).tobytes()


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_image(fh.read())


def write_image(path, x):
    atomic_write(path, image_bytes(x))


def write_gray_bytes(path, raster: np.ndarray):
    """Write an already-quantized ``uint8`` grid as P5."""
    raster = np.asarray(raster, dtype=np.uint8)
    h, w = raster.shape
    atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + raster.tobytes())


def render_grid(path, values, vmax=None, centered=False):
    """Linear PGM rendering: ``round(255 * v / vmax)``, ``vmax`` defaults to max."""
    values = np.asarray(values, dtype=float)
    if centered:
        values = np.fft.fftshift(values)
    top = float(values.max()) if vmax is None else float(vmax)
    scaled = values / top if top > 0 else np.zeros_like(values)
    write_gray_bytes(path, np.round(255 * np.clip(scaled, 0.0, 1.0)))


def load_any_image(path) -> np.ndarray:
    """CSPT tensors or PGM/PPM images, sniffed by magic bytes."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == TENSOR_MAGIC:
        return parse_tensor(data)
    return parse_image(data)


# -- networks --------------------------------------------------------------

class NetworkFormatError(FormatError):
    pass


def _field(obj, key, where, kind=None):
    if key not in obj:
        raise NetworkFormatError(f"{where}: missing field {key!r}")
    value = obj[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is int:
        raise NetworkFormatError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def network_from_dict(doc) -> Network:
    if not isinstance(doc, dict):
        raise NetworkFormatError("network document must be a JSON object")
    layers_doc = _field(doc, "layers", "network", list)
    layers = []
    for idx, ld in enumerate(layers_doc):
        where = f"layers[{idx}]"
        if not isinstance(ld, dict):
            raise NetworkFormatError(f"{where}: expected an object")
        out = _field(ld, "out", where, int)
        cin = _field(ld, "in", where, int)
        k = _field(ld, "k", where, int)
        stride = ld.get("stride", 1)
        weights = _field(ld, "weights", where, list)
        if min(out, cin, k) < 1 or not isinstance(stride, int) or stride < 1:
            raise NetworkFormatError(f"{where}: dimensions and stride must be positive integers")
        expected = out * cin * k * k
        if len(weights) != expected:
            raise NetworkFormatError(
                f"{where}.weights: expected {expected} values (out*in*k*k), got {len(weights)}"
            )
        try:
            w = np.asarray(weights, dtype=float).reshape(out, cin, k, k)
        except (TypeError, ValueError) as exc:
            raise NetworkFormatError(f"{where}.weights: {exc}") from exc
        scales = ld.get("norm_scales")
        if scales is not None:
            if not isinstance(scales, list) or len(scales) != out:
                raise NetworkFormatError(f"{where}.norm_scales: expected {out} values")
            scales = np.asarray(scales, dtype=float)
        try:
            layers.append(ConvLayer(w, stride=stride, scale=scales))
        except ValueError as exc:
            raise NetworkFormatError(f"{where}: {exc}") from exc
    skip = doc.get("skip", False)
    if not isinstance(skip, bool):
        raise NetworkFormatError(f"network.skip: expected true/false, got {skip!r}")
    try:
        return Network(tuple(layers), skip=skip)
    except ValueError as exc:
        raise NetworkFormatError(f"network: {exc}") from exc


def network_to_dict(net: Network, seed=None) -> dict:
    layers = []
    for layer in net.layers:
        kh, kw = layer.kernel_shape
        if kh != kw:
            raise ValueError("network files store square kernels only")
        d = {"out": layer.out_channels, "in": layer.in_channels, "k": kh,
             "stride": layer.stride, "weights": layer.weights.ravel().tolist()}
        if layer.scale is not None:
            d["norm_scales"] = layer.scale.tolist()
        layers.append(d)
    return {"layers": layers, "skip": net.skip, "seed": seed}


def parse_network(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return network_from_dict(doc)


def read_network(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())


def write_network(path, net: Network, seed=None):
    atomic_write(path, json.dumps(network_to_dict(net, seed), indent=1) + "\n")


# -- CSV grids -------------------------------------------------------------

def table_csv(columns, rows, meta: dict) -> str:
    """``# key=value`` provenance lines, a column header, then the rows."""
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append(",".join(columns))
    lines.extend(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def grid_csv(values, meta: dict, value_name: str = "value") -> str:
    """Grid as ``i,j,<value_name>`` rows in row-major order."""
    values = np.asarray(values, dtype=float)
    n0, n1 = values.shape
    rows = ((i, j, float(values[i, j])) for i in range(n0) for j in range(n1))
    return table_csv(("i", "j", value_name), rows, meta)


def read_grid_csv(path):
    """Inverse of :func:`grid_csv`; returns ``(values, meta)``."""
    meta, rows = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
            elif line[0].isdigit():
                i, j, v = line.split(",")
                rows.append((int(i), int(j), float(v)))
    n0 = max(r[0] for r in rows) + 1
    n1 = max(r[1] for r in rows) + 1
    values = np.zeros((n0, n1))
    for i, j, v in rows:
        values[i, j] = v
    return values, meta
