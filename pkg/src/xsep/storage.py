"""File formats: PGM images and masks, CDLM matrix files, INI configuration
and dictionary manifests.

Images are plain 2-D float64 arrays with a nominal [0, 255] range. A CDLM
matrix file is a 24-byte header (``b"CDLM"``, uint32 version 1, uint64 rows,
uint64 cols, all little-endian) followed by ``rows * cols`` little-endian
float64 values in row-major order.
"""

from __future__ import annotations

import configparser
import struct
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError

MAGIC = b"CDLM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
MATRIX_SUFFIXES = (".cdlm",)
PGM_SUFFIXES = (".pgm", ".pnm")
_WS = b" \t\n\r\v\f"


def as_image(img):
    """Validate and convert to a finite 2-D float64 array."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ArgumentError(f"an image must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ArgumentError("image contains non-finite pixels")
    return a


# -- CDLM matrices -----------------------------------------------------------

def encode_matrix(M) -> bytes:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M[None, :]
    if M.ndim != 2:
        raise ArgumentError(f"can only store 2-D matrices, got shape {M.shape}")
    rows, cols = M.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + np.ascontiguousarray(M, dtype="<f8").tobytes()


def decode_matrix(buf: bytes, path=None) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated matrix header", offset=len(buf), path=path)
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0, path=path)
    if version != VERSION:
        raise FormatError(f"unsupported matrix version {version}", offset=4, path=path)
    expected = rows * cols * 8
    payload = len(buf) - _HEADER.size
    if payload < expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, found {payload}",
                          offset=len(buf), path=path)
    if payload > expected:
        raise FormatError(f"{payload - expected} trailing bytes after payload",
                          offset=_HEADER.size + expected, path=path)
    return np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=_HEADER.size).astype(
        np.float64).reshape(rows, cols)


def write_matrix(M, path):
    Path(path).write_bytes(encode_matrix(M))


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes(), path)


# -- PGM ---------------------------------------------------------------------

def _tokens(buf, pos, count, path):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise FormatError("truncated PGM header", offset=pos, path=path)
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        tok = buf[start:pos]
        if not tok.isdigit():
            raise FormatError(f"expected an unsigned integer, found {tok[:16]!r}", offset=start, path=path)
        out.append(int(tok))
    return out, pos


def decode_pgm(buf: bytes, path=None):
    """Return ``(pixels, maxval)`` with raw integer sample values."""
    if len(buf) < 2 or buf[:1] != b"P" or buf[1:2] not in (b"2", b"5"):
        raise FormatError("not a P2/P5 PGM file", offset=0, path=path)
    binary = buf[1:2] == b"5"
    (width, height, maxval), pos = _tokens(buf, 2, 3, path)
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}", offset=pos, path=path)
    if not 1 <= maxval <= 65535:
        raise FormatError(f"unsupported maxval {maxval}", offset=pos, path=path)
    count = width * height
    if binary:
        if pos >= len(buf) or buf[pos] not in _WS:
            raise FormatError("missing whitespace after header", offset=pos, path=path)
        pos += 1
        size = 2 if maxval > 255 else 1
        if len(buf) - pos < count * size:
            raise FormatError(f"truncated raster: expected {count * size} bytes, found {len(buf) - pos}",
                              offset=len(buf), path=path)
        dtype = ">u2" if size == 2 else "u1"
        raw = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).astype(np.int64)
    else:
        values, _ = _tokens(buf, pos, count, path)
        raw = np.asarray(values, dtype=np.int64)
    if raw.max(initial=0) > maxval:
        raise FormatError(f"sample exceeds maxval {maxval}", path=path)
    return raw.reshape(height, width), maxval


def encode_pgm(img) -> bytes:
    """8-bit P5 bytes; values clamped to [0, 255] and rounded half-up."""
    a = as_image(img)
    q = np.floor(np.clip(a, 0.0, 255.0) + 0.5).astype(np.uint8)
    h, w = q.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def _is_matrix_path(path):
    return Path(path).suffix.lower() in MATRIX_SUFFIXES


def read_image(path) -> np.ndarray:
    """Read a PGM (P2/P5, 8 or 16 bit) or a CDLM matrix file as an image.

    16-bit samples are rescaled by 255/65535 into the nominal 8-bit range.
    """
    buf = Path(path).read_bytes()
    if buf[:4] == MAGIC:
        return as_image(decode_matrix(buf, path))
    raw, maxval = decode_pgm(buf, path)
    img = raw.astype(np.float64)
    if maxval > 255:
        img *= 255.0 / 65535.0
    return img


def write_image(img, path):
    """Write ``img`` as 8-bit P5 PGM or, for ``.cdlm`` paths, as a lossless matrix."""
    path = Path(path)
    data = encode_matrix(as_image(img)) if _is_matrix_path(path) else encode_pgm(img)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write image: {exc.strerror}", str(path)) from exc


def read_mask(path) -> np.ndarray:
    """Binary crack mask from a PGM: 0 marks a crack pixel, anything else is valid."""
    buf = Path(path).read_bytes()
    raw, _ = decode_pgm(buf, path)
    return (raw != 0).astype(np.float64)


# -- INI configuration and dictionary manifests -------------------------------

def read_config(path) -> dict:
    """Parse an INI file into ``{section: {key: value}}`` (values as strings)."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise FormatError(f"invalid configuration: {exc}", path=path) from exc
    return {s: dict(parser[s]) for s in parser.sections()}


def save_dictionaries(triple, directory, meta: dict, stem="dict") -> Path:
    """Write the three dictionaries as CDLM files plus ``<stem>.ini``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {"psi_c": f"{stem}_psi_c.cdlm", "phi_c": f"{stem}_phi_c.cdlm", "phi": f"{stem}_phi.cdlm"}
    for key, name in files.items():
        write_matrix(getattr(triple, key), directory / name)
    parser = configparser.ConfigParser()
    info = {"n": triple.n, "gamma": triple.gamma, "d": triple.d}
    info.update(meta)
    parser["dictionary"] = {k: str(v).lower() if isinstance(v, bool) else str(v) for k, v in info.items()}
    parser["files"] = files
    manifest = directory / f"{stem}.ini"
    with open(manifest, "w", encoding="utf-8") as fh:
        parser.write(fh)
    return manifest


def load_dictionaries(manifest):
    """Load a dictionary triple and its metadata from a manifest file."""
    from .coupled_dl import DictionaryTriple

    manifest = Path(manifest)
    cfg = read_config(manifest)
    if "dictionary" not in cfg or "files" not in cfg:
        raise FormatError("manifest needs [dictionary] and [files] sections", path=manifest)
    files = cfg["files"]
    try:
        mats = {k: read_matrix(manifest.parent / files[k]) for k in ("psi_c", "phi_c", "phi")}
    except KeyError as exc:
        raise FormatError(f"manifest lacks file entry {exc}", path=manifest) from exc
    meta = cfg["dictionary"]
    triple = DictionaryTriple(mats["psi_c"], mats["phi_c"], mats["phi"])
    if int(meta.get("n", triple.n)) != triple.n:
        raise FormatError("manifest patch dimension disagrees with matrices", path=manifest)
    return triple, meta
