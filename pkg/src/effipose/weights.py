"""Binary weight container: magic ``EPW1``, little-endian throughout.

Layout: magic (4 bytes) | version u32 | record count u32, then per record
name length u16 + UTF-8 name, dtype code u8 (0 = float32, 1 = float64),
rank u8, one u32 per dimension, and the raw row-major values. Record
order follows the model's parameter walk, so files written from the same
architecture are byte-comparable.
"""

import struct

import numpy as np

MAGIC = b"EPW1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def write_records(path, records):
    """Write an ordered mapping of name -> ndarray."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(records)))
        for name, array in records.items():
            array = np.asarray(array)
            if array.dtype not in _CODES:
                raise ValueError(f"{name}: only float32/float64 records supported, got {array.dtype}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", _CODES[array.dtype], array.ndim))
            fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
            fh.write(np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes())


def read_records(path):
    """Read a weight file back into an ordered dict of name -> ndarray."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a weight file (bad magic {blob[:4]!r})")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported weight file version {version}")
    offset = 12
    records = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, rank = struct.unpack_from("<BB", blob, offset)
        offset += 2
        if code not in _DTYPES:
            raise ValueError(f"{path}: record {name!r} has unknown dtype code {code}")
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        data = np.frombuffer(blob, dtype=dtype, count=max(1, int(np.prod(shape, dtype=np.int64))), offset=offset)
        offset += nbytes
        records[name] = data.reshape(shape).copy()
    return records


def save_weights(model, path, prefix=""):
    """Serialise every parameter (BN running statistics included)."""
    records = {f"{prefix}{name}": p.data for name, p in model.named_parameters()}
    write_records(path, records)


def load_weights(model, path, prefix="", transfer=False):
    """Load a weight file into a model.

    Strict mode (default) requires an exact name/shape match and raises
    naming every missing or unexpected record. With ``transfer=True``
    only matching names with matching shapes are loaded; returns the
    lists (loaded, skipped).
    """
    records = read_records(path)
    if prefix:
        # records outside the prefix belong to other sections (e.g. the
        # optimizer state in a checkpoint) and are not the model's business
        records = {n: v for n, v in records.items() if n.startswith(prefix)}
    wanted = {f"{prefix}{name}": (name, p) for name, p in model.named_parameters()}
    missing = [n for n in wanted if n not in records]
    unexpected = [n for n in records if n not in wanted]
    loaded, skipped = [], []
    if not transfer and (missing or unexpected):
        raise ValueError(
            "weight file does not match the model; "
            f"missing: {sorted(missing)}; unexpected: {sorted(unexpected)}")
    for full, (name, param) in wanted.items():
        if full not in records:
            skipped.append(name)
            continue
        value = records[full]
        if value.shape != param.data.shape:
            if transfer:
                skipped.append(name)
                continue
            raise ValueError(f"record {full!r}: shape {value.shape} does not match parameter {param.data.shape}")
        param.tensor.data = value.astype(param.data.dtype)
        param.tensor.grad = None
        loaded.append(name)
    return loaded, skipped


def load_into_model(model, path):
    """Strictly load either a bare weight file or a training checkpoint."""
    records = read_records(path)
    prefix = "model/" if any(n.startswith("model/") for n in records) else ""
    load_weights(model, path, prefix=prefix)
