"""Named-tensor parameter store and its on-disk format.

File layout: magic "TSCNW1", a 4-byte little-endian header length, a JSON
header listing {name, shape, dtype: "f32", offset, length} per tensor
(offset/length in bytes, relative to the start of the payload region),
the concatenated raw little-endian float32 blobs, and a trailing CRC32
of the payload. Storage is always float32; in-memory tensors may be
float64 for verification paths and are cast on save.
"""

import json
import struct
import zlib
from collections import OrderedDict

import numpy as np

from .errors import WeightCorruptError, WeightMagicError, WeightShapeError

MAGIC = b"TSCNW1"


class ParamStore:
    """Ordered mapping of unique tensor names to dense arrays."""

    def __init__(self):
        self._tensors: OrderedDict[str, np.ndarray] = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._tensors:
            raise ValueError(f"duplicate tensor name: {name!r}")
        self._tensors[name] = value
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def param_count(self) -> int:
        """Total element count over all tensors."""
        return sum(int(t.size) for t in self._tensors.values())


class ParamBuilder:
    """Creates or binds tensors while a network is being wired up.

    With `store=None` a fresh store is populated from the rng (init mode);
    with an existing store each requested tensor is fetched and its shape
    checked (bind mode). Running the same wiring code through both modes
    keeps the declared shapes and the stored shapes in lockstep.
    """

    def __init__(self, store: ParamStore | None = None, seed: int | None = None,
                 dtype=np.float32):
        self.init_mode = store is None
        self.store = store if store is not None else ParamStore()
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed) if self.init_mode else None

    def tensor(self, name: str, shape: tuple[int, ...], init: str = "xavier",
               fan: tuple[int, int] | None = None) -> np.ndarray:
        if not self.init_mode:
            if name not in self.store:
                raise WeightShapeError(f"missing tensor {name!r}")
            t = self.store[name]
            if tuple(t.shape) != tuple(shape):
                raise WeightShapeError(
                    f"tensor {name!r} has shape {tuple(t.shape)}, expected {tuple(shape)}"
                )
            return t
        if init == "xavier":
            fan_in, fan_out = fan if fan is not None else _default_fan(shape)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            value = self.rng.uniform(-limit, limit, size=shape)
        elif init == "zeros":
            value = np.zeros(shape)
        elif init == "ones":
            value = np.ones(shape)
        elif init == "prelu":
            value = np.full(shape, 0.25)
        else:
            raise ValueError(f"unknown init {init!r}")
        return self.store.add(name, value.astype(self.dtype))


def _default_fan(shape: tuple[int, ...]) -> tuple[int, int]:
    # Conv weights are (c_out, c_in, *kernel): fan counts kernel taps.
    if len(shape) >= 2:
        receptive = int(np.prod(shape[2:], dtype=np.int64)) if len(shape) > 2 else 1
        return shape[1] * receptive, shape[0] * receptive
    return shape[0], shape[0]


def param_count(store: ParamStore) -> int:
    return store.param_count()


def save_params(store: ParamStore, path) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, tensor in store.items():
        blob = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "dtype": "f32",
                "offset": offset,
                "length": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    header = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_params(path, dtype=np.float32) -> ParamStore:
    """Read a weight file back into a store; storage order is preserved."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(MAGIC) + 4 or not data.startswith(MAGIC):
        raise WeightMagicError(f"{path}: not a {MAGIC.decode()} weight file")
    pos = len(MAGIC)
    (header_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + header_len + 4 > len(data):
        raise WeightCorruptError(f"{path}: truncated header")
    try:
        entries = json.loads(data[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightCorruptError(f"{path}: unparsable header ({exc})") from exc
    pos += header_len
    payload = data[pos:-4]
    (crc_stored,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise WeightCorruptError(f"{path}: payload checksum mismatch")
    store = ParamStore()
    for entry in entries:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
            length = int(entry["length"])
            if entry["dtype"] != "f32":
                raise WeightCorruptError(
                    f"{path}: unsupported dtype {entry['dtype']!r} for {name!r}"
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise WeightCorruptError(f"{path}: malformed header entry ({exc})") from exc
        n_elems = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if length != 4 * n_elems or offset + length > len(payload):
            raise WeightCorruptError(
                f"{path}: tensor {name!r} payload out of bounds"
            )
        flat = np.frombuffer(payload, dtype="<f4", count=n_elems, offset=offset)
        store.add(name, flat.reshape(shape).astype(dtype))
    return store
