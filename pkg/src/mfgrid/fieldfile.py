"""Binary container for grid fields.

Layout (all integers little-endian):

    bytes 0..3   magic "MFGF"
    bytes 4..7   format version, u32 (currently 1)
    byte  8      kind, u8: 0 centered, 1 t-staggered (rho), 2 x-staggered
                 (mx), 3 y-staggered (my), 4 spatial, 5 metric cells
    bytes 9..24  four u32 dims: the stored array's leading extents
                 (d0, d1, d2) and the spatial dimension d; spatial and
                 metric fields use d2 = 1
    bytes 25..   payload, float64 little-endian, i_x fastest, then i_y,
                 then i_t; metric cells store g_xx, g_xy, g_yy per cell
                 (component index fastest), tripling the payload when d=2

Round trips are bit-exact; that property is load-bearing for the
determinism checks, so readers never normalize or convert values.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .grid import GridSpec, StateField

__all__ = ["KIND_CODES", "write_field", "read_field", "write_state",
           "read_state", "save_agm_state", "load_agm_state"]

MAGIC = b"MFGF"
VERSION = 1
KIND_CODES = {"centered": 0, "rho": 1, "mx": 2, "my": 3, "spatial": 4,
              "metric": 5}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}
_HEADER = struct.Struct("<4sIBIIII")


def _infer_d(array: np.ndarray, kind: str) -> int:
    if kind == "metric":
        return 1 if array.ndim == 2 else 2
    if kind == "my":
        return 2
    return 1 if array.shape[1] == 1 else 2


def write_field(path, array: np.ndarray, kind: str):
    """Write one array as a field file; kind names follow KIND_CODES."""
    if kind not in KIND_CODES:
        raise FormatError(f"unknown field kind {kind!r}")
    a = np.asarray(array, dtype=np.float64)
    d = _infer_d(a, kind)
    if kind in ("spatial", "metric"):
        if a.ndim not in (2, 3) or (kind == "spatial" and a.ndim != 2):
            raise FormatError(f"{kind} field must be 2-d, got shape {a.shape}")
        dims = (a.shape[0], a.shape[1], 1, d)
        payload = (np.moveaxis(a, 2, 0) if a.ndim == 3 else a)
    else:
        if a.ndim != 3:
            raise FormatError(f"{kind} field must be 3-d, got shape {a.shape}")
        dims = (a.shape[0], a.shape[1], a.shape[2], d)
        payload = a
    header = _HEADER.pack(MAGIC, VERSION, KIND_CODES[kind], *dims)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(payload.ravel(order="F"),
                                      dtype="<f8").tobytes())


def read_field(path) -> tuple[np.ndarray, str, int]:
    """Read a field file; returns (array, kind, d)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, code, d0, d1, d2, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in CODE_KINDS:
        raise FormatError(f"{path}: unknown kind code {code}")
    if d not in (1, 2):
        raise FormatError(f"{path}: spatial dimension {d} out of range")
    kind = CODE_KINDS[code]
    count = d0 * d1 * d2
    if kind == "metric" and d == 2:
        count *= 3
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * count:
        raise FormatError(f"{path}: payload holds {len(payload) // 8} floats, "
                          f"dims imply {count}")
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if kind == "metric" and d == 2:
        array = np.moveaxis(data.reshape((3, d0, d1), order="F"), 0, 2)
    elif kind in ("spatial", "metric"):
        array = data.reshape((d0, d1), order="F")
    else:
        array = data.reshape((d0, d1, d2), order="F")
    return np.ascontiguousarray(array), kind, d


def write_state(directory, stem: str, eta: StateField):
    """Write a StateField as <stem>_rho/_mx/_my field files; returns paths."""
    directory = Path(directory)
    paths = {}
    for name, arr in eta.items():
        p = directory / f"{stem}_{name}.mfgf"
        write_field(p, arr, name)
        paths[name] = p
    return paths


def read_state(directory, stem: str, grid: GridSpec) -> StateField:
    """Read a StateField written by write_state."""
    directory = Path(directory)
    rho, kind, _ = read_field(directory / f"{stem}_rho.mfgf")
    if kind != "rho":
        raise FormatError(f"{stem}_rho.mfgf holds kind {kind!r}")
    mx, kind, _ = read_field(directory / f"{stem}_mx.mfgf")
    if kind != "mx":
        raise FormatError(f"{stem}_mx.mfgf holds kind {kind!r}")
    my = None
    if grid.d == 2:
        my, kind, _ = read_field(directory / f"{stem}_my.mfgf")
        if kind != "my":
            raise FormatError(f"{stem}_my.mfgf holds kind {kind!r}")
    eta = StateField(rho, mx, my)
    eta.validate(grid)
    return eta


def _write_array_blob(fh, name: str, array: np.ndarray):
    buf = io.BytesIO()
    np.save(buf, np.asarray(array), allow_pickle=False)
    payload = buf.getvalue()
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def save_agm_state(path, state, grid: GridSpec):
    """Checkpoint an AGM state.

    The container is a flat sequence of named .npy blobs rather than a zip
    archive, so the bytes carry no timestamps and identical states produce
    identical files. Wall time is reporting, not state, and is not saved.
    """
    arrays: dict[str, np.ndarray] = {
        "k_u": np.int64(state.k_u),
        "xi": state.xi,
        "tau_l": np.float64(state.tau_l),
        "n_obs": np.int64(len(state.warm)),
        "best_score": np.float64(state.best_score),
    }
    if state.best_xi is not None:
        arrays["best_xi"] = state.best_xi
        arrays["best_error"] = np.float64(
            state.best_error if state.best_error is not None else np.nan)
    for n, eta in enumerate(state.warm):
        arrays[f"warm{n}_rho"] = eta.rho
        arrays[f"warm{n}_mx"] = eta.mx
        if eta.my is not None:
            arrays[f"warm{n}_my"] = eta.my
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            _write_array_blob(fh, name, arrays[name])


def load_agm_state(path, grid: GridSpec):
    """Inverse of save_agm_state; returns a bilevel.HypergradState."""
    from .bilevel import HypergradState

    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        (count,) = struct.unpack("<I", fh.read(4))
        z: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (size,) = struct.unpack("<Q", fh.read(8))
            z[name] = np.load(io.BytesIO(fh.read(size)), allow_pickle=False)

    n_obs = int(z["n_obs"])
    warm = []
    for n in range(n_obs):
        my = z.get(f"warm{n}_my") if grid.d == 2 else None
        warm.append(StateField(z[f"warm{n}_rho"], z[f"warm{n}_mx"], my))

    best_error = None
    if "best_error" in z and not np.isnan(float(z["best_error"])):
        best_error = float(z["best_error"])
    return HypergradState(
        k_u=int(z["k_u"]), xi=np.array(z["xi"]), warm=warm,
        tau_l=float(z["tau_l"]),
        best_xi=np.array(z["best_xi"]) if "best_xi" in z else None,
        best_score=float(z["best_score"]), best_error=best_error)
