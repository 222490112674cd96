"""Result serialization: run configuration, hashed CSV tables, binary dumps, JSON reports."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

BIN_MAGIC = b"LLAB"


@dataclass
class RunConfig:
    """Configuration of one driver invocation. Unknown keys are rejected on load."""

    experiment: str = "check"
    gamma: float = 0.0
    gammas: tuple[float, ...] = (-2.0, 0.0, 1.0)
    V: float = 6.0
    N: int = 12
    dx: int = 2
    K: int = 2
    eps: tuple[float, ...] = (0.4, 0.28, 0.2, 0.14, 0.1)
    T: float = 1.0
    dt: float | None = None
    dt_max: float = 0.01
    c_dt: float = 0.1
    scheme: str = "etd2"
    eta: float = 0.1
    delta: float = 0.05
    alpha: tuple[float, float, float] | None = None
    K_weight: float = 1.0
    R: float = 20.0
    Rbar: float = 10.0
    out: str = "runs"
    seed: int = 0
    amplitude: float = 0.05
    samples: int = 100

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown configuration keys: {unknown}")
        kw = dict(data)
        for key in ("gammas", "eps", "alpha"):
            if kw.get(key) is not None:
                kw[key] = tuple(float(x) for x in kw[key])
        return cls(**kw)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def updated(self, **changes: Any) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return self.from_dict({**self.as_dict(), **changes})

    def as_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for key in ("gammas", "eps", "alpha"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    def canonical_json(self) -> str:
        """Sorted compact JSON of the run parameters; the output directory is not a parameter."""
        d = self.as_dict()
        d.pop("out")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv(path: str | os.PathLike, columns: Sequence[str], rows: Iterable[Sequence[Any]],
              config: RunConfig) -> Path:
    """CSV with a '# config_sha256=' header line; floats written with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_sha256={config.hash()}", ",".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row of length {len(row)} for {len(columns)} columns")
        lines.append(",".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path: str | os.PathLike) -> tuple[str, list[str], np.ndarray]:
    """Return (config hash, column names, float array)."""
    lines = Path(path).read_text().splitlines()
    if not lines[0].startswith("# config_sha256="):
        raise ValueError("missing config hash header")
    cols = lines[1].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:]]) if len(lines) > 2 else np.zeros((0, len(cols)))
    return lines[0].split("=", 1)[1], cols, data


def write_bin(path: str | os.PathLike, array: np.ndarray, config: RunConfig, meta: dict | None = None) -> Path:
    """Little-endian dump: magic, uint32 header length, JSON header, raw array bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(array)
    dtype = arr.dtype.newbyteorder("<")
    arr = arr.astype(dtype, copy=False)
    header = json.dumps({"dtype": dtype.str, "shape": list(arr.shape), "config_sha256": config.hash(),
                         "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(arr.tobytes())
    return path


def read_bin(path: str | os.PathLike) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != BIN_MAGIC:
            raise ValueError("not a landaulab binary dump")
        (size,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(size))
        data = np.frombuffer(fh.read(), dtype=np.dtype(header["dtype"]))
    return data.reshape(header["shape"]), header


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def write_report(path: str | os.PathLike, report: dict, config: RunConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"config": config.as_dict(), "config_sha256": config.hash(), **_jsonable(report)}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def set_threads() -> int | None:
    """Honour LANDAULAB_THREADS by limiting BLAS pools when threadpoolctl is present."""
    val = os.environ.get("LANDAULAB_THREADS")
    if not val:
        return None
    n = int(val)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return n
    threadpool_limits(n)
    return n


@dataclass
class Verdict:
    """One checked quantity against its threshold."""

    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""
    extra: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: value={self.value:.4g} threshold={self.threshold:.4g} {self.detail}".rstrip()
