"""On-disk formats.

Matrix container (`.ldsm`), all integers little-endian:

    bytes 0-5    magic b"LDSMAT"
    uint16       format version (1)
    uint16       ndim
    uint32       metadata length m
    uint64[ndim] shape
    m bytes      UTF-8 JSON metadata (provenance), keys sorted
    float64[]    payload, row-major

Model archive (`.ldsa`):

    bytes 0-5    magic b"LDSARC"
    uint16       format version (1)
    uint32       header length h
    h bytes      UTF-8 JSON header (see ARCHIVE_HEADER_SCHEMA)
    float64[]    one row-major block per entry of header["arrays"], in order

CSV files carry provenance as leading "# key: value" comment lines.
"""

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import pandas as pd

from src.em import FitReport
from src.errors import ConfigError, DataError
from src.params import Hyperparams, LdsParams

MATRIX_MAGIC = b"LDSMAT"
ARCHIVE_MAGIC = b"LDSARC"
MATRIX_FORMAT_VERSION = 1
ARCHIVE_FORMAT_VERSION = 1
_FLOAT = np.dtype("<f8")

ARCHIVE_HEADER_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": [
        "format_version",
        "p",
        "d",
        "T",
        "hyperparams",
        "objective_trace",
        "marginal_trace",
        "iterations_run",
        "converged",
        "provenance",
        "arrays",
    ],
    "properties": {
        "format_version": {"type": "integer", "minimum": 1},
        "p": {"type": "integer", "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "T": {"type": "integer", "minimum": 0},
        "hyperparams": {"type": ["object", "null"]},
        "objective_trace": {"type": "array", "items": {"type": "number"}},
        "marginal_trace": {"type": "array", "items": {"type": "number"}},
        "iterations_run": {"type": "integer", "minimum": 0},
        "converged": {"type": "boolean"},
        "provenance": {"type": "object"},
        "arrays": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "shape"],
                "properties": {
                    "name": {"type": "string"},
                    "shape": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                },
            },
        },
    },
}

_REQUIRED_ARRAYS = ("A", "C", "R_diag", "pi0")


def _metadata_bytes(metadata: dict[str, Any] | None) -> bytes:
    return json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_matrix(path: str | Path, array: np.ndarray, provenance: dict[str, Any] | None = None) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        save_csv_matrix(path, array, provenance)
        return
    array = np.ascontiguousarray(array, dtype=_FLOAT)
    meta = _metadata_bytes(provenance)
    with open(path, "wb") as outfile:
        outfile.write(MATRIX_MAGIC)
        outfile.write(struct.pack("<HHI", MATRIX_FORMAT_VERSION, array.ndim, len(meta)))
        outfile.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        outfile.write(meta)
        outfile.write(array.tobytes(order="C"))


def read_matrix_container(path: str | Path) -> tuple[np.ndarray, dict[str, Any]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"Could not read {path}: {exc}") from exc
    if raw[:6] != MATRIX_MAGIC:
        raise DataError(f"{path} is not a matrix container (bad magic bytes)")
    try:
        version, ndim, meta_len = struct.unpack_from("<HHI", raw, 6)
        if version != MATRIX_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported container version {version}")
        offset = 14
        shape = struct.unpack_from(f"<{ndim}Q", raw, offset)
        offset += 8 * ndim
        metadata = json.loads(raw[offset : offset + meta_len].decode("utf-8"))
        offset += meta_len
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        if len(raw) - offset != count * _FLOAT.itemsize:
            raise DataError(f"{path}: payload size does not match shape {shape}")
        data = np.frombuffer(raw, dtype=_FLOAT, count=count, offset=offset).reshape(shape)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt container header: {exc}") from exc
    return data.astype(float), metadata


def _provenance_lines(provenance: dict[str, Any] | None) -> str:
    if not provenance:
        return ""
    return "".join(f"# {key}: {json.dumps(provenance[key], sort_keys=True)}\n" for key in sorted(provenance))


def save_csv_matrix(path: str | Path, array: np.ndarray, provenance: dict[str, Any] | None = None) -> None:
    array = np.atleast_2d(np.asarray(array, dtype=float))
    with open(path, "w", encoding="utf-8", newline="") as outfile:
        outfile.write(_provenance_lines(provenance))
        pd.DataFrame(array).to_csv(outfile, header=False, index=False, float_format="%.17g", lineterminator="\n")


def save_table(path: str | Path, table: pd.DataFrame, provenance: dict[str, Any] | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as outfile:
        outfile.write(_provenance_lines(provenance))
        table.to_csv(outfile, index=False, float_format="%.17g", lineterminator="\n")


def load_table(path: str | Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, comment="#", float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"Could not read table {path}: {exc}") from exc


def load_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        try:
            frame = pd.read_csv(path, header=None, comment="#", float_precision="round_trip")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise DataError(f"Could not read {path}: {exc}") from exc
        try:
            return frame.to_numpy(dtype=float)
        except ValueError as exc:
            raise DataError(f"{path} contains non-numeric entries") from exc
    return read_matrix_container(path)[0]


@dataclass(frozen=True)
class ModelArchive:
    params: LdsParams
    T: int
    hyperparams: dict[str, Any] | None = None
    objective_trace: list[float] = field(default_factory=list)
    marginal_trace: list[float] = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False
    provenance: dict[str, Any] = field(default_factory=dict)
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    format_version: int = ARCHIVE_FORMAT_VERSION

    @property
    def p(self) -> int:
        return self.params.p

    @property
    def d(self) -> int:
        return self.params.d

    def hyperparams_obj(self) -> Hyperparams | None:
        if self.hyperparams is None:
            return None
        try:
            return Hyperparams(**self.hyperparams)
        except (TypeError, ConfigError) as exc:
            raise DataError(f"Archive hyperparameters are invalid: {exc}") from exc


def archive_from_fit(report: FitReport, hp: Hyperparams, T: int, provenance: dict[str, Any]) -> ModelArchive:
    baseline = report.baseline
    return ModelArchive(
        params=report.params,
        T=T,
        hyperparams=asdict(hp),
        objective_trace=[float(v) for v in report.objective_trace],
        marginal_trace=[float(v) for v in report.marginal_trace],
        iterations_run=report.iterations_run,
        converged=report.converged,
        provenance=provenance,
        extras={
            "x_T": report.moments.x_hat[:, -1],
            "V_T": report.moments.V_hat[-1],
            "baseline_A": baseline.A,
            "baseline_C": baseline.C,
            "baseline_x_T": baseline.X[:, -1],
        },
    )


def validate_archive_header(header: dict[str, Any]) -> None:
    try:
        jsonschema.validate(header, ARCHIVE_HEADER_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DataError(f"Invalid archive header: {exc.message}") from exc
    if header["format_version"] > ARCHIVE_FORMAT_VERSION:
        raise DataError(f"Archive format version {header['format_version']} is newer than supported")
    names = [entry["name"] for entry in header["arrays"]]
    missing = [name for name in _REQUIRED_ARRAYS if name not in names]
    if missing:
        raise DataError(f"Archive is missing arrays: {', '.join(missing)}")


def save_archive(path: str | Path, archive: ModelArchive) -> None:
    arrays = {name: getattr(archive.params, name) for name in _REQUIRED_ARRAYS}
    arrays.update(archive.extras)
    header = {
        "format_version": archive.format_version,
        "p": archive.p,
        "d": archive.d,
        "T": archive.T,
        "hyperparams": archive.hyperparams,
        "objective_trace": archive.objective_trace,
        "marginal_trace": archive.marginal_trace,
        "iterations_run": archive.iterations_run,
        "converged": archive.converged,
        "provenance": archive.provenance,
        "arrays": [{"name": name, "shape": list(np.shape(value))} for name, value in arrays.items()],
    }
    validate_archive_header(header)
    header_bytes = _metadata_bytes(header)
    with open(path, "wb") as outfile:
        outfile.write(ARCHIVE_MAGIC)
        outfile.write(struct.pack("<HI", archive.format_version, len(header_bytes)))
        outfile.write(header_bytes)
        for value in arrays.values():
            outfile.write(np.ascontiguousarray(value, dtype=_FLOAT).tobytes(order="C"))


def load_archive(path: str | Path) -> ModelArchive:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"Could not read archive {path}: {exc}") from exc
    if raw[:6] != ARCHIVE_MAGIC:
        raise DataError(f"{path} is not a model archive (bad magic bytes)")
    try:
        _, header_len = struct.unpack_from("<HI", raw, 6)
        offset = 12
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt archive header: {exc}") from exc
    validate_archive_header(header)
    offset += header_len

    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + count * _FLOAT.itemsize
        if end > len(raw):
            raise DataError(f"{path}: truncated block for array '{entry['name']}'")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=_FLOAT, count=count, offset=offset).reshape(shape).astype(float)
        offset = end

    params = LdsParams(**{name: arrays.pop(name) for name in _REQUIRED_ARRAYS})
    return ModelArchive(
        params=params,
        T=header["T"],
        hyperparams=header["hyperparams"],
        objective_trace=header["objective_trace"],
        marginal_trace=header["marginal_trace"],
        iterations_run=header["iterations_run"],
        converged=header["converged"],
        provenance=header["provenance"],
        extras=arrays,
        format_version=header["format_version"],
    )


def is_archive(path: str | Path) -> bool:
    try:
        with open(path, "rb") as infile:
            return infile.read(6) == ARCHIVE_MAGIC
    except OSError:
        return False
