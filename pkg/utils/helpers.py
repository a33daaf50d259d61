"""Utility functions for logging, artifact files and random streams"""
import csv
import hashlib
import logging
import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from typing import Any, Callable, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import FieldError

_loggers = {}

# Fallback values to avoid circular imports during logger initialization
_DEFAULT_LOG_MAX_BYTES = 5 * 1024 * 1024
_DEFAULT_LOG_BACKUP_COUNT = 3

TKF1_MAGIC = b"TKF1"
_TKF1_HEADER = struct.Struct("<4sIII")


# ========== Logging Functions ==========

def setup_logger(name: str = "vmtorus", log_file: str = "vmtorus.log", level: int = logging.INFO,
                 max_bytes: int = None, backup_count: int = None) -> logging.Logger:
    if max_bytes is None:
        max_bytes = _DEFAULT_LOG_MAX_BYTES

    if backup_count is None:
        backup_count = _DEFAULT_LOG_BACKUP_COUNT

    if name in _loggers:
        return _loggers[name]

    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False
    logger.handlers.clear()

    detailed_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(module)s:%(funcName)s:%(lineno)d - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    console_formatter = logging.Formatter('%(levelname)s - %(module)s - %(message)s')

    try:
        file_handler = RotatingFileHandler(log_file, maxBytes=max_bytes, backupCount=backup_count, encoding='utf-8')
        file_handler.setLevel(level)
        file_handler.setFormatter(detailed_formatter)
        logger.addHandler(file_handler)
    except Exception as e:
        logging.basicConfig(level=logging.WARNING)
        logging.warning(f"Could not create log file handler: {e}")

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.WARNING)
    console_handler.setFormatter(console_formatter)
    logger.addHandler(console_handler)

    _loggers[name] = logger
    return logger


def get_logger(name: str = "vmtorus") -> logging.Logger:
    return _loggers.get(name) or setup_logger(name)


def set_console_level(level: int) -> None:
    """Lower or raise the console threshold of every logger created so far."""
    for logger in _loggers.values():
        for handler in logger.handlers:
            if type(handler) is logging.StreamHandler:
                handler.setLevel(level)


@contextmanager
def log_duration(logger: logging.Logger, label: str):
    """Log wall-clock time of the enclosed block at INFO."""
    start = time.perf_counter()
    try:
        yield
    finally:
        logger.info(f"{label} finished in {time.perf_counter() - start:.3f}s")


# ========== Field Dumps ==========

def write_field_dump(path: str, values: np.ndarray) -> None:
    """Write a (n, n) or (components, n, n) real field in TKF1 format."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[np.newaxis]
    if values.ndim != 3 or values.shape[1] != values.shape[2]:
        raise FieldError(f"field dump expects (components, n, n) samples, got shape {values.shape}")
    components, n, _ = values.shape
    with open(path, "wb") as f:
        f.write(_TKF1_HEADER.pack(TKF1_MAGIC, n, components, 0))
        f.write(values.astype("<f8").tobytes(order="C"))


def read_field_dump(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(_TKF1_HEADER.size)
        magic, n, components, _ = _TKF1_HEADER.unpack(header)
        if magic != TKF1_MAGIC:
            raise FieldError(f"{path}: not a TKF1 field dump")
        data = np.frombuffer(f.read(), dtype="<f8")
    if data.size != components * n * n:
        raise FieldError(f"{path}: expected {components * n * n} samples, found {data.size}")
    values = data.reshape(components, n, n).astype(np.float64)
    return values[0] if components == 1 else values


def write_particle_dump(path: str, x: np.ndarray, v: np.ndarray, w: np.ndarray) -> None:
    """Little-endian float64 records (x1, x2, v1, v2, w)."""
    records = np.column_stack([x[:, 0], x[:, 1], v[:, 0], v[:, 1], w]).astype("<f8")
    with open(path, "wb") as f:
        f.write(records.tobytes(order="C"))


def read_particle_dump(path: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    records = np.fromfile(path, dtype="<f8").reshape(-1, 5)
    return records[:, 0:2].copy(), records[:, 2:4].copy(), records[:, 4].copy()


# ========== CSV Output ==========

def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[float]]) -> None:
    """Write rows with full float precision so reruns are byte-identical."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(value) for value in row])


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_field_csv(path: str, values: np.ndarray) -> None:
    """One row per node: x1, x2, value(s)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[np.newaxis]
    components, n, _ = values.shape
    coords = np.arange(n) / n
    x1, x2 = np.meshgrid(coords, coords, indexing="ij")
    columns = [x1.ravel(), x2.ravel()] + [values[c].ravel() for c in range(components)]
    header = ["x1", "x2"] + (["value"] if components == 1 else [f"value{c + 1}" for c in range(components)])
    write_csv(path, header, zip(*columns))


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# ========== Random Streams ==========

def make_rng(seed: int, experiment: str, purpose: str) -> np.random.Generator:
    """Counter-based generator keyed by (experiment, purpose) under one seed."""
    digest = hashlib.sha256(f"{experiment}/{purpose}".encode("utf-8")).digest()
    key = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed)] + key)))


# ========== Numerics ==========

_STEP_EDGE = 1.0 / 745


def smoothstep(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """S, S', S'' of the C-infinity step psi(x) / (psi(x) + psi(1 - x)), psi(x) = exp(-1/x)."""
    x = np.asarray(x, dtype=np.float64)
    inner = (x > _STEP_EDGE) & (x < 1.0 - _STEP_EDGE)
    xs = np.where(inner, x, 0.5)
    a, b = np.exp(-1.0 / xs), np.exp(-1.0 / (1.0 - xs))
    S = a / (a + b)
    P = 1.0 / xs ** 2 + 1.0 / (1.0 - xs) ** 2
    dP = -2.0 / xs ** 3 + 2.0 / (1.0 - xs) ** 3
    S1 = S * (1.0 - S) * P
    S2 = S1 * (1.0 - 2.0 * S) * P + S * (1.0 - S) * dP
    return (np.where(inner, S, np.where(x >= 0.5, 1.0, 0.0)), np.where(inner, S1, 0.0), np.where(inner, S2, 0.0))


def map_chunks(fn: Callable[[int, int], Any], count: int, chunk: int, threads: int = 1) -> List[Any]:
    """fn(lo, hi) over consecutive index chunks; results come back in chunk order."""
    bounds = [(i, min(i + chunk, count)) for i in range(0, count, chunk)]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
