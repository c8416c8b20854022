"""Coverage oracles: an AFL-style shared hit-count map, or a behavioural proxy.

The shared map is a 65,536-byte array an instrumented target increments per
edge. After each case the raw counts are bucketised into hit classes
(1, 2, 3, 4-7, 8-15, 16-31, 32-127, 128+ -> one bit each) and compared
against the ``virgin`` bits; a position counts as new when it shows a class
bit never seen before.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Set, Tuple

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "MAP_SIZE",
    "SHM_ENV_VAR",
    "MapUnavailable",
    "bucketize",
    "SharedMapOracle",
    "BehavioralOracle",
    "SysVSharedMemory",
    "FileMap",
    "error_signature",
    "behavior_kind",
    "coverage_delta",
    "is_interesting",
]

MAP_SIZE = 1 << 16
SHM_ENV_VAR = "__AFL_SHM_ID"
MAP_FILE_ENV_VAR = "SQLFUZZ_MAP_FILE"


class MapUnavailable(RuntimeError):
    pass


def _bucket_table() -> np.ndarray:
    lut = np.zeros(256, dtype=np.uint8)
    lut[1] = 1
    lut[2] = 2
    lut[3] = 4
    lut[4:8] = 8
    lut[8:16] = 16
    lut[16:32] = 32
    lut[32:128] = 64
    lut[128:256] = 128
    return lut


BUCKETS = _bucket_table()


def bucketize(trace: np.ndarray) -> np.ndarray:
    """Map raw hit counts to their single-bit hit class."""
    return BUCKETS[np.asarray(trace, dtype=np.uint8)]


# --------------------------------------------------------------------------
# map backings

class SysVSharedMemory:
    """A System V shared-memory segment exported to the target through ``__AFL_SHM_ID``."""

    IPC_PRIVATE = 0
    IPC_CREAT = 0o1000
    IPC_EXCL = 0o2000
    IPC_RMID = 0

    def __init__(self, size: int = MAP_SIZE):
        libc_name = ctypes.util.find_library("c")
        if not libc_name:
            raise MapUnavailable("libc not found")
        self._libc = ctypes.CDLL(libc_name, use_errno=True)
        self._libc.shmat.restype = ctypes.c_void_p
        self._libc.shmat.argtypes = (ctypes.c_int, ctypes.c_void_p, ctypes.c_int)
        self._libc.shmdt.argtypes = (ctypes.c_void_p,)
        self.size = size
        self.shm_id = self._libc.shmget(self.IPC_PRIVATE, size, self.IPC_CREAT | self.IPC_EXCL | 0o600)
        if self.shm_id < 0:
            raise MapUnavailable(f"shmget failed: errno {ctypes.get_errno()}")
        addr = self._libc.shmat(self.shm_id, None, 0)
        if addr in (None, ctypes.c_void_p(-1).value):
            self._libc.shmctl(self.shm_id, self.IPC_RMID, None)
            raise MapUnavailable(f"shmat failed: errno {ctypes.get_errno()}")
        self._addr = addr
        buf = (ctypes.c_uint8 * size).from_address(addr)
        self.array = np.ctypeslib.as_array(buf)

    @property
    def env(self) -> dict:
        return {SHM_ENV_VAR: str(self.shm_id)}

    def read(self) -> np.ndarray:
        return self.array.copy()

    def clear(self) -> None:
        self.array[:] = 0

    def close(self) -> None:
        if getattr(self, "_addr", None):
            self.array = None
            self._libc.shmdt(ctypes.c_void_p(self._addr))
            self._libc.shmctl(self.shm_id, self.IPC_RMID, None)
            self._addr = None

    def __del__(self):  # pragma: no cover - best effort
        try:
            self.close()
        except Exception:
            pass


class FileMap:
    """A file-backed map (``mmap``) for targets that cannot attach SysV memory."""

    def __init__(self, path, size: int = MAP_SIZE):
        self.path = Path(path)
        self.size = size
        with open(self.path, "wb") as fh:
            fh.truncate(size)
        self.array = np.memmap(self.path, dtype=np.uint8, mode="r+", shape=(size,))

    @property
    def env(self) -> dict:
        return {MAP_FILE_ENV_VAR: str(self.path)}

    def read(self) -> np.ndarray:
        return np.array(self.array)

    def clear(self) -> None:
        self.array[:] = 0
        self.array.flush()

    def close(self) -> None:
        self.array = None


def attach_map(shm_id: Optional[str] = None, path: Optional[str] = None) -> Optional[np.ndarray]:
    """Target side: the writable map named by the environment, or ``None``."""
    shm_id = shm_id if shm_id is not None else os.environ.get(SHM_ENV_VAR)
    path = path if path is not None else os.environ.get(MAP_FILE_ENV_VAR)
    if shm_id:
        libc = ctypes.CDLL(ctypes.util.find_library("c"), use_errno=True)
        libc.shmat.restype = ctypes.c_void_p
        libc.shmat.argtypes = (ctypes.c_int, ctypes.c_void_p, ctypes.c_int)
        addr = libc.shmat(int(shm_id), None, 0)
        if addr in (None, ctypes.c_void_p(-1).value):
            return None
        return np.ctypeslib.as_array((ctypes.c_uint8 * MAP_SIZE).from_address(addr))
    if path:
        return np.memmap(path, dtype=np.uint8, mode="r+", shape=(MAP_SIZE,))
    return None


# --------------------------------------------------------------------------
# oracles

@dataclass
class SharedMapOracle:
    map_size: int = MAP_SIZE
    virgin: np.ndarray = field(default=None)
    backing: object = None  # SysVSharedMemory | FileMap | None

    def __post_init__(self):
        if self.virgin is None:
            self.virgin = np.full(self.map_size, 0xFF, dtype=np.uint8)
        if len(self.virgin) != self.map_size:
            raise ValueError("virgin map length must equal map_size")

    @property
    def kind(self) -> str:
        return "shared_map"

    def delta(self, trace: np.ndarray) -> int:
        """Count positions with a new hit class and fold them into ``virgin``."""
        trace = np.asarray(trace, dtype=np.uint8)
        if trace.shape != (self.map_size,):
            raise MapUnavailable(f"map of shape {trace.shape}, expected ({self.map_size},)")
        classes = BUCKETS[trace]
        fresh = classes & self.virgin
        count = int(np.count_nonzero(fresh))
        self.virgin &= ~classes
        return count

    @property
    def covered(self) -> int:
        """Positions ever hit (any class)."""
        return int(np.count_nonzero(self.virgin != 0xFF))

    def read_backing(self) -> np.ndarray:
        if self.backing is None:
            raise MapUnavailable("no map attached")
        return self.backing.read()

    def clear_backing(self) -> None:
        if self.backing is not None:
            self.backing.clear()


_QUOTED = re.compile(r"'(?:[^']|'')*'|\"[^\"]*\"|`[^`]*`")
_NUM = re.compile(r"\b\d+(?:\.\d+)?\b")
_TAIL_NAME = re.compile(r": [\w.$]+$")


def error_signature(code: Optional[int], message: str) -> str:
    """Code if the engine gives one, else the message with names/values masked."""
    if code is not None:
        return str(code)
    m = _QUOTED.sub("?", message.strip())
    m = _NUM.sub("?", m)
    m = _TAIL_NAME.sub(": ?", m)
    return m


def behavior_kind(text: str) -> str:
    """Leading verb of a statement; DDL keeps its object keyword (CREATE INDEX, DROP VIEW...)."""
    from .. import sqltext

    words = sqltext.leading_words(text, 3)
    if not words:
        return "EMPTY"
    if words[0] in ("CREATE", "DROP", "ALTER") and len(words) > 1:
        if words[1] in ("TEMP", "TEMPORARY", "UNIQUE", "VIRTUAL", "OR") and len(words) > 2:
            return " ".join(words[:3])
        return " ".join(words[:2])
    return words[0]


@dataclass
class BehavioralOracle:
    seen: Set[Tuple[str, str]] = field(default_factory=set)

    @property
    def kind(self) -> str:
        return "behavioral"

    def pairs(self, statements: Iterable[str], results) -> Set[Tuple[str, str]]:
        out = set()
        for text, r in zip(statements, results):
            sig = "ok" if r.status == "ok" else ("crash" if r.status == "crash" else error_signature(r.code, r.message))
            out.add((behavior_kind(text), sig))
        return out

    def delta(self, statements: Iterable[str], results) -> int:
        new = self.pairs(statements, results) - self.seen
        self.seen |= new
        return len(new)

    @property
    def covered(self) -> int:
        return len(self.seen)


def coverage_delta(oracle, state) -> int:
    """New-entry count for ``state`` (a map for SharedMap, ``(statements, results)`` otherwise)."""
    if isinstance(oracle, SharedMapOracle):
        return oracle.delta(state)
    statements, results = state
    return oracle.delta(statements, results)


def is_interesting(outcome, threshold: int = 0) -> bool:
    """New coverage beyond ``threshold`` or a crash."""
    return outcome.crash is not None or outcome.coverage_new_edges > threshold
