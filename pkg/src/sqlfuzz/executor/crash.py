"""Crash evidence normalisation and deduplication.

A crash is identified by the function names of the top sanitizer stack frames
when the diagnostic has them; otherwise by the tail of the target's output
with addresses, numbers and process ids masked out. Either way the key is
stable across ASLR and reruns of the same crash site.
"""

from __future__ import annotations

import hashlib
import re
import signal
from typing import Iterable, List, Optional, Sequence

from .. import sqltext
from .outcome import CrashEvidence

__all__ = [
    "TAIL_LINES",
    "TOP_FRAMES",
    "SANITIZER_RE",
    "frame_functions",
    "mask_line",
    "dedup_key",
    "hang_key",
    "make_evidence",
    "make_hang",
    "describe_status",
]

TAIL_LINES = 30
TOP_FRAMES = 5

FRAME_RE = re.compile(r"#\d+\s+0x[0-9a-fA-F]+\s+in\s+(\S+)")
SANITIZER_RE = re.compile(
    r"ERROR: (?:Address|Memory|Thread|Leak|UndefinedBehavior)Sanitizer|runtime error:|Assertion .* failed",
)
_HEX = re.compile(r"0x[0-9a-fA-F]+")
_PID = re.compile(r"==\d+==")
_NUM = re.compile(r"\d+")


def frame_functions(lines: Iterable[str], top: int = TOP_FRAMES) -> List[str]:
    out = []
    for line in lines:
        m = FRAME_RE.search(line)
        if m:
            out.append(m.group(1))
            if len(out) == top:
                break
    return out


def mask_line(line: str) -> str:
    line = _PID.sub("==PID==", line)
    parts = _HEX.split(line)  # mask numbers between hex literals, then the literals themselves
    return "0x?".join(_NUM.sub("N", p) for p in parts).rstrip()


def dedup_key(tail: Sequence[str], signal_or_exit: Optional[int] = None) -> str:
    frames = frame_functions(tail)
    if frames:
        material = "frames:" + "|".join(frames)
    else:
        masked = [mask_line(l) for l in tail if l.strip()]
        material = f"tail:{signal_or_exit}:" + "\n".join(masked)
    return hashlib.sha1(material.encode()).hexdigest()[:16]


def hang_key(statement: str) -> str:
    return hashlib.sha1(("hang:" + sqltext.mask_literals(statement).strip()).encode()).hexdigest()[:16]


def make_evidence(trigger_index: int, signal_or_exit: int, output_lines: Sequence[str]) -> CrashEvidence:
    tail = tuple(l.rstrip("\n") for l in list(output_lines)[-TAIL_LINES:])
    return CrashEvidence(trigger_index, signal_or_exit, tail, dedup_key(tail, signal_or_exit), "crash")


def make_hang(trigger_index: int, statement: str, output_lines: Sequence[str] = ()) -> CrashEvidence:
    tail = tuple(l.rstrip("\n") for l in list(output_lines)[-TAIL_LINES:])
    return CrashEvidence(trigger_index, 0, tail, hang_key(statement), "hang")


def describe_status(signal_or_exit: int) -> str:
    if signal_or_exit < 0:
        try:
            return signal.Signals(-signal_or_exit).name
        except ValueError:
            return f"signal {-signal_or_exit}"
    return f"exit {signal_or_exit}"
