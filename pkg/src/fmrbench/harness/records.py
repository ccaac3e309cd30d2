"""Per-sample result records and deterministic JSONL serialization.

A record line is canonical JSON: sorted keys, compact separators, native
Python scalar types only, one trailing newline. Two runs over the same
inputs must produce byte-identical files, so nothing time- or
environment-dependent may enter a record.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from ..errors import IntegrityError

RECORD_SCHEMA = "fmrbench/result-record/v1"


@dataclass
class ResultRecord:
    id: str
    label: int
    class_name: str
    status: str
    accepted_iterations: int
    loss_first: float | None
    loss_last: float | None
    n_trace: int
    prediction_original: int
    prediction_final: int
    oracle_verdict_final: bool
    diagnostic: str | None
    export_path: str | None
    export_sha256: str | None
    config: str
    schema: str = RECORD_SCHEMA

    def to_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":")) + "\n"

    @staticmethod
    def from_dict(d: dict) -> "ResultRecord":
        if d.get("schema") != RECORD_SCHEMA:
            raise IntegrityError(
                f"record schema {d.get('schema')!r} is not {RECORD_SCHEMA!r}"
            )
        try:
            return ResultRecord(**d)
        except TypeError as exc:
            raise IntegrityError(f"malformed record: {exc}") from exc


def read_records(path):
    """Read a JSONL record file, tolerating a truncated final line.

    Returns (records, clean_bytes) where clean_bytes is the byte offset
    up to which the file parsed cleanly. A malformed line anywhere except
    the tail is corruption and raises IntegrityError; a malformed or
    partial last line is treated as an interrupted write and dropped by
    truncating to clean_bytes.
    """
    records = []
    clean = 0
    with open(path, "rb") as fh:
        raw = fh.read()
    offset = 0
    lines = raw.split(b"\n")
    for i, line in enumerate(lines):
        is_last_chunk = i == len(lines) - 1
        if line == b"":
            if is_last_chunk:
                break
            raise IntegrityError(f"{path}: empty record line {i + 1}")
        try:
            payload = json.loads(line.decode("utf-8"))
            record = ResultRecord.from_dict(payload)
        except (ValueError, IntegrityError) as exc:
            if is_last_chunk:
                break  # interrupted write; caller truncates to clean
            raise IntegrityError(f"{path}: corrupt record line {i + 1}: {exc}") from exc
        records.append(record)
        offset += len(line) + 1
        clean = offset
        if is_last_chunk:
            # Final line lacked the trailing newline but parsed; keep it
            # and mark the file clean to its true end.
            clean = len(raw)
    return records, clean


def truncate_to(path, clean_bytes: int) -> None:
    with open(path, "r+b") as fh:
        fh.truncate(clean_bytes)
