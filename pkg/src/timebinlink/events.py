"""Time-tagged detection streams: codec, attempt framing, herald classification.

Record layout (frozen, little-endian, 16-byte stride so streams can be
memory-mapped):

    ====== ===== =======================================
    offset bytes field
    ====== ===== =======================================
    0      8     t_ps        u64, timestamp in picoseconds
    8      4     attempt_id  u32
    12     1     channel     u8 (see CHANNEL_* codes)
    13     1     kind        u8, reserved flags (0)
    14     2     reserved    u16, must be 0
    ====== ===== =======================================

The CSV form is ``attempt_id,channel,t_ps`` with a header line.  Both
decode losslessly back into the same records.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .types import (
    HeraldResult,
    ProtocolParams,
    PSI_MINUS,
    PSI_PLUS,
    RejectReason,
    rejected,
)

CHANNEL_APD0 = 0
CHANNEL_APD1 = 1
CHANNEL_SYNC = 16
CHANNEL_EXC_EARLY = 17
CHANNEL_EXC_LATE = 18

VALID_CHANNELS = frozenset(
    (CHANNEL_APD0, CHANNEL_APD1, CHANNEL_SYNC, CHANNEL_EXC_EARLY, CHANNEL_EXC_LATE)
)

RECORD_DTYPE = np.dtype(
    [
        ("t_ps", "<u8"),
        ("attempt_id", "<u4"),
        ("channel", "u1"),
        ("kind", "u1"),
        ("reserved", "<u2"),
    ]
)
RECORD_SIZE = RECORD_DTYPE.itemsize  # 16
CSV_HEADER = "attempt_id,channel,t_ps"


class StreamFormatError(ValueError):
    """Malformed stream: carries the byte or line offset of the fault."""

    def __init__(self, msg: str, *, byte_offset: Optional[int] = None, line: Optional[int] = None):
        where = ""
        if byte_offset is not None:
            where = f" at byte {byte_offset}"
        elif line is not None:
            where = f" at line {line}"
        super().__init__(msg + where)
        self.byte_offset = byte_offset
        self.line = line


@dataclass(frozen=True)
class TimeTagRecord:
    """One detector or marker event of an acquisition stream."""

    t_ps: int
    attempt_id: int
    channel: int
    kind: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.t_ps < 2**64:
            raise StreamFormatError("t_ps out of u64 range")
        if not 0 <= self.attempt_id < 2**32:
            raise StreamFormatError("attempt_id out of u32 range")
        if self.channel not in VALID_CHANNELS:
            raise StreamFormatError(f"unknown channel code {self.channel}")


def records_to_array(records: Iterable[TimeTagRecord]) -> np.ndarray:
    recs = list(records)
    arr = np.zeros(len(recs), dtype=RECORD_DTYPE)
    for i, r in enumerate(recs):
        arr[i] = (r.t_ps, r.attempt_id, r.channel, r.kind, 0)
    return arr


def array_to_records(arr: np.ndarray) -> list[TimeTagRecord]:
    return [
        TimeTagRecord(int(t), int(a), int(c), int(k))
        for t, a, c, k in zip(arr["t_ps"], arr["attempt_id"], arr["channel"], arr["kind"])
    ]


def encode_binary(records: Union[np.ndarray, Iterable[TimeTagRecord]]) -> bytes:
    arr = records if isinstance(records, np.ndarray) else records_to_array(records)
    return arr.astype(RECORD_DTYPE, copy=False).tobytes()


def encode_csv(records: Union[np.ndarray, Iterable[TimeTagRecord]]) -> str:
    arr = records if isinstance(records, np.ndarray) else records_to_array(records)
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for t, a, c in zip(arr["t_ps"], arr["attempt_id"], arr["channel"]):
        out.write(f"{a},{c},{t}\n")
    return out.getvalue()


def _validate_stream(arr: np.ndarray) -> None:
    bad = ~np.isin(arr["channel"], list(VALID_CHANNELS))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise StreamFormatError(
            f"unknown channel code {int(arr['channel'][i])}", byte_offset=i * RECORD_SIZE
        )
    sync_t = arr["t_ps"][arr["channel"] == CHANNEL_SYNC]
    if sync_t.size > 1 and np.any(np.diff(sync_t.astype(np.int64)) < 0):
        i = int(np.flatnonzero(np.diff(sync_t.astype(np.int64)) < 0)[0])
        raise StreamFormatError(f"non-monotone SYNC timestamps (sync #{i} -> #{i + 1})")


def parse_stream(data: Union[bytes, bytearray, str]) -> np.ndarray:
    """Decode a binary or CSV stream into a structured record array.

    Malformed input raises :class:`StreamFormatError` with the byte or line
    offset of the first fault.
    """
    if isinstance(data, (bytes, bytearray)):
        if len(data) % RECORD_SIZE != 0:
            raise StreamFormatError(
                f"truncated record: {len(data)} bytes is not a multiple of {RECORD_SIZE}",
                byte_offset=(len(data) // RECORD_SIZE) * RECORD_SIZE,
            )
        arr = np.frombuffer(bytes(data), dtype=RECORD_DTYPE).copy()
    elif isinstance(data, str):
        lines = data.splitlines()
        if not lines or lines[0].strip() != CSV_HEADER:
            raise StreamFormatError(f"missing CSV header {CSV_HEADER!r}", line=1)
        rows = []
        for ln, text in enumerate(lines[1:], start=2):
            text = text.strip()
            if not text:
                continue
            parts = text.split(",")
            if len(parts) != 3:
                raise StreamFormatError("expected 3 comma-separated fields", line=ln)
            try:
                a, c, t = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise StreamFormatError(f"non-integer field in {text!r}", line=ln) from None
            rows.append((t, a, c, 0, 0))
        arr = np.array(rows, dtype=RECORD_DTYPE) if rows else np.zeros(0, dtype=RECORD_DTYPE)
    else:
        raise TypeError("parse_stream accepts bytes or str")
    _validate_stream(arr)
    return arr


@dataclass
class AttemptFrame:
    """All marker and detection events of one attempt, keyed by its SYNC."""

    attempt_id: int
    sync_t_ps: int
    exc_early_t_ps: Optional[int] = None
    exc_late_t_ps: Optional[int] = None
    detections: list[tuple[int, int]] = field(default_factory=list)  # (channel, t_ps)

    @property
    def has_marks(self) -> bool:
        return self.exc_early_t_ps is not None and self.exc_late_t_ps is not None


@dataclass
class FramingResult:
    frames: list[AttemptFrame]
    warnings: list[str] = field(default_factory=list)


def frame_attempts(records: Union[np.ndarray, Sequence[TimeTagRecord]]) -> FramingResult:
    """Group records into attempt frames at SYNC boundaries.

    Records before the first SYNC become orphan warnings; duplicate
    excitation marks flag the frame (it keeps the first mark).
    """
    if not isinstance(records, np.ndarray):
        records = records_to_array(records)
    frames: list[AttemptFrame] = []
    warnings: list[str] = []
    current: Optional[AttemptFrame] = None
    for t, a, c in zip(records["t_ps"], records["attempt_id"], records["channel"]):
        t, a, c = int(t), int(a), int(c)
        if c == CHANNEL_SYNC:
            current = AttemptFrame(attempt_id=a, sync_t_ps=t)
            frames.append(current)
            continue
        if current is None:
            warnings.append(f"orphan record before first SYNC: channel {c} at {t} ps")
            continue
        if c == CHANNEL_EXC_EARLY:
            if current.exc_early_t_ps is not None:
                warnings.append(f"attempt {current.attempt_id}: duplicate EXC-EARLY mark")
            else:
                current.exc_early_t_ps = t
        elif c == CHANNEL_EXC_LATE:
            if current.exc_late_t_ps is not None:
                warnings.append(f"attempt {current.attempt_id}: duplicate EXC-LATE mark")
            else:
                current.exc_late_t_ps = t
        else:
            current.detections.append((c, t))
    return FramingResult(frames=frames, warnings=warnings)


@dataclass(frozen=True)
class ClassifySummary:
    n_frames: int
    n_unclassifiable: int  # frames without both excitation marks
    n_candidates: int  # frames with exactly one detection per bin
    counts: dict
    yield_fraction: float  # accepted / candidates

    def accepted(self) -> int:
        return self.counts.get("psi_plus", 0) + self.counts.get("psi_minus", 0)


def _split_bins(frame: AttemptFrame, channel_offsets_ps: dict[int, int] | None):
    early, late = [], []
    for c, t in frame.detections:
        t_cal = t - (channel_offsets_ps or {}).get(c, 0)
        if t_cal >= frame.exc_late_t_ps:
            late.append((c, t_cal))
        else:
            early.append((c, t_cal))
    return early, late


def classify_frame(
    frame: AttemptFrame,
    protocol: ProtocolParams,
    channel_offsets_ps: dict[int, int] | None = None,
    mode: str = "difference",
    bin_mean_offset_ps: float | None = None,
) -> HeraldResult:
    """Apply the herald rule to one framed attempt.

    The primary ``difference`` mode accepts when |tau* - tau| <= delta_t with
    tau* the late-minus-early detection interval (tau taken from the
    excitation marks); ``per-bin`` windows each detection around the mean
    arrival offset within its own bin instead.  Same-channel detections
    herald Psi+, opposite channels Psi-.
    """
    if not frame.has_marks:
        raise ValueError("frame lacks excitation marks; caller must exclude it")
    early, late = _split_bins(frame, channel_offsets_ps)
    if len(early) == 0 or len(late) == 0:
        if len(early) >= 2 or len(late) >= 2:
            return rejected(RejectReason.SAME_BIN)
        return rejected(RejectReason.MISSING_PHOTON)
    if len(early) > 1 or len(late) > 1:
        return rejected(RejectReason.SAME_BIN)
    (c_e, t_e), (c_l, t_l) = early[0], late[0]
    delta_ps = protocol.delta_t_s * 1e12
    if mode == "difference":
        tau_ps = frame.exc_late_t_ps - frame.exc_early_t_ps
        if abs((t_l - t_e) - tau_ps) > delta_ps:
            return rejected(RejectReason.OUT_OF_WINDOW)
    elif mode == "per-bin":
        if bin_mean_offset_ps is None:
            raise ValueError("per-bin mode needs bin_mean_offset_ps")
        off_e = t_e - frame.exc_early_t_ps - bin_mean_offset_ps
        off_l = t_l - frame.exc_late_t_ps - bin_mean_offset_ps
        if abs(off_e) > delta_ps or abs(off_l) > delta_ps:
            return rejected(RejectReason.OUT_OF_WINDOW)
    else:
        raise ValueError(f"unknown classification mode {mode!r}")
    return PSI_PLUS if c_e == c_l else PSI_MINUS


def estimate_bin_mean_offset_ps(frames: Sequence[AttemptFrame]) -> float:
    """Mean detection offset from the owning bin's excitation mark, pooled
    over both bins; the per-bin window centre when no nominal value is given."""
    offsets = []
    for f in frames:
        if not f.has_marks:
            continue
        early, late = _split_bins(f, None)
        offsets.extend(t - f.exc_early_t_ps for _, t in early)
        offsets.extend(t - f.exc_late_t_ps for _, t in late)
    if not offsets:
        raise ValueError("no detections to estimate the bin arrival offset from")
    return float(np.mean(offsets))


def classify_frames(
    frames: Sequence[AttemptFrame],
    protocol: ProtocolParams,
    channel_offsets_ps: dict[int, int] | None = None,
    mode: str = "difference",
    bin_mean_offset_ps: float | None = None,
) -> tuple[list[tuple[int, HeraldResult]], ClassifySummary]:
    """Classify every frame; returns (attempt_id, HeraldResult) pairs plus a
    summary with counts and the acceptance yield per candidate coincidence."""
    if mode == "per-bin" and bin_mean_offset_ps is None:
        bin_mean_offset_ps = estimate_bin_mean_offset_ps(frames)
    results: list[tuple[int, HeraldResult]] = []
    counts = {"psi_plus": 0, "psi_minus": 0, "same-bin": 0, "missing-photon": 0, "out-of-window": 0}
    n_unclassifiable = 0
    n_candidates = 0
    for f in frames:
        if not f.has_marks:
            n_unclassifiable += 1
            continue
        early, late = _split_bins(f, channel_offsets_ps)
        if len(early) == 1 and len(late) == 1:
            n_candidates += 1
        res = classify_frame(f, protocol, channel_offsets_ps, mode, bin_mean_offset_ps)
        results.append((f.attempt_id, res))
        if res == PSI_PLUS:
            counts["psi_plus"] += 1
        elif res == PSI_MINUS:
            counts["psi_minus"] += 1
        else:
            counts[res.reason.value] += 1
    accepted = counts["psi_plus"] + counts["psi_minus"]
    summary = ClassifySummary(
        n_frames=len(frames),
        n_unclassifiable=n_unclassifiable,
        n_candidates=n_candidates,
        counts=counts,
        yield_fraction=accepted / n_candidates if n_candidates else 0.0,
    )
    return results, summary


def yield_sweep(
    frames: Sequence[AttemptFrame],
    protocol: ProtocolParams,
    delta_t_list_s: Sequence[float],
    channel_offsets_ps: dict[int, int] | None = None,
) -> list[tuple[float, ClassifySummary]]:
    """Re-classify one dataset at several window widths; the acceptance is
    monotone in delta_t, so wider windows accept supersets."""
    out = []
    for dt in delta_t_list_s:
        p = ProtocolParams(
            tau_s=protocol.tau_s,
            delta_t_s=dt,
            rep_rate_hz=protocol.rep_rate_hz,
            duty=protocol.duty,
        )
        _, summary = classify_frames(frames, p, channel_offsets_ps)
        out.append((dt, summary))
    return out
