"""Stochastic attempt engine, numerical coherence oracles, tomography synthesis.

The engine samples each attempt at the outcome level: which time bin a
node's photon occupies, whether the excitation/decay-branch/collection
chain delivers it, its arrival time inside the bin, and the beamsplitter
channel.  Two-photon interference enters only through its observable
consequences (same-bin pairs bunch and are rejected; coherence is attached
per event from sampled motional phases and a mode-overlap penalty).

Randomness contract: one counter-based Philox stream per worker, spawned
from the master seed via ``SeedSequence(seed).spawn(workers)`` and assigned
in worker order; worker ``i`` simulates the ``i``-th contiguous block of
attempts in fixed-size internal batches (``_BATCH``).  Within a batch the
draw order is: per node (A then B): bin, excitation, branch, polarizer
leak, collection, arrival, channel, veto; then the shared bunching coin;
then dark counts.  Tallies reduce in worker order, so identical seed and
worker count give bit-identical results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .analysis import ParityPoint
from .events import (
    CHANNEL_EXC_EARLY,
    CHANNEL_EXC_LATE,
    CHANNEL_SYNC,
    RECORD_DTYPE,
)
from .physics import contrast_arrival, contrast_timebin, window_stats
from .types import (
    DomainError,
    HeraldResult,
    NodeSpec,
    ProtocolParams,
    PSI_MINUS,
    PSI_PLUS,
    ERASURE_FLAGGED,
    RejectReason,
    TrapMode,
    mode_order,
    rejected,
)

_BATCH = 1 << 18  # internal batch size; part of the determinism contract
_EXC_EARLY_OFFSET_PS = 1000  # early excitation mark relative to SYNC

BRANCH_SIGMA = "sigma"
BRANCH_PI = "pi"
BRANCH_D = "d-leak"
BRANCH_NONE = "no-excite"


@dataclass(frozen=True)
class NoiseParams:
    """Noise and imperfection knobs of the attempt engine and tomography.

    ``mode_overlap`` is the photon-wavepacket overlap contrast penalty,
    ``drift_contrast`` absorbs slow qubit-drive intensity drift,
    ``spam_error`` is the per-qubit readout flip probability, and
    ``pulse_angle_rms_rad`` the rms error of the coherent-rotation angles.
    """

    pulse_angle_rms_rad: float = 0.0
    dark_count_rate_hz: float = 0.0
    dark_gate_s: float = 100e-9
    mode_overlap: float = 1.0
    spam_error: float = 0.0
    drift_contrast: float = 1.0
    veto_enabled: bool = True
    veto_failure: float = 0.0

    def __post_init__(self) -> None:
        for name in ("mode_overlap", "spam_error", "drift_contrast", "veto_failure"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"NoiseParams.{name} must be in [0, 1]")
        if self.pulse_angle_rms_rad < 0 or self.dark_count_rate_hz < 0 or self.dark_gate_s < 0:
            raise DomainError("noise rates must be nonnegative")


def readout_flip_prob(noise: NoiseParams) -> float:
    """Per-qubit probability of reading the wrong state: SPAM flips plus the
    transfer error of an angle-noisy swap pulse (~sigma^2/4)."""
    return min(1.0, noise.spam_error + noise.pulse_angle_rms_rad**2 / 4.0)


def p_odd_model(noise: NoiseParams) -> float:
    """Odd-parity population after independent per-qubit readout flips."""
    e = readout_flip_prob(noise)
    return (1.0 - e) ** 2 + e**2


def static_contrast_model(noise: NoiseParams) -> float:
    """Deterministic (non-motional) parity-contrast multiplier: wavepacket
    overlap, drive drift, readout flips, and analysis-pulse angle noise."""
    e = readout_flip_prob(noise)
    angle = max(0.0, 1.0 - noise.pulse_angle_rms_rad**2 / 2.0)
    return noise.mode_overlap * noise.drift_contrast * ((1.0 - 2.0 * e) * angle) ** 2


@dataclass(frozen=True)
class NodeOutcome:
    """Per-node record of one attempt."""

    bin: str  # "early" | "late" | "none"
    branch: str  # sigma | pi | d-leak | no-excite
    collected: bool
    arrival_offset_s: float
    channel: int
    erasure_flagged: bool


@dataclass(frozen=True)
class AttemptOutcome:
    node_a: NodeOutcome
    node_b: NodeOutcome
    herald: HeraldResult
    diff_s: Optional[float] = None  # tau* - tau when both photons exist


@dataclass
class RunTally:
    """Aggregated counts of an engine run; counts partition the attempts."""

    attempts: int = 0
    psi_plus: int = 0
    psi_minus: int = 0
    erasure_flagged: int = 0
    rejected_same_bin: int = 0
    rejected_missing_photon: int = 0
    rejected_out_of_window: int = 0
    false_heralds: int = 0  # unflagged accepted heralds with a pi-origin photon
    diff_n: int = 0
    diff_sum: float = 0.0
    diff_sumsq: float = 0.0

    def merge(self, other: "RunTally") -> "RunTally":
        return RunTally(
            attempts=self.attempts + other.attempts,
            psi_plus=self.psi_plus + other.psi_plus,
            psi_minus=self.psi_minus + other.psi_minus,
            erasure_flagged=self.erasure_flagged + other.erasure_flagged,
            rejected_same_bin=self.rejected_same_bin + other.rejected_same_bin,
            rejected_missing_photon=self.rejected_missing_photon + other.rejected_missing_photon,
            rejected_out_of_window=self.rejected_out_of_window + other.rejected_out_of_window,
            false_heralds=self.false_heralds + other.false_heralds,
            diff_n=self.diff_n + other.diff_n,
            diff_sum=self.diff_sum + other.diff_sum,
            diff_sumsq=self.diff_sumsq + other.diff_sumsq,
        )

    @property
    def heralds(self) -> int:
        return self.psi_plus + self.psi_minus

    @property
    def herald_probability(self) -> float:
        return self.heralds / self.attempts if self.attempts else 0.0

    @property
    def erasure_flag_rate(self) -> float:
        return self.erasure_flagged / self.attempts if self.attempts else 0.0

    @property
    def false_herald_fraction(self) -> float:
        return self.false_heralds / self.heralds if self.heralds else 0.0

    @property
    def diff_mean(self) -> float:
        return self.diff_sum / self.diff_n if self.diff_n else 0.0

    @property
    def diff_variance(self) -> float:
        if self.diff_n < 2:
            return 0.0
        m = self.diff_mean
        return self.diff_sumsq / self.diff_n - m * m

    def counts_sum(self) -> int:
        return (
            self.psi_plus
            + self.psi_minus
            + self.erasure_flagged
            + self.rejected_same_bin
            + self.rejected_missing_photon
            + self.rejected_out_of_window
        )

    def to_dict(self) -> dict:
        return {
            "attempts": self.attempts,
            "psi_plus": self.psi_plus,
            "psi_minus": self.psi_minus,
            "erasure_flagged": self.erasure_flagged,
            "rejected_same_bin": self.rejected_same_bin,
            "rejected_missing_photon": self.rejected_missing_photon,
            "rejected_out_of_window": self.rejected_out_of_window,
            "false_heralds": self.false_heralds,
            "herald_probability": self.herald_probability,
            "erasure_flag_rate": self.erasure_flag_rate,
            "false_herald_fraction": self.false_herald_fraction,
            "accepted_diff_mean_s": self.diff_mean,
            "accepted_diff_variance_s2": self.diff_variance,
            "accepted_diff_n": self.diff_n,
        }


def herald_classify(
    early_channel: int, late_channel: int, tau_star_s: float, protocol: ProtocolParams
) -> HeraldResult:
    """Herald rule for one early and one late detection: same channel heralds
    Psi+, opposite Psi-, and |tau* - tau| > delta_t rejects the event."""
    if abs(tau_star_s - protocol.tau_s) > protocol.delta_t_s:
        return rejected(RejectReason.OUT_OF_WINDOW)
    return PSI_PLUS if early_channel == late_channel else PSI_MINUS


def sample_arrival_diff(
    tau_r_s: float,
    delta_t_s: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
):
    """Truncated-Laplace arrival-time differences by rejection sampling.

    Draws the difference of two independent Exponential(tau_R) variates and
    rejects |diff| > delta_t; the acceptance probability is exactly the
    window yield Y, and the accepted samples have mean 0 and variance
    2 tau_R^2 W.  ``size=None`` returns a scalar.
    """
    if tau_r_s <= 0 or delta_t_s <= 0:
        raise DomainError("tau_r_s and delta_t_s must be positive")
    n = 1 if size is None else int(size)
    out = np.empty(n)
    have = 0
    y = -math.expm1(-delta_t_s / tau_r_s) if math.isfinite(delta_t_s) else 1.0
    while have < n:
        todo = n - have
        draw = max(1024, int(1.2 * todo / max(y, 1e-6)))
        d = rng.exponential(tau_r_s, draw) - rng.exponential(tau_r_s, draw)
        d = d[np.abs(d) <= delta_t_s][:todo]
        out[have : have + d.size] = d
        have += d.size
    return float(out[0]) if size is None else out


def _sample_arrival_pair(
    tau_r_s: float, delta_t_s: float, rng: np.random.Generator, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Joint (early, late) arrival offsets conditioned on the window cut."""
    if tau_r_s <= 0 or delta_t_s <= 0:
        raise DomainError("tau_r_s and delta_t_s must be positive")
    a_e = np.empty(size)
    a_l = np.empty(size)
    have = 0
    y = -math.expm1(-delta_t_s / tau_r_s)
    while have < size:
        todo = size - have
        draw = max(1024, int(1.2 * todo / max(y, 1e-6)))
        e = rng.exponential(tau_r_s, draw)
        l = rng.exponential(tau_r_s, draw)
        keep = np.abs(l - e) <= delta_t_s
        e, l = e[keep][:todo], l[keep][:todo]
        a_e[have : have + e.size] = e
        a_l[have : have + e.size] = l
        have += e.size
    return a_e, a_l


# ---------------------------------------------------------------------------
# attempt kernel


def _node_draws(n: int, node: NodeSpec, noise: NoiseParams, rng: np.random.Generator) -> dict:
    em = node.emitter
    bin_late = rng.random(n) < 0.5
    excited = rng.random(n) < em.p_exc
    u_branch = rng.random(n)
    leaked = rng.random(n) < (1.0 - em.pol_rejection)
    collected_chain = rng.random(n) < node.chain.efficiency
    arrival = rng.exponential(em.tau_r_s, n)
    channel = (rng.random(n) < 0.5).astype(np.uint8)
    veto_ok = rng.random(n) >= noise.veto_failure

    is_sigma = excited & (u_branch < em.branch_sigma)
    is_pi = excited & ~is_sigma & (u_branch < em.branch_sigma + em.branch_pi)
    is_d = excited & ~is_sigma & ~is_pi
    photon = collected_chain & (is_sigma | (is_pi & leaked))
    in_x = is_pi  # ion left in the wrong ground state
    flagged = in_x & veto_ok if noise.veto_enabled else np.zeros(n, dtype=bool)
    return {
        "bin_late": bin_late,
        "excited": excited,
        "is_sigma": is_sigma,
        "is_pi": is_pi,
        "is_d": is_d,
        "photon": photon,
        "pi_photon": photon & is_pi,
        "flagged": flagged,
        "arrival": arrival,
        "channel": channel,
    }


@dataclass
class _BatchResult:
    tally: RunTally
    diffs: np.ndarray
    records: Optional[np.ndarray]
    a: dict
    b: dict
    kind_codes: np.ndarray  # 0 psi+, 1 psi-, 2 flagged, 3 same-bin, 4 missing, 5 window


def _simulate_batch(
    n: int,
    node_a: NodeSpec,
    node_b: NodeSpec,
    protocol: ProtocolParams,
    noise: NoiseParams,
    rng: np.random.Generator,
    first_attempt_id: int = 0,
    collect_diffs: int = 0,
    emit_records: bool = False,
    suppress_empty: bool = False,
) -> _BatchResult:
    a = _node_draws(n, node_a, noise, rng)
    b = _node_draws(n, node_b, noise, rng)
    shared_channel = (rng.random(n) < 0.5).astype(np.uint8)

    dark = None
    if noise.dark_count_rate_hz > 0:
        p_dark = noise.dark_count_rate_hz * noise.dark_gate_s
        dark = {
            key: (rng.random(n) < p_dark, rng.random(n) * noise.dark_gate_s)
            for key in ("e0", "e1", "l0", "l1")
        }

    # same-bin photon pairs bunch onto one detector
    both = a["photon"] & b["photon"]
    same_bin_pair = both & (a["bin_late"] == b["bin_late"])
    for d in (a, b):
        d["channel"] = np.where(same_bin_pair, shared_channel, d["channel"])

    # detection counts per bin (photons plus dark counts)
    n_early = (a["photon"] & ~a["bin_late"]).astype(np.int8) + (
        b["photon"] & ~b["bin_late"]
    ).astype(np.int8)
    n_late = (a["photon"] & a["bin_late"]).astype(np.int8) + (
        b["photon"] & b["bin_late"]
    ).astype(np.int8)
    if dark is not None:
        n_early += dark["e0"][0].astype(np.int8) + dark["e1"][0].astype(np.int8)
        n_late += dark["l0"][0].astype(np.int8) + dark["l1"][0].astype(np.int8)

    def _bin_single(bin_is_late: bool) -> tuple[np.ndarray, np.ndarray]:
        # time and channel of the detection in a bin, valid where that bin has exactly one
        a_here = a["photon"] & (a["bin_late"] == bin_is_late)
        b_here = b["photon"] & (b["bin_late"] == bin_is_late)
        t = np.where(a_here, a["arrival"], np.where(b_here, b["arrival"], 0.0))
        c = np.where(a_here, a["channel"], np.where(b_here, b["channel"], 0)).astype(np.uint8)
        if dark is not None:
            k0, k1 = ("l0", "l1") if bin_is_late else ("e0", "e1")
            photon_here = a_here | b_here
            d0 = dark[k0][0] & ~photon_here
            t = np.where(d0, dark[k0][1], t)
            c = np.where(d0, 0, c).astype(np.uint8)
            d1 = dark[k1][0] & ~photon_here & ~d0
            t = np.where(d1, dark[k1][1], t)
            c = np.where(d1, 1, c).astype(np.uint8)
        return t, c

    t_early, c_early = _bin_single(False)
    t_late, c_late = _bin_single(True)

    candidate = (n_early == 1) & (n_late == 1)
    diff = t_late - t_early  # == tau* - tau
    in_window = candidate & (np.abs(diff) <= protocol.delta_t_s)
    flagged_evt = in_window & (a["flagged"] | b["flagged"])
    herald = in_window & ~flagged_evt
    psi_plus = herald & (c_early == c_late)
    psi_minus = herald & ~psi_plus
    false_her = herald & (a["pi_photon"] | b["pi_photon"])

    same_bin = ((n_early >= 2) | (n_late >= 2)) & ~candidate
    missing = ~candidate & ~same_bin
    out_window = candidate & ~in_window

    acc = in_window  # accepted coincidences (flagged included) feed the moments
    diffs_acc = diff[acc]
    tally = RunTally(
        attempts=n,
        psi_plus=int(psi_plus.sum()),
        psi_minus=int(psi_minus.sum()),
        erasure_flagged=int(flagged_evt.sum()),
        rejected_same_bin=int(same_bin.sum()),
        rejected_missing_photon=int(missing.sum()),
        rejected_out_of_window=int(out_window.sum()),
        false_heralds=int(false_her.sum()),
        diff_n=int(diffs_acc.size),
        diff_sum=float(diffs_acc.sum()),
        diff_sumsq=float((diffs_acc**2).sum()),
    )

    kind_codes = np.full(n, 4, dtype=np.uint8)
    kind_codes[same_bin] = 3
    kind_codes[out_window] = 5
    kind_codes[flagged_evt] = 2
    kind_codes[psi_minus] = 1
    kind_codes[psi_plus] = 0

    records = None
    if emit_records:
        records = _batch_records(
            n, a, b, dark, protocol, first_attempt_id, suppress_empty
        )
    return _BatchResult(
        tally=tally,
        diffs=diffs_acc[: collect_diffs if collect_diffs else 0],
        records=records,
        a=a,
        b=b,
        kind_codes=kind_codes,
    )


def _batch_records(
    n: int,
    a: dict,
    b: dict,
    dark: Optional[dict],
    protocol: ProtocolParams,
    first_attempt_id: int,
    suppress_empty: bool,
) -> np.ndarray:
    period_ps = int(round(1e12 / protocol.rep_rate_hz))
    tau_ps = int(round(protocol.tau_s * 1e12))
    if period_ps <= _EXC_EARLY_OFFSET_PS + tau_ps:
        raise DomainError("attempt period too short for the bin layout; lower rep_rate_hz")

    idx = np.arange(n, dtype=np.uint64)
    sync_t = idx * np.uint64(period_ps)
    exc_e_t = sync_t + np.uint64(_EXC_EARLY_OFFSET_PS)
    exc_l_t = exc_e_t + np.uint64(tau_ps)
    ids = (first_attempt_id + idx).astype(np.uint32)

    rows_t, rows_id, rows_ch = [], [], []

    def _emit(mask: np.ndarray, t_ps: np.ndarray, channel) -> None:
        rows_t.append(t_ps[mask])
        rows_id.append(ids[mask])
        ch = channel[mask] if isinstance(channel, np.ndarray) else np.full(mask.sum(), channel)
        rows_ch.append(ch.astype(np.uint8))

    has_det = a["photon"] | b["photon"]
    if dark is not None:
        for key in ("e0", "e1", "l0", "l1"):
            has_det = has_det | dark[key][0]
    keep = has_det if suppress_empty else np.ones(n, dtype=bool)

    _emit(keep, sync_t, CHANNEL_SYNC)
    _emit(keep, exc_e_t, CHANNEL_EXC_EARLY)
    _emit(keep, exc_l_t, CHANNEL_EXC_LATE)
    for d in (a, b):
        mark = np.where(d["bin_late"], exc_l_t, exc_e_t)
        t = mark + np.rint(d["arrival"] * 1e12).astype(np.uint64)
        _emit(keep & d["photon"], t, d["channel"])
    if dark is not None:
        for key, mark, ch in (
            ("e0", exc_e_t, 0),
            ("e1", exc_e_t, 1),
            ("l0", exc_l_t, 0),
            ("l1", exc_l_t, 1),
        ):
            t = mark + np.rint(dark[key][1] * 1e12).astype(np.uint64)
            _emit(keep & dark[key][0], t, ch)

    t_all = np.concatenate(rows_t)
    id_all = np.concatenate(rows_id)
    ch_all = np.concatenate(rows_ch)
    rank = (ch_all != CHANNEL_SYNC).astype(np.uint8)
    order = np.lexsort((rank, t_all, id_all))
    out = np.zeros(t_all.size, dtype=RECORD_DTYPE)
    out["t_ps"] = t_all[order]
    out["attempt_id"] = id_all[order]
    out["channel"] = ch_all[order]
    return out


def _wrap_outcome(res: _BatchResult, protocol: ProtocolParams) -> AttemptOutcome:
    def node(d: dict) -> NodeOutcome:
        if d["is_sigma"][0]:
            branch = BRANCH_SIGMA
        elif d["is_pi"][0]:
            branch = BRANCH_PI
        elif d["is_d"][0]:
            branch = BRANCH_D
        else:
            branch = BRANCH_NONE
        has_photon = bool(d["photon"][0])
        return NodeOutcome(
            bin=("late" if d["bin_late"][0] else "early") if has_photon else "none",
            branch=branch,
            collected=has_photon,
            arrival_offset_s=float(d["arrival"][0]) if has_photon else 0.0,
            channel=int(d["channel"][0]),
            erasure_flagged=bool(d["flagged"][0]),
        )

    code = int(res.kind_codes[0])
    herald = {
        0: PSI_PLUS,
        1: PSI_MINUS,
        2: ERASURE_FLAGGED,
        3: rejected(RejectReason.SAME_BIN),
        4: rejected(RejectReason.MISSING_PHOTON),
        5: rejected(RejectReason.OUT_OF_WINDOW),
    }[code]
    both = bool(res.a["photon"][0]) and bool(res.b["photon"][0])
    diff = None
    if both and res.a["bin_late"][0] != res.b["bin_late"][0]:
        late, early = (res.a, res.b) if res.a["bin_late"][0] else (res.b, res.a)
        diff = float(late["arrival"][0] - early["arrival"][0])
    return AttemptOutcome(node_a=node(res.a), node_b=node(res.b), herald=herald, diff_s=diff)


def simulate_attempt(
    node_a: NodeSpec,
    node_b: NodeSpec,
    protocol: ProtocolParams,
    noise: NoiseParams,
    rng: np.random.Generator,
) -> AttemptOutcome:
    """Sample a single entanglement attempt (the batch kernel at size 1)."""
    res = _simulate_batch(1, node_a, node_b, protocol, noise, rng)
    return _wrap_outcome(res, protocol)


@dataclass
class EngineResult:
    tally: RunTally
    diff_samples: np.ndarray
    records: Optional[np.ndarray] = None


def _run_chunk(args) -> EngineResult:
    (n, node_a, node_b, protocol, noise, ss, first_id, collect_diffs, emit, suppress) = args
    rng = np.random.Generator(np.random.Philox(ss))
    tally = RunTally()
    diffs: list[np.ndarray] = []
    recs: list[np.ndarray] = []
    done = 0
    while done < n:
        m = min(_BATCH, n - done)
        res = _simulate_batch(
            m,
            node_a,
            node_b,
            protocol,
            noise,
            rng,
            first_attempt_id=first_id + done,
            collect_diffs=collect_diffs,
            emit_records=emit,
            suppress_empty=suppress,
        )
        tally = tally.merge(res.tally)
        if collect_diffs and sum(d.size for d in diffs) < collect_diffs:
            diffs.append(res.diffs)
        if emit and res.records is not None:
            r = res.records.copy()
            r["t_ps"] += np.uint64(done) * np.uint64(round(1e12 / protocol.rep_rate_hz))
            recs.append(r)
        done += m
    diff_arr = np.concatenate(diffs)[:collect_diffs] if diffs else np.empty(0)
    rec_arr = np.concatenate(recs) if recs else (np.zeros(0, dtype=RECORD_DTYPE) if emit else None)
    return EngineResult(tally=tally, diff_samples=diff_arr, records=rec_arr)


def run_attempts(
    node_a: NodeSpec,
    node_b: NodeSpec,
    protocol: ProtocolParams,
    noise: NoiseParams,
    n_attempts: int,
    seed: int,
    workers: int = 1,
    collect_diffs: int = 0,
    emit_records: bool = False,
    suppress_empty: bool = False,
    parallel: bool = True,
) -> EngineResult:
    """Run the attempt engine.

    Attempts are split into ``workers`` contiguous blocks, one Philox stream
    per block; with ``parallel`` the blocks run in a process pool.  The
    reduction is ordered by worker index, so results depend only on
    ``(seed, workers)``.  ``emit_records`` produces a time-tag stream in the
    event-stream format (``suppress_empty`` drops attempts with no activity).
    """
    if n_attempts < 0:
        raise DomainError("n_attempts must be nonnegative")
    workers = max(1, int(workers))
    if n_attempts == 0:
        return EngineResult(
            tally=RunTally(),
            diff_samples=np.empty(0),
            records=np.zeros(0, dtype=RECORD_DTYPE) if emit_records else None,
        )
    streams = np.random.SeedSequence(seed).spawn(workers)
    base, rem = divmod(n_attempts, workers)
    sizes = [base + (1 if i < rem else 0) for i in range(workers)]
    offsets = np.cumsum([0] + sizes[:-1]).tolist()
    jobs = [
        (
            sizes[i],
            node_a,
            node_b,
            protocol,
            noise,
            streams[i],
            offsets[i],
            collect_diffs,
            emit_records,
            suppress_empty,
        )
        for i in range(workers)
        if sizes[i] > 0
    ]
    if workers > 1 and parallel:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]

    tally = RunTally()
    diffs, recs = [], []
    period_ps = np.uint64(round(1e12 / protocol.rep_rate_hz))
    for part, off in zip(parts, offsets):
        tally = tally.merge(part.tally)
        diffs.append(part.diff_samples)
        if emit_records and part.records is not None:
            r = part.records.copy()
            r["t_ps"] += np.uint64(off) * period_ps
            recs.append(r)
    return EngineResult(
        tally=tally,
        diff_samples=np.concatenate(diffs)[: collect_diffs or None] if diffs else np.empty(0),
        records=np.concatenate(recs) if emit_records else None,
    )


# ---------------------------------------------------------------------------
# numerical coherence oracles


class FockCutoffError(DomainError):
    def __init__(self, nbar: float, cutoff: int, required: int):
        super().__init__(
            f"Fock cutoff {cutoff} is too small for nbar={nbar} (thermal tail plus "
            f"displacement margin); use at least {required}"
        )
        self.required = required


def required_fock_cutoff(nbar: float, tail: float = 1e-10) -> int:
    """Cutoff keeping the excluded thermal weight below ``tail``, plus a
    32-level margin so displacement products retain their intermediate
    states (leakage < 1e-30 for Lamb-Dicke kicks |alpha| < 1)."""
    margin = 32
    if nbar <= 0:
        return 8 + margin
    r = nbar / (nbar + 1.0)
    return max(1, math.ceil(math.log(tail) / math.log(r)) - 1) + margin


def displacement_matrix(alpha: complex, cutoff: int) -> np.ndarray:
    """Displacement operator in the truncated number basis (Cahill-Glauber
    matrix elements via associated Laguerre polynomials)."""
    dim = cutoff + 1
    m = np.arange(dim)
    big_m, big_n = np.meshgrid(m, m, indexing="ij")
    x = abs(alpha) ** 2
    k = np.abs(big_m - big_n)
    nmin = np.minimum(big_m, big_n)
    nmax = np.maximum(big_m, big_n)
    log_ratio = 0.5 * (gammaln(nmin + 1) - gammaln(nmax + 1))
    lag = eval_genlaguerre(nmin, k, x)
    base = np.where(big_m >= big_n, alpha, -np.conj(alpha)) ** k
    return np.exp(log_ratio - x / 2.0) * base * lag


def motional_coherence_fock(
    lamb_dicke: float, freq_hz: float, nbar: float, tau_s: float, fock_cutoff: int
) -> complex:
    """Single-mode motional coherence by direct thermal trace of the two
    recoil displacement kicks in a truncated number basis.

    Independent numerical check of the closed-form factor: the returned
    magnitude is the single-mode time-bin contrast and the argument the
    zero-point phase offset (eta^2 sin(omega tau) sign convention).
    """
    required = required_fock_cutoff(nbar)
    if fock_cutoff < required:
        raise FockCutoffError(nbar, fock_cutoff, required)
    omega_tau = 2.0 * math.pi * freq_hz * tau_s
    d_late = displacement_matrix(-1j * lamb_dicke * np.exp(-1j * omega_tau), fock_cutoff)
    d_early = displacement_matrix(1j * lamb_dicke, fock_cutoff)
    n = np.arange(fock_cutoff + 1, dtype=float)
    if nbar > 0:
        weights = np.exp(n * math.log(nbar / (nbar + 1.0))) / (nbar + 1.0)
    else:
        weights = np.zeros(fock_cutoff + 1)
        weights[0] = 1.0
    return complex(np.einsum("n,nm,mn->", weights, d_late, d_early))


def motional_coherence_sampled(
    zeta: float,
    freq_hz: float,
    nbar: float,
    tau_r_s: float,
    delta_t_s: float,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Monte Carlo estimate of the arrival-time coherence factor: the exact
    per-sample exponent exp[-zeta^2 (2 nbar + 1)(1 - cos(omega diff))]
    averaged over truncated-Laplace arrival differences.  Converges to the
    exact factor that contrast_arrival approximates."""
    if n_samples < 1:
        raise DomainError("n_samples must be positive")
    if zeta == 0.0:
        return 1.0
    diffs = sample_arrival_diff(tau_r_s, delta_t_s, rng, size=n_samples)
    omega = 2.0 * math.pi * freq_hz
    return float(np.mean(np.exp(-(zeta**2) * (2.0 * nbar + 1.0) * (1.0 - np.cos(omega * diffs)))))


# ---------------------------------------------------------------------------
# tomography synthesis


@dataclass(frozen=True)
class MotionalSample:
    """Thermal coherent amplitudes of all modes for one event and the phase
    they imprint on the entangled-state coherence."""

    amplitudes: tuple[complex, ...]
    phase_rad: float


def thermal_alpha(nbar: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Coherent amplitudes of a thermal state: complex Gaussian with
    E[|alpha|^2] = nbar."""
    scale = math.sqrt(nbar / 2.0)
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) * scale


def draw_motional_sample(
    modes: Sequence[TrapMode], tau_s: float, rng: np.random.Generator
) -> MotionalSample:
    """One thermal draw of every mode and the time-bin coherence phase it
    imprints (ion B modes enter the Bell phase with opposite sign)."""
    amps = []
    phase = 0.0
    for m in mode_order(modes):
        s = 1.0 if m.ion == "A" else -1.0
        angle = m.omega * tau_s
        g = 1j * m.eta * (1.0 - np.exp(-1j * angle))
        alpha = complex(thermal_alpha(m.nbar, 1, rng)[0])
        phase += s * (2.0 * np.imag(g * np.conj(alpha)) + m.eta**2 * math.sin(angle))
        amps.append(alpha)
    return MotionalSample(amplitudes=tuple(amps), phase_rad=float(phase))


@dataclass(frozen=True)
class TomographyConfig:
    """What the tomography generator should emulate.

    ``sign`` +1 for the same-channel Bell state, -1 for opposite channels.
    ``static_contrast`` multiplies the per-event motional coherence; with
    ``modes`` empty the total model contrast is ``static_contrast`` exactly.
    """

    sign: int
    p_odd: float
    static_contrast: float
    phase_offset_rad: float = 0.0
    modes: tuple[TrapMode, ...] = ()
    tau_s: float = 6048e-9
    tau_r_s: float = 7.85e-9
    delta_t_s: float = 10e-9
    rep_rate_hz: float = 70e3

    def __post_init__(self) -> None:
        if self.sign not in (-1, 1):
            raise DomainError("sign must be +1 or -1")
        if not 0.0 <= self.p_odd <= 1.0 or not 0.0 <= self.static_contrast <= 1.0:
            raise DomainError("p_odd and static_contrast must be in [0, 1]")

    def model_contrast(self) -> float:
        """Ensemble contrast the generated data converge to."""
        c = self.static_contrast
        if self.modes:
            c *= contrast_timebin(self.modes, self.tau_s)[0]
            big_w = window_stats(self.delta_t_s, self.tau_r_s).big_w
            c *= contrast_arrival(self.modes, self.tau_r_s, big_w)
        return c

    def model_phase_offset(self) -> float:
        """Configured analysis phase plus the deterministic zero-point offsets."""
        phi = self.phase_offset_rad
        if self.modes:
            _, offs = contrast_timebin(self.modes, self.tau_s)
            for m, off in zip(mode_order(self.modes), offs):
                phi += off if m.ion == "A" else -off
        return phi


@dataclass
class TomographyDataset:
    parity_points: list[ParityPoint]
    population_counts: dict[str, int]
    records: np.ndarray  # time-tag stream, one framed attempt per shot
    shot_attempt_ids: np.ndarray
    shot_phases_rad: np.ndarray
    shot_even: np.ndarray  # parity outcome per shot

    def parity_outcomes_by_attempt(self) -> dict[int, tuple[float, bool]]:
        return {
            int(i): (float(p), bool(e))
            for i, p, e in zip(self.shot_attempt_ids, self.shot_phases_rad, self.shot_even)
        }


def _event_phases_and_magnitude(
    cfg: TomographyConfig, diffs: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-event coherence magnitude and sampled motional phase.

    Each mode contributes a deterministic zero-point factor e^{-|g|^2/2} and
    a thermal phase 2 Im(g conj(alpha)) with alpha drawn from the thermal
    coherent-state distribution; the time-bin kick uses omega*tau, the
    emission kick the per-event arrival difference.  Ion B phases enter with
    opposite sign (the Bell phase subtracts the two nodes).
    """
    n = diffs.size
    mag = np.full(n, cfg.static_contrast)
    phase = np.zeros(n)
    for m in mode_order(cfg.modes):
        s = 1.0 if m.ion == "A" else -1.0
        for ld, angle in ((m.eta, m.omega * cfg.tau_s), (m.zeta, m.omega * diffs)):
            g = 1j * ld * (1.0 - np.exp(-1j * np.asarray(angle, dtype=float)))
            alpha = thermal_alpha(m.nbar, n, rng)
            mag *= np.exp(-np.abs(g) ** 2 / 2.0)
            phase += s * (2.0 * np.imag(g * np.conj(alpha)) + ld**2 * np.sin(angle))
    return mag, phase


def synthesize_tomography(
    config: TomographyConfig,
    n_shots_per_phase: int,
    phase_list: Sequence[float],
    rng: np.random.Generator,
    n_population_shots: Optional[int] = None,
) -> TomographyDataset:
    """Generate parity-fringe and population datasets plus the matching
    time-tag stream.

    Every shot is one heralded attempt: the stream carries its SYNC,
    excitation marks and the two detections (channels consistent with the
    configured Bell sign, arrival difference drawn inside the window), and
    the parity outcome at the shot's analysis phase is drawn with
    expectation sign * C_event * cos(phase - phase0 - chi_event) from the
    per-event sampled motional coherence.
    """
    phases = np.asarray(list(phase_list), dtype=float)
    n_total = int(n_shots_per_phase) * phases.size
    if n_total == 0:
        raise DomainError("need at least one phase point and one shot")

    a_early, a_late = _sample_arrival_pair(config.tau_r_s, config.delta_t_s, rng, n_total)
    diffs = a_late - a_early
    mag, chi = _event_phases_and_magnitude(config, diffs, rng)

    shot_phase = np.repeat(phases, n_shots_per_phase)
    expectation = config.sign * mag * np.cos(shot_phase - config.phase_offset_rad - chi)
    even = rng.random(n_total) < (1.0 + expectation) / 2.0

    parity_points = []
    for i, phi in enumerate(phases):
        sel = even[i * n_shots_per_phase : (i + 1) * n_shots_per_phase]
        n_even = int(sel.sum())
        parity_points.append(
            ParityPoint(
                phase_rad=float(phi),
                n_shots=n_shots_per_phase,
                n_even=n_even,
                n_odd=n_shots_per_phase - n_even,
            )
        )

    n_pop = n_total if n_population_shots is None else int(n_population_shots)
    u = rng.random(n_pop)
    half_odd = config.p_odd / 2.0
    population_counts = {
        "down_up": int((u < half_odd).sum()),
        "up_down": int(((u >= half_odd) & (u < config.p_odd)).sum()),
        "down_down": int(((u >= config.p_odd) & (u < config.p_odd + (1 - config.p_odd) / 2)).sum()),
    }
    population_counts["up_up"] = n_pop - sum(population_counts.values())

    records = _tomography_records(config, a_early, a_late, rng)
    return TomographyDataset(
        parity_points=parity_points,
        population_counts=population_counts,
        records=records,
        shot_attempt_ids=np.arange(n_total, dtype=np.uint32),
        shot_phases_rad=shot_phase,
        shot_even=even,
    )


def _tomography_records(
    config: TomographyConfig, a_early: np.ndarray, a_late: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    n = a_early.size
    period_ps = int(round(1e12 / config.rep_rate_hz))
    tau_ps = int(round(config.tau_s * 1e12))
    idx = np.arange(n, dtype=np.uint64)
    sync_t = idx * np.uint64(period_ps)
    exc_e = sync_t + np.uint64(_EXC_EARLY_OFFSET_PS)
    exc_l = exc_e + np.uint64(tau_ps)
    det_e = exc_e + np.rint(a_early * 1e12).astype(np.uint64)
    det_l = exc_l + np.rint(a_late * 1e12).astype(np.uint64)
    ch_e = (rng.random(n) < 0.5).astype(np.uint8)
    ch_l = ch_e if config.sign > 0 else (1 - ch_e).astype(np.uint8)

    out = np.zeros(5 * n, dtype=RECORD_DTYPE)
    t = np.stack([sync_t, exc_e, exc_l, det_e, det_l], axis=1).ravel()
    ch = np.stack(
        [
            np.full(n, CHANNEL_SYNC, dtype=np.uint8),
            np.full(n, CHANNEL_EXC_EARLY, dtype=np.uint8),
            np.full(n, CHANNEL_EXC_LATE, dtype=np.uint8),
            ch_e,
            ch_l,
        ],
        axis=1,
    ).ravel()
    ids = np.repeat(idx.astype(np.uint32), 5)
    out["t_ps"] = t
    out["attempt_id"] = ids
    out["channel"] = ch
    return out
