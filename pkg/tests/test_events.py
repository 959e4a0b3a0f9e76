import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timebinlink import events
from timebinlink.events import (
    CHANNEL_APD0,
    CHANNEL_APD1,
    CHANNEL_EXC_EARLY,
    CHANNEL_EXC_LATE,
    CHANNEL_SYNC,
    AttemptFrame,
    StreamFormatError,
    TimeTagRecord,
    classify_frame,
    classify_frames,
    encode_binary,
    encode_csv,
    frame_attempts,
    parse_stream,
    records_to_array,
    yield_sweep,
)
from timebinlink.types import HeraldKind, ProtocolParams, RejectReason

from conftest import TAU_R_S

PROTO = ProtocolParams(tau_s=6048e-9, delta_t_s=10e-9, rep_rate_hz=70e3, duty=0.3)
TAU_PS = int(PROTO.tau_s * 1e12)


def make_frame(early=(), late=(), attempt_id=7, with_marks=True):
    """Frame with detections given as (channel, offset_ps from the bin mark)."""
    f = AttemptFrame(attempt_id=attempt_id, sync_t_ps=0)
    if with_marks:
        f.exc_early_t_ps = 1000
        f.exc_late_t_ps = 1000 + TAU_PS
    for ch, off in early:
        f.detections.append((ch, f.exc_early_t_ps + off))
    for ch, off in late:
        f.detections.append((ch, f.exc_late_t_ps + off))
    return f


class TestCodec:
    def test_single_binary_record_layout(self):
        rec = TimeTagRecord(t_ps=1000, attempt_id=1, channel=CHANNEL_SYNC)
        blob = encode_binary([rec])
        assert len(blob) == 16
        arr = parse_stream(blob)
        assert arr["t_ps"][0] == 1000 and arr["channel"][0] == 16 and arr["attempt_id"][0] == 1

    def test_csv_line(self):
        arr = parse_stream("attempt_id,channel,t_ps\n1,0,123456\n")
        assert arr["attempt_id"][0] == 1
        assert arr["channel"][0] == CHANNEL_APD0
        assert arr["t_ps"][0] == 123456  # 123.456 ns

    @given(
        st.lists(
            st.tuples(
                st.integers(min_value=0, max_value=2**63),
                st.integers(min_value=0, max_value=2**32 - 1),
                st.sampled_from(sorted(events.VALID_CHANNELS)),
            ),
            max_size=40,
        )
    )
    @settings(max_examples=100, deadline=None)
    def test_roundtrip_binary_and_csv(self, rows):
        rows.sort()  # keep SYNC timestamps monotone
        recs = [TimeTagRecord(t_ps=t, attempt_id=a, channel=c) for t, a, c in rows]
        arr = records_to_array(recs)
        back = parse_stream(encode_binary(arr))
        assert np.array_equal(back, arr)
        back_csv = parse_stream(encode_csv(arr))
        assert np.array_equal(back_csv["t_ps"], arr["t_ps"])
        assert np.array_equal(back_csv["channel"], arr["channel"])
        assert np.array_equal(back_csv["attempt_id"], arr["attempt_id"])

    def test_truncated_record_reports_offset(self):
        blob = encode_binary([TimeTagRecord(0, 0, CHANNEL_SYNC)]) + b"\x01\x02"
        with pytest.raises(StreamFormatError) as err:
            parse_stream(blob)
        assert "byte 16" in str(err.value)

    def test_unknown_channel_code(self):
        arr = records_to_array([TimeTagRecord(0, 0, CHANNEL_SYNC)])
        arr["channel"][0] = 99
        with pytest.raises(StreamFormatError, match="unknown channel"):
            parse_stream(arr.tobytes())

    def test_non_monotone_sync(self):
        recs = [
            TimeTagRecord(5000, 0, CHANNEL_SYNC),
            TimeTagRecord(1000, 1, CHANNEL_SYNC),
        ]
        with pytest.raises(StreamFormatError, match="non-monotone SYNC"):
            parse_stream(encode_binary(recs))

    def test_csv_header_and_field_errors(self):
        with pytest.raises(StreamFormatError, match="header"):
            parse_stream("a,b,c\n1,0,5\n")
        with pytest.raises(StreamFormatError, match="line 2"):
            parse_stream("attempt_id,channel,t_ps\n1,0\n")
        with pytest.raises(StreamFormatError, match="non-integer"):
            parse_stream("attempt_id,channel,t_ps\n1,0,abc\n")


class TestFraming:
    def test_sync_only_frame_is_empty(self):
        framing = frame_attempts([TimeTagRecord(100, 3, CHANNEL_SYNC)])
        assert len(framing.frames) == 1
        f = framing.frames[0]
        assert f.attempt_id == 3 and not f.has_marks and f.detections == []

    def test_complete_frame(self):
        recs = [
            TimeTagRecord(0, 1, CHANNEL_SYNC),
            TimeTagRecord(1000, 1, CHANNEL_EXC_EARLY),
            TimeTagRecord(1000 + TAU_PS, 1, CHANNEL_EXC_LATE),
            TimeTagRecord(1000 + 4000, 1, CHANNEL_APD0),
            TimeTagRecord(1000 + TAU_PS + 6000, 1, CHANNEL_APD1),
        ]
        framing = frame_attempts(recs)
        (f,) = framing.frames
        assert f.has_marks and len(f.detections) == 2
        assert framing.warnings == []

    def test_orphans_before_first_sync(self):
        recs = [
            TimeTagRecord(10, 0, CHANNEL_APD0),
            TimeTagRecord(100, 0, CHANNEL_SYNC),
        ]
        framing = frame_attempts(recs)
        assert len(framing.warnings) == 1 and "orphan" in framing.warnings[0]

    def test_duplicate_marks_warn(self):
        recs = [
            TimeTagRecord(0, 1, CHANNEL_SYNC),
            TimeTagRecord(1000, 1, CHANNEL_EXC_EARLY),
            TimeTagRecord(2000, 1, CHANNEL_EXC_EARLY),
        ]
        framing = frame_attempts(recs)
        assert any("duplicate EXC-EARLY" in w for w in framing.warnings)

    def test_frames_keyed_by_sync_order_not_id(self):
        # shuffled attempt ids with ordered timestamps: framing follows SYNCs
        ids = [5, 2, 9]
        recs = []
        for i, aid in enumerate(ids):
            base = i * 1_000_000
            recs.append(TimeTagRecord(base, aid, CHANNEL_SYNC))
            recs.append(TimeTagRecord(base + 1000, aid, CHANNEL_EXC_EARLY))
        framing = frame_attempts(recs)
        assert [f.attempt_id for f in framing.frames] == ids


class TestClassification:
    def test_equal_channels_herald_psi_plus(self):
        f = make_frame(early=[(0, 4000)], late=[(0, 4000)])
        assert classify_frame(f, PROTO).kind is HeraldKind.PSI_PLUS

    def test_opposite_channels_herald_psi_minus(self):
        f = make_frame(early=[(0, 4000)], late=[(1, 7000)])
        assert classify_frame(f, PROTO).kind is HeraldKind.PSI_MINUS

    def test_both_detections_in_early_bin(self):
        f = make_frame(early=[(0, 3000), (1, 9000)])
        res = classify_frame(f, PROTO)
        assert res.kind is HeraldKind.REJECTED and res.reason is RejectReason.SAME_BIN

    def test_missing_photon(self):
        f = make_frame(early=[(0, 3000)])
        res = classify_frame(f, PROTO)
        assert res.reason is RejectReason.MISSING_PHOTON

    def test_out_of_window(self):
        off = int(2 * PROTO.delta_t_s * 1e12)
        f = make_frame(early=[(0, 1000)], late=[(1, 1000 + off)])
        res = classify_frame(f, PROTO)
        assert res.reason is RejectReason.OUT_OF_WINDOW

    def test_channel_offset_calibration_restores_herald(self):
        # path imbalance delays channel 1 by 25 ns; calibration removes it
        skew = 25_000
        f = make_frame(early=[(0, 4000)], late=[(1, 4000 + skew)])
        assert classify_frame(f, PROTO).reason is RejectReason.OUT_OF_WINDOW
        res = classify_frame(f, PROTO, channel_offsets_ps={1: skew})
        assert res.kind is HeraldKind.PSI_MINUS

    def test_per_bin_mode(self):
        f1 = make_frame(early=[(0, 7850)], late=[(0, 7850)])
        res = classify_frame(f1, PROTO, mode="per-bin", bin_mean_offset_ps=7850)
        assert res.kind is HeraldKind.PSI_PLUS
        f2 = make_frame(early=[(0, 7850 + 30_000)], late=[(0, 7850)])
        res = classify_frame(f2, PROTO, mode="per-bin", bin_mean_offset_ps=7850)
        assert res.reason is RejectReason.OUT_OF_WINDOW

    def test_summary_counts_and_yield(self):
        frames = [
            make_frame(early=[(0, 100)], late=[(0, 200)]),
            make_frame(early=[(0, 100)], late=[(1, 300)]),
            make_frame(early=[(0, 100), (1, 50)]),
            make_frame(early=[(1, 100)]),
            make_frame(with_marks=False),
        ]
        results, summary = classify_frames(frames, PROTO)
        assert summary.n_frames == 5
        assert summary.n_unclassifiable == 1
        assert summary.counts["psi_plus"] == 1
        assert summary.counts["psi_minus"] == 1
        assert summary.counts["same-bin"] == 1
        assert summary.counts["missing-photon"] == 1
        assert summary.n_candidates == 2 and summary.yield_fraction == 1.0
        assert len(results) == 4


def _synthetic_frames(rng, n, tau_r_s=TAU_R_S):
    """Candidate coincidence frames with exponential arrivals in both bins."""
    frames = []
    for i in range(n):
        a_e = int(rng.exponential(tau_r_s) * 1e12)
        a_l = int(rng.exponential(tau_r_s) * 1e12)
        ch = int(rng.integers(0, 2))
        frames.append(make_frame(early=[(ch, a_e)], late=[(int(rng.integers(0, 2)), a_l)], attempt_id=i))
    return frames


class TestYieldSweep:
    def test_monotone_post_selection(self):
        rng = np.random.default_rng(11)
        frames = _synthetic_frames(rng, 3000)
        sweep = yield_sweep(frames, PROTO, [2e-9, 10e-9, 50e-9])
        accepted = {}
        for dt, summary in sweep:
            accepted[dt] = summary.accepted()
        assert accepted[2e-9] <= accepted[10e-9] <= accepted[50e-9]
        # supersets, not just counts
        for dt_small, dt_big in ((2e-9, 10e-9), (10e-9, 50e-9)):
            p_small = ProtocolParams(PROTO.tau_s, dt_small)
            p_big = ProtocolParams(PROTO.tau_s, dt_big)
            ids_small = {
                aid
                for aid, res in classify_frames(frames, p_small)[0]
                if res.accepted
            }
            ids_big = {
                aid for aid, res in classify_frames(frames, p_big)[0] if res.accepted
            }
            assert ids_small <= ids_big

    def test_yields_match_window_statistics(self):
        from timebinlink.physics import window_stats

        rng = np.random.default_rng(7)
        n = 20_000
        frames = _synthetic_frames(rng, n)
        sweep = yield_sweep(frames, PROTO, [2e-9, 10e-9, 50e-9])
        for dt, summary in sweep:
            y = window_stats(dt, TAU_R_S).yield_y
            sigma = (y * (1 - y) / n) ** 0.5
            assert abs(summary.yield_fraction - y) < 3 * max(sigma, 1e-4)
