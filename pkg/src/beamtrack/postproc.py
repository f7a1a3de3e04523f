"""Post-processing of recorded I/Q segments.

Pipeline per segment: moving-average pre-filter, sweep segmentation at the
sweep period, temporal truncation around each sweep's peak, Tukey
time-windowing, and noise elimination against an estimated floor. Received
power is the normalized energy of the surviving bins plus the calibration
offset for the recording gain setting. Processed sweeps are then coupled
with the telemetry logs and exported as CSV/GeoJSON map layers.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal.windows import tukey

from .geodesy import GeoFix, distance_3d
from .sounder import IQSegment, PnConfig, SegmentMeta, pn_autocorr_kernel, read_segment

BELOW_SENSITIVITY = float("-inf")

RX_COUPLE_TOLERANCE_NS = 100_000_000  # moving end
TX_COUPLE_TOLERANCE_NS = 1_000_000_000  # fixed end drifts negligibly


@dataclass(frozen=True)
class PostprocConfig:
    prefilter_len: int = 5
    truncate_halfwidth: int = 2048
    tukey_alpha: float = 0.25
    floor_margin_db: float = 10.0
    dynamic_range_db: float = 20.0  # correlator PDP dynamic range below the peak
    pn: PnConfig = field(default_factory=PnConfig)


@dataclass
class Pdp:
    """One cleaned sweep: linear power bins (mW) over dilated time; eliminated
    bins are zero."""

    bins_mw: np.ndarray
    bin_dt_s: float
    t_start_ns: int
    peak_index: int
    noise_only: bool = False

    @property
    def bins_dbm(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.bins_mw)


@dataclass(frozen=True)
class Calibration:
    """Per-gain-setting correction offsets, generated by pushing a known-power
    synthetic segment through the processing chain."""

    offsets_db: dict[float, float]
    reference_dbm: float = 0.0

    def offset_for(self, gain_db: float) -> float:
        if gain_db not in self.offsets_db:
            raise KeyError(f"no calibration entry for gain {gain_db} dB")
        return self.offsets_db[gain_db]

    def to_json(self) -> str:
        return json.dumps(
            {
                "offsets_db": {str(k): v for k, v in self.offsets_db.items()},
                "reference_dbm": self.reference_dbm,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "Calibration":
        doc = json.loads(text)
        return Calibration(
            offsets_db={float(k): v for k, v in doc["offsets_db"].items()},
            reference_dbm=doc.get("reference_dbm", 0.0),
        )

    @staticmethod
    def identity() -> "Calibration":
        return Calibration(offsets_db={0.0: 0.0, 76.0: -76.0})


@dataclass(frozen=True)
class PowerSample:
    t_ns: int
    rx_power_dbm: float
    fix: GeoFix
    tx_fix: GeoFix
    distance_m: float
    seq: int


@dataclass(frozen=True)
class SegmentIndexEntry:
    iq_path: Path
    meta: SegmentMeta


def index_segments(directory: Path) -> tuple[list[SegmentIndexEntry], list[str]]:
    """Scan a recording directory: segments ordered by start timestamp,
    malformed sidecars skipped with a diagnostic, later file wins on a
    duplicate sequence number."""
    directory = Path(directory)
    diagnostics: list[str] = []
    by_seq: dict[tuple[str, int], SegmentIndexEntry] = {}
    for meta_path in sorted(directory.glob("*/*.meta.json")):
        try:
            meta = SegmentMeta.from_json(meta_path.read_text())
        except (ValueError, TypeError) as exc:
            diagnostics.append(f"malformed sidecar {meta_path}: {exc}")
            continue
        iq_path = meta_path.with_name(f"{meta.seq}.iq")
        if not iq_path.exists():
            diagnostics.append(f"missing iq file for {meta_path}")
            continue
        key = (meta.node_id, meta.seq)
        if key in by_seq:
            diagnostics.append(f"duplicate seq {key}: later file {iq_path} wins")
        by_seq[key] = SegmentIndexEntry(iq_path=iq_path, meta=meta)
    entries = sorted(by_seq.values(), key=lambda e: (e.meta.t_start_ns, e.meta.node_id, e.meta.seq))
    return entries, diagnostics


def _moving_average(x: np.ndarray, n: int) -> np.ndarray:
    kernel = np.ones(n) / n
    return np.convolve(x, kernel, mode="same")


def process_segment(segment: IQSegment, cfg: PostprocConfig = PostprocConfig()) -> list[Pdp]:
    """Clean a recorded segment into one Pdp per complete sweep."""
    fs = segment.meta.sample_rate_hz
    sweep_samples = int(round(cfg.pn.sweep_period_s * fs))
    filtered = _moving_average(segment.samples.real, cfg.prefilter_len) + 1j * _moving_average(
        segment.samples.imag, cfg.prefilter_len
    )
    power = np.abs(filtered) ** 2
    n_sweeps = len(power) // sweep_samples
    window = tukey(2 * cfg.truncate_halfwidth + 1, cfg.tukey_alpha)
    pdps: list[Pdp] = []
    for s in range(n_sweeps):
        sweep = power[s * sweep_samples : (s + 1) * sweep_samples]
        peak = int(np.argmax(sweep))
        idx = (np.arange(-cfg.truncate_halfwidth, cfg.truncate_halfwidth + 1) + peak) % sweep_samples
        retained = sweep[idx] * window
        floor = _noise_floor(retained)
        peak_power = retained[cfg.truncate_halfwidth]
        threshold = max(
            floor * 10.0 ** (cfg.floor_margin_db / 10.0),
            peak_power * 10.0 ** (-cfg.dynamic_range_db / 10.0),
        )
        noise_only = bool(_is_noise_only(sweep, idx, peak_power))
        cleaned = np.where(retained >= threshold, retained, 0.0)
        if noise_only:
            cleaned = np.zeros_like(retained)
        t_start = segment.meta.t_start_ns + int(round(s * sweep_samples / fs * 1e9))
        pdps.append(
            Pdp(
                bins_mw=cleaned,
                bin_dt_s=1.0 / fs,
                t_start_ns=t_start,
                peak_index=peak,
                noise_only=noise_only,
            )
        )
    return pdps


def _is_noise_only(sweep: np.ndarray, retained_idx: np.ndarray, peak_power: float) -> bool:
    """A sweep is noise-only when its peak is consistent with the extreme
    value of the out-of-window noise: for n exponential noise bins of mean mu
    the maximum concentrates near mu*ln(n), so a peak below mu*(ln(n)+10)
    carries no detectable tap. The +10 headroom absorbs the heavier extremes
    the smoothing prefilter introduces through bin correlation."""
    outside = np.delete(sweep, retained_idx)
    if len(outside) == 0:
        return False
    mu = float(np.mean(outside))
    if mu <= 0.0:
        return peak_power <= 0.0
    return peak_power < mu * (math.log(len(outside)) + 10.0)


def _noise_floor(power_bins: np.ndarray) -> float:
    """Median power of the lowest quartile of bins."""
    lowest = np.sort(power_bins)[: max(1, len(power_bins) // 4)]
    return float(np.median(lowest))


@lru_cache(maxsize=8)
def sweep_energy_normalization(cfg: PostprocConfig = PostprocConfig(), fs: float = 2.0e6) -> float:
    """Retained energy, in seconds, of a unit-amplitude reference sweep pushed
    through the same cleanup steps the pipeline applies. Dividing a sweep's
    retained energy by this maps it back to tap power."""
    from .sounder import slide_factor

    pn = cfg.pn
    gamma = slide_factor(pn)
    sweep_samples = int(round(pn.sweep_period_s * fs))
    t_true = np.arange(sweep_samples) / fs / gamma
    amplitude = pn_autocorr_kernel(t_true, pn.chip_s, pn.length)
    # center the pulse so the zero-padded pre-filter sees it whole, as it
    # does for a sweep recorded mid-segment
    amplitude = np.roll(amplitude, sweep_samples // 2)
    filtered = _moving_average(amplitude, cfg.prefilter_len)
    power = filtered**2
    peak = int(np.argmax(power))
    idx = (np.arange(-cfg.truncate_halfwidth, cfg.truncate_halfwidth + 1) + peak) % sweep_samples
    window = tukey(2 * cfg.truncate_halfwidth + 1, cfg.tukey_alpha)
    retained = power[idx] * window
    floor = _noise_floor(retained)
    threshold = max(
        floor * 10.0 ** (cfg.floor_margin_db / 10.0),
        retained[cfg.truncate_halfwidth] * 10.0 ** (-cfg.dynamic_range_db / 10.0),
    )
    cleaned = np.where(retained >= threshold, retained, 0.0)
    return float(np.sum(cleaned)) / fs


def received_power_dbm(
    pdp: Pdp, cal: Calibration, gain_db: float, cfg: PostprocConfig = PostprocConfig()
) -> float:
    """Calibrated received power of one sweep; noise-only sweeps map to the
    below-sensitivity sentinel."""
    offset = cal.offset_for(gain_db)
    if pdp.noise_only:
        return BELOW_SENSITIVITY
    energy = float(np.sum(pdp.bins_mw)) * pdp.bin_dt_s
    if energy <= 0.0:
        return BELOW_SENSITIVITY
    return 10.0 * math.log10(energy / sweep_energy_normalization(cfg)) + offset


def make_calibration(
    cfg: PostprocConfig = PostprocConfig(), reference_dbm: float = -50.0
) -> Calibration:
    """Generate the gain-offset table by running a known-power synthetic
    segment through the chain at each gain setting and storing the residual."""
    from .sounder import (
        ChannelTap,
        SEGMENT_SAMPLES,
        correlator_output,
        pn_sequence,
        slide_factor,
    )

    chips = pn_sequence(cfg.pn)
    gamma = slide_factor(cfg.pn)
    # mid-sweep injection point keeps the reference pulse clear of segment edges
    reference_delay_s = cfg.pn.sweep_period_s / gamma / 4.0
    offsets: dict[float, float] = {}
    for gain in (0.0, 76.0):
        meta = SegmentMeta(node_id="cal", seq=0, t_start_ns=0, gain_db=gain)
        stream = correlator_output(
            chips,
            [ChannelTap(delay_s=reference_delay_s, gain_db=reference_dbm)],
            gamma,
            meta,
            chip_rate_hz=cfg.pn.tx_chip_rate_hz,
            noise_floor_dbm=None,
        )
        segment = IQSegment(samples=stream[:SEGMENT_SAMPLES], meta=meta)
        pdp = process_segment(segment, cfg)[0]
        raw = received_power_dbm(pdp, Calibration(offsets_db={gain: 0.0}), gain, cfg)
        offsets[gain] = reference_dbm - raw
    return Calibration(offsets_db=offsets, reference_dbm=reference_dbm)


def geo_couple(
    pdp_powers: list[tuple[Pdp, float]],
    rx_telemetry: list[tuple[int, GeoFix]],
    tx_telemetry: list[tuple[int, GeoFix]],
) -> tuple[list[PowerSample], list[str]]:
    """Match each sweep to the nearest RX fix within 100 ms and the nearest
    TX fix within 1 s; unmatched sweeps are dropped with a diagnostic."""
    samples: list[PowerSample] = []
    diagnostics: list[str] = []
    rx_times = [t for t, _ in rx_telemetry]
    tx_times = [t for t, _ in tx_telemetry]
    for seq, (pdp, power) in enumerate(pdp_powers):
        rx = _nearest(rx_telemetry, rx_times, pdp.t_start_ns, RX_COUPLE_TOLERANCE_NS)
        tx = _nearest(tx_telemetry, tx_times, pdp.t_start_ns, TX_COUPLE_TOLERANCE_NS)
        if rx is None or tx is None:
            diagnostics.append(
                f"sweep {seq} at t={pdp.t_start_ns} ns: no "
                f"{'RX' if rx is None else 'TX'} fix within tolerance"
            )
            continue
        samples.append(
            PowerSample(
                t_ns=pdp.t_start_ns,
                rx_power_dbm=power,
                fix=rx,
                tx_fix=tx,
                distance_m=distance_3d(rx, tx),
                seq=seq,
            )
        )
    return samples, diagnostics


def _nearest(
    telemetry: list[tuple[int, GeoFix]], times: list[int], t_ns: int, tol_ns: int
) -> Optional[GeoFix]:
    if not telemetry:
        return None
    i = bisect.bisect_left(times, t_ns)
    best = None
    best_dt = tol_ns + 1
    for j in (i - 1, i):
        if 0 <= j < len(times):
            dt = abs(times[j] - t_ns)
            if dt < best_dt:
                best_dt = dt
                best = telemetry[j][1]
    return best if best_dt <= tol_ns else None


def export_geojson(samples: list[PowerSample], tx_fix: Optional[GeoFix] = None) -> dict:
    """FeatureCollection of power-tagged Point features plus one
    diamond-styled feature for the fixed transmit site."""
    features = []
    if tx_fix is None and samples:
        tx_fix = samples[0].tx_fix
    if tx_fix is not None:
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [tx_fix.lon_deg, tx_fix.lat_deg, tx_fix.alt_m],
                },
                "properties": {"role": "tx", "marker-symbol": "diamond", "marker-color": "#800080"},
            }
        )
    for s in samples:
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [s.fix.lon_deg, s.fix.lat_deg, s.fix.alt_m],
                },
                "properties": {
                    "rx_power_dbm": None if math.isinf(s.rx_power_dbm) else s.rx_power_dbm,
                    "t_ns": s.t_ns,
                    "distance_m": s.distance_m,
                    "seq": s.seq,
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def load_telemetry_log(path: Path) -> tuple[list[tuple[int, GeoFix]], list[tuple[int, GeoFix]]]:
    """Parse an NDJSON telemetry log into time-sorted (t_ns, fix) streams for
    the RX and TX nodes."""
    rx: list[tuple[int, GeoFix]] = []
    tx: list[tuple[int, GeoFix]] = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        fix = GeoFix(
            lat_deg=doc["lat_deg"],
            lon_deg=doc["lon_deg"],
            alt_m=doc["alt_m"],
            t_ns=doc["t_ns"],
            sigma_enu_m=tuple(doc["sigma_enu_m"]),
            rtk_applied=doc["rtk"],
        )
        (rx if doc["node_id"] == "rx" else tx).append((doc["t_ns"], fix))
    rx.sort(key=lambda p: p[0])
    tx.sort(key=lambda p: p[0])
    return rx, tx


def run_postproc(
    in_dir: Path,
    telemetry_path: Path,
    cal: Calibration,
    out_dir: Path,
    cfg: PostprocConfig = PostprocConfig(),
) -> dict:
    """Full chain over a recording directory; writes results.geojson,
    power.csv, and diagnostics NDJSON. Returns a summary dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, diagnostics = index_segments(in_dir)
    rx_log, tx_log = load_telemetry_log(telemetry_path)
    pdp_powers: list[tuple[Pdp, float]] = []
    for entry in entries:
        segment = read_segment(entry.iq_path, entry.meta)
        for pdp in process_segment(segment, cfg):
            power = received_power_dbm(pdp, cal, entry.meta.gain_db, cfg)
            pdp_powers.append((pdp, power))
    coupled, couple_diags = geo_couple(pdp_powers, rx_log, tx_log)
    diagnostics.extend(couple_diags)

    tx_fix = tx_log[0][1] if tx_log else None
    geojson = export_geojson(coupled, tx_fix)
    (out_dir / "results.geojson").write_text(json.dumps(geojson, sort_keys=True, indent=1))
    lines = ["t_ns,lat,lon,alt,rx_power_dbm,distance_m"]
    for s in coupled:
        power = "" if math.isinf(s.rx_power_dbm) else f"{s.rx_power_dbm:.3f}"
        lines.append(
            f"{s.t_ns},{s.fix.lat_deg:.9f},{s.fix.lon_deg:.9f},{s.fix.alt_m:.3f},"
            f"{power},{s.distance_m:.3f}"
        )
    (out_dir / "power.csv").write_text("\n".join(lines) + "\n")
    (out_dir / "diagnostics.ndjson").write_text(
        "\n".join(json.dumps({"diagnostic": d}) for d in diagnostics) + ("\n" if diagnostics else "")
    )
    return {
        "segments": len(entries),
        "sweeps": len(pdp_powers),
        "coupled": len(coupled),
        "diagnostics": len(diagnostics),
    }
