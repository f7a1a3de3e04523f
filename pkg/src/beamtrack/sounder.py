"""Sliding-correlator channel sounding synthesis.

The correlator output is synthesized directly in dilated time: each channel
tap contributes the triangular PN autocorrelation kernel stretched by the
slide factor, so one sweep of the power-delay profile spans L*gamma/alpha
seconds of the 2 Msps baseband stream. This is equivalent to the RF-rate
picture for the PDP envelope and orders of magnitude cheaper.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .geodesy import GeoFix, bearing_elevation, distance_3d
from .pointing import AntennaPattern, gain_dbi, pointing_error_deg

C_M_PER_S = 299_792_458.0
SEGMENT_SAMPLES = 1_000_000
DEFAULT_NOISE_FLOOR_DBM = -90.0
GAIN_SETTINGS_DB = (0.0, 76.0)

# Maximal-length feedback taps per register length (Fibonacci LFSR).
MAXIMAL_TAPS = {
    3: (3, 2),
    4: (4, 3),
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    8: (8, 6, 5, 4),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
}


class SounderConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PnConfig:
    stages: int = 11
    taps: tuple[int, ...] = (11, 9)
    tx_chip_rate_hz: float = 4.0e8
    rx_chip_rate_hz: float = 3.9995e8

    @property
    def length(self) -> int:
        return 2**self.stages - 1

    @property
    def chip_s(self) -> float:
        return 1.0 / self.tx_chip_rate_hz

    @property
    def sweep_period_s(self) -> float:
        return self.length * slide_factor(self) / self.tx_chip_rate_hz


@dataclass(frozen=True)
class ChannelTap:
    delay_s: float
    gain_db: float
    phase_rad: float = 0.0


@dataclass(frozen=True)
class SegmentMeta:
    node_id: str
    seq: int
    t_start_ns: int
    sample_rate_hz: float = 2.0e6
    center_freq_hz: float = 2.5e9
    gain_db: float = 0.0
    n_samples: int = SEGMENT_SAMPLES

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "SegmentMeta":
        return SegmentMeta(**json.loads(text))


@dataclass(frozen=True)
class IQSegment:
    samples: np.ndarray  # complex64, exactly SEGMENT_SAMPLES long
    meta: SegmentMeta

    def __post_init__(self) -> None:
        if len(self.samples) != SEGMENT_SAMPLES:
            raise ValueError(f"segment holds {len(self.samples)} samples, need {SEGMENT_SAMPLES}")


def pn_sequence(cfg: PnConfig) -> np.ndarray:
    """Maximal-length LFSR chips mapped {0 -> +1, 1 -> -1}, period 2^n - 1.

    Non-maximal taps fail the period check and raise.
    """
    n = cfg.stages
    length = cfg.length
    state = (1 << n) - 1  # all-ones seed
    chips = np.empty(length, dtype=np.int8)
    seen_initial = state
    for i in range(length):
        bit = state & 1
        chips[i] = -1 if bit else 1
        fb = 0
        for tap in cfg.taps:
            fb ^= (state >> (n - tap)) & 1
        state = (state >> 1) | (fb << (n - 1))
        if state == seen_initial and i < length - 1:
            raise SounderConfigError(
                f"taps {cfg.taps} not maximal for n={n}: period {i + 1} < {length}"
            )
    if state != seen_initial:
        raise SounderConfigError(f"taps {cfg.taps} not maximal for n={n}")
    return chips


def slide_factor(cfg: PnConfig) -> float:
    """gamma = alpha / (alpha - beta)."""
    if cfg.tx_chip_rate_hz <= cfg.rx_chip_rate_hz:
        raise SounderConfigError("tx chip rate must exceed rx chip rate")
    return cfg.tx_chip_rate_hz / (cfg.tx_chip_rate_hz - cfg.rx_chip_rate_hz)


def fspl_db(distance_m: float, f_hz: float) -> float:
    """Free-space path loss, 20*log10(4*pi*d*f/c)."""
    return 20.0 * math.log10(4.0 * math.pi * distance_m * f_hz / C_M_PER_S)


@dataclass(frozen=True)
class Reflector:
    """Specular scene reflector: extra path length and reflection loss."""

    extra_path_m: float
    loss_db: float


def channel_taps(
    tx_fix: GeoFix,
    tx_attitude: tuple[float, float],
    tx_pattern: AntennaPattern,
    rx_fix: GeoFix,
    rx_attitude: tuple[float, float],
    rx_pattern: AntennaPattern,
    reflectors: tuple[Reflector, ...] = (),
    f_hz: float = 28e9,
    tx_power_dbm: float = 0.0,
) -> list[ChannelTap]:
    """Geometry-driven taps: line-of-sight Friis tap plus optional specular
    reflector taps with extra path length and reflection loss.

    Off-boresight angles come from the great-circle separation between each
    mount's boresight and the line of sight.
    """
    d = distance_3d(tx_fix, rx_fix)
    los_tx = bearing_elevation(tx_fix, rx_fix)  # raises on coincident endpoints
    los_rx = bearing_elevation(rx_fix, tx_fix)
    theta_t = pointing_error_deg(tx_attitude, los_tx)
    theta_r = pointing_error_deg(rx_attitude, los_rx)
    g_t = gain_dbi(tx_pattern, theta_t)
    g_r = gain_dbi(rx_pattern, theta_r)

    def tap(path_m: float, extra_loss_db: float) -> ChannelTap:
        gain = tx_power_dbm + g_t + g_r - fspl_db(path_m, f_hz) - extra_loss_db
        phase = (2.0 * math.pi * f_hz * path_m / C_M_PER_S) % (2.0 * math.pi)
        return ChannelTap(delay_s=path_m / C_M_PER_S, gain_db=gain, phase_rad=phase)

    taps = [tap(d, 0.0)]
    for r in reflectors:
        taps.append(tap(d + r.extra_path_m, r.loss_db))
    return taps


def pn_autocorr_kernel(offset_s: np.ndarray, chip_s: float, length: int) -> np.ndarray:
    """Normalized circular m-sequence autocorrelation: 1 at zero lag, falling
    linearly to -1/L within one chip, -1/L elsewhere. Offsets are reduced
    modulo the sequence period."""
    period = length * chip_s
    x = np.mod(offset_s, period)
    x = np.minimum(x, period - x)
    pedestal = -1.0 / length
    tri = 1.0 - (x / chip_s) * (1.0 + 1.0 / length)
    return np.where(x < chip_s, tri, pedestal)


def correlator_output(
    chips: np.ndarray,
    taps: list[ChannelTap],
    gamma: float,
    meta: SegmentMeta,
    chip_rate_hz: float = 4.0e8,
    noise_floor_dbm: Optional[float] = DEFAULT_NOISE_FLOOR_DBM,
    rng: Optional[np.random.Generator] = None,
    n_samples: int = SEGMENT_SAMPLES,
) -> np.ndarray:
    """Dilated-time baseband stream at the recording sample rate.

    Each tap places the triangular PN autocorrelation at its dilated delay;
    amplitudes carry the tap power in sqrt(mW); complex white noise sits at
    the configured floor. The front-end gain setting scales the stream and is
    undone downstream by calibration.
    """
    if gamma <= 1.0:
        raise SounderConfigError(f"slide factor {gamma} must exceed 1")
    length = len(chips)
    chip_s = 1.0 / chip_rate_hz
    fs = meta.sample_rate_hz
    t_true = np.arange(n_samples) / fs / gamma  # de-dilated timeline
    stream = np.zeros(n_samples, dtype=np.complex128)
    for tap in taps:
        amp = 10.0 ** (tap.gain_db / 20.0)
        kernel = pn_autocorr_kernel(t_true - tap.delay_s, chip_s, length)
        stream += amp * kernel * np.exp(1j * tap.phase_rad)
    if noise_floor_dbm is not None and math.isfinite(noise_floor_dbm):
        if rng is None:
            rng = np.random.default_rng(0)
        sigma = math.sqrt(10.0 ** (noise_floor_dbm / 10.0) / 2.0)
        stream += sigma * (rng.standard_normal(n_samples) + 1j * rng.standard_normal(n_samples))
    stream *= 10.0 ** (meta.gain_db / 20.0)
    return stream.astype(np.complex64)


def record_segment(stream: np.ndarray, meta: SegmentMeta, out_dir: Path) -> tuple[Path, Path]:
    """Write exactly one segment: raw interleaved float32 LE I/Q pairs plus a
    JSON sidecar. Returns (iq_path, meta_path)."""
    if len(stream) < meta.n_samples:
        raise ValueError(f"stream yields {len(stream)} samples, need {meta.n_samples}")
    node_dir = Path(out_dir) / meta.node_id
    node_dir.mkdir(parents=True, exist_ok=True)
    iq_path = node_dir / f"{meta.seq}.iq"
    meta_path = node_dir / f"{meta.seq}.meta.json"
    samples = np.asarray(stream[: meta.n_samples], dtype=np.complex64)
    interleaved = np.empty(2 * meta.n_samples, dtype="<f4")
    interleaved[0::2] = samples.real
    interleaved[1::2] = samples.imag
    iq_path.write_bytes(interleaved.tobytes())
    meta_path.write_text(meta.to_json())
    return iq_path, meta_path


def read_segment(iq_path: Path, meta: SegmentMeta) -> IQSegment:
    raw = np.frombuffer(Path(iq_path).read_bytes(), dtype="<f4")
    samples = (raw[0::2] + 1j * raw[1::2]).astype(np.complex64)
    return IQSegment(samples=samples, meta=meta)
