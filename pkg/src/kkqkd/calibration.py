"""Shot-noise and electronic-noise calibration through the receiver's own DSP.

Shot noise is measured by sending the DC component alone through the
reference attenuation and running the full KK chain.  Electronic noise is
measured on a dark trace: the mean photocurrent ``C`` of the shot-noise run is
added to it so that the KK nonlinearity sees the same operating point, and it
then goes through the identical KK and demodulation chain.  Since the dark
noise is also present in the shot-noise run, it is subtracted from the
measured variance to obtain the vacuum (SNU) variance.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import _random, link, receiver
from .receiver import PhotocurrentTrace


@dataclass(frozen=True)
class ShotNoiseRun:
    variance: float
    a_r_reference: float
    c_offset: float
    winding_failures: int = 0


@dataclass(frozen=True)
class CalibrationRecord:
    """Calibrated receiver constants.

    Attributes
    ----------
    snu_per_quadrature : float
        Raw per-quadrature symbol variance of the vacuum alone (one SNU).
    v_el : float
        Electronic noise in SNU.
    a_r_reference : float
        Recovered DC amplitude at calibration.
    c_offset : float
        Mean photocurrent of the shot-noise run.
    """

    snu_per_quadrature: float
    v_el: float
    a_r_reference: float
    c_offset: float

    def __post_init__(self) -> None:
        if not self.snu_per_quadrature > 0:
            raise ValueError(f"snu_per_quadrature must be > 0 (got {self.snu_per_quadrature})")
        if self.v_el < 0:
            raise ValueError(f"v_el must be >= 0 (got {self.v_el})")


def _quadrature_variance(symbols: np.ndarray) -> float:
    return 0.5 * float(np.var(symbols.real) + np.var(symbols.imag))


def calibrate_shot_noise(setup: link.LinkSetup, seed: int, n_frames: int = 1) -> ShotNoiseRun:
    """DC-only frames through the reference channel and the full receiver.

    ``setup.channel`` plays the reference attenuator; its excess noise is
    ignored.  Returns the mean per-quadrature variance of the demodulated
    symbols, the mean DC amplitude and the mean photocurrent.
    """
    if n_frames < 1:
        raise ValueError("need at least one calibration frame")
    reference = setup.replace(channel=type(setup.channel)(setup.channel.transmittance_t, 0.0))
    variances, a_rs, currents = [], [], []
    failures = 0
    for frame in range(n_frames):
        frame_seed = _random.derive_seed(seed, frame)
        result = link.run_frame(reference, frame_seed, modulated=False, keep_trace=True)
        if result.rx.clip_fraction > receiver.CLIP_FLAG_FRACTION:
            failures += 1
            continue
        variances.append(_quadrature_variance(result.rx.symbols))
        a_rs.append(result.rx.a_r_estimate)
        currents.append(float(np.mean(result.trace.samples)))
    if not variances:
        raise RuntimeError(f"all {n_frames} calibration frames failed the minimum-phase check")
    return ShotNoiseRun(float(np.mean(variances)), float(np.mean(a_rs)), float(np.mean(currents)), failures)


def dark_trace(setup: link.LinkSetup, seed: int) -> PhotocurrentTrace:
    """Photocurrent with no light: electronic noise only."""
    p = setup.params
    rng = _random.make_rng(seed, _random.ELECTRONIC)
    noise = math.sqrt(setup.receiver.v_el_physical) * _random.standard_normal(rng, p.n_samples)
    return PhotocurrentTrace(noise, p.sample_rate, setup.mu)


def electronic_variance_raw(elec_trace: PhotocurrentTrace, c_offset: float, setup: link.LinkSetup) -> float:
    """Raw per-quadrature symbol variance of ``elec_trace + C`` after KK and demodulation."""
    if len(elec_trace) < setup.params.n_samples:
        raise ValueError(
            f"electronic-noise trace has {len(elec_trace)} samples, the frame needs {setup.params.n_samples}"
        )
    if c_offset <= 0:
        raise ValueError(f"offset C must be > 0 (got {c_offset})")
    trimmed = PhotocurrentTrace(elec_trace.samples[:setup.params.n_samples], elec_trace.sample_rate, elec_trace.mu)
    frame = link.recover(trimmed.offset(c_offset), setup)
    return _quadrature_variance(frame.symbols)


def calibrate_electronic_noise(elec_trace: PhotocurrentTrace, c_offset: float, snu_per_quadrature: float,
                               setup: link.LinkSetup) -> float:
    """Electronic noise in SNU, both quadratures averaged."""
    if not snu_per_quadrature > 0:
        raise ValueError(f"snu_per_quadrature must be > 0 (got {snu_per_quadrature})")
    return electronic_variance_raw(elec_trace, c_offset, setup) / snu_per_quadrature


def calibrate(setup: link.LinkSetup, seed: int, n_frames: int = 1, n_dark_frames: int = 1) -> CalibrationRecord:
    """Run both calibrations and combine them into a record.

    The dark-trace variance enters only through ``v_el`` and the small
    subtraction from the shot-noise run, so fewer dark frames are needed.
    """
    if n_dark_frames < 1:
        raise ValueError("need at least one dark frame")
    shot = calibrate_shot_noise(setup, _random.derive_seed(seed, 0), n_frames)
    el_raw = [
        electronic_variance_raw(dark_trace(setup, _random.derive_seed(seed, 1, k)), shot.c_offset, setup)
        for k in range(n_dark_frames)
    ]
    el_raw_mean = float(np.mean(el_raw))
    snu = shot.variance - el_raw_mean
    if snu <= 0:
        raise RuntimeError(
            f"electronic noise ({el_raw_mean:.4g}) swamps the shot-noise run ({shot.variance:.4g}); no SNU defined"
        )
    return CalibrationRecord(snu, el_raw_mean / snu, shot.a_r_reference, shot.c_offset)


def save_records(path: str | Path, records: Mapping[str, CalibrationRecord]) -> None:
    """Write named records as INI sections; floats use ``repr`` so reloads are exact."""
    parser = configparser.ConfigParser()
    for name, rec in records.items():
        parser[name] = {k: repr(float(v)) for k, v in asdict(rec).items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_records(path: str | Path) -> dict[str, CalibrationRecord]:
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"calibration file not found: {path}")
    names = [f.name for f in fields(CalibrationRecord)]
    out = {}
    for section in parser.sections():
        sec = parser[section]
        missing = [n for n in names if n not in sec]
        if missing:
            raise ValueError(f"calibration section [{section}] lacks {', '.join(missing)}")
        out[section] = CalibrationRecord(**{n: sec.getfloat(n) for n in names})
    return out
