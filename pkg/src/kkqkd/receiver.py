"""Direct detection, Kramers-Kronig field recovery and symbol demodulation."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft
from scipy import signal

from . import _random
from .waveform import ComplexWaveform, ModulationParams, SymbolFrame, _pulse_spectrum, frequency_shift

CLIP_FLOOR = 1e-12
CLIP_FLAG_FRACTION = 1e-3


class MinimumPhaseError(RuntimeError):
    """Raised when a trace cannot have come from a minimum-phase field."""


@dataclass(frozen=True)
class PhotocurrentTrace:
    samples: np.ndarray
    sample_rate: float
    mu: float = 1.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("photocurrent trace must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("photocurrent trace must be finite")
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0 (got {self.mu})")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be > 0 (got {self.sample_rate})")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    def offset(self, c: float) -> "PhotocurrentTrace":
        return PhotocurrentTrace(self.samples + c, self.sample_rate, self.mu)


@dataclass(frozen=True)
class RecoveredFrame:
    symbols: np.ndarray
    a_r_estimate: float
    alignment_lag: int = 0
    clip_fraction: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "symbols", np.asarray(self.symbols, dtype=complex))

    def __len__(self) -> int:
        return self.symbols.size

    def as_symbol_frame(self) -> SymbolFrame:
        return SymbolFrame(self.symbols)


def direct_detect(wf: ComplexWaveform, mu: float = 1.0, elec_noise_variance: float = 0.0,
                  seed: int = 0) -> PhotocurrentTrace:
    """Square-law detection ``I = mu |E|^2`` plus real white electronic noise.

    Only ``wf.samples`` is read; the optical phase track drops out exactly.
    """
    if elec_noise_variance < 0:
        raise ValueError(f"electronic noise variance must be >= 0 (got {elec_noise_variance})")
    current = mu * (wf.samples.real ** 2 + wf.samples.imag ** 2)
    if elec_noise_variance > 0:
        rng = _random.make_rng(seed, _random.ELECTRONIC)
        current = current + math.sqrt(elec_noise_variance) * _random.standard_normal(rng, current.size)
    return PhotocurrentTrace(current, wf.sample_rate, mu)


def hilbert(x: np.ndarray) -> np.ndarray:
    """Circular discrete Hilbert transform, frequency response ``-i sgn(f)``.

    The DC bin and, for even lengths, the Nyquist bin map to zero.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    spec = sp_fft.rfft(x)
    # -i on positive bins; DC and an even-length Nyquist bin are zeroed
    spec = -1j * spec
    spec[0] = 0.0
    if n % 2 == 0:
        spec[-1] = 0.0
    return sp_fft.irfft(spec, n)


def clip_fraction(samples: np.ndarray, floor_fraction: float = CLIP_FLOOR) -> float:
    floor = floor_fraction * float(np.max(samples))
    return float(np.mean(samples < floor))


def kk_recover(trace: PhotocurrentTrace, upsample_factor: int = 4, strict: bool = False) -> ComplexWaveform:
    """Rebuild the minimum-phase field from its intensity.

    The trace is interpolated by ``upsample_factor`` before the ``sqrt``/``ln``
    chain, which broadens the spectrum, then brought back to the input rate.
    Samples below ``1e-12 * max(I)`` are clamped; the clamped fraction is
    returned in ``meta['clip_fraction']`` and ``meta['flagged']`` is set when it
    exceeds 0.1 %.  With ``strict`` a flagged frame raises
    :class:`MinimumPhaseError` instead.
    """
    if int(upsample_factor) != upsample_factor or upsample_factor < 1:
        raise ValueError(f"upsample_factor must be an integer >= 1 (got {upsample_factor})")
    n = len(trace)
    current = trace.samples
    if upsample_factor > 1:
        current = signal.resample(current, n * int(upsample_factor))
    peak = float(np.max(current))
    if peak <= 0:
        raise MinimumPhaseError("photocurrent has no positive samples")
    floor = CLIP_FLOOR * peak
    clipped = float(np.mean(current < floor))
    flagged = clipped > CLIP_FLAG_FRACTION
    if flagged and strict:
        raise MinimumPhaseError(f"{clipped:.2%} of photocurrent samples clamped; field is not minimum phase")
    log_amp = 0.5 * np.log(np.maximum(current, floor) / trace.mu)
    field = np.exp(log_amp + 1j * hilbert(log_amp))
    if upsample_factor > 1:
        field = signal.resample(field, n)
    return ComplexWaveform(field, trace.sample_rate, meta={"clip_fraction": clipped, "flagged": flagged})


def estimate_dc(wf: ComplexWaveform) -> float:
    """DC amplitude ``A_r`` as the mean real part of the recovered field."""
    return float(np.mean(wf.field.real))


@functools.lru_cache(maxsize=32)
def _rx_filter(n_symbols: int, samples_per_symbol: int, rolloff: float, span: int) -> np.ndarray:
    # matched filter normalised per folded bin so that pulse -> filter -> sample is exact
    p = _pulse_spectrum(n_symbols * samples_per_symbol, samples_per_symbol, rolloff, span)
    folded = (np.abs(p) ** 2).reshape(samples_per_symbol, n_symbols).sum(axis=0) / samples_per_symbol
    h = np.conj(p) / np.tile(folded, samples_per_symbol)
    h.flags.writeable = False
    return h


def receive_filter(params: ModulationParams, n_symbols: int | None = None) -> np.ndarray:
    n = int(params.n_symbols if n_symbols is None else n_symbols)
    return _rx_filter(n, int(params.samples_per_symbol), float(params.rolloff), int(params.filter_span))


def matched_filter_downsample(samples: np.ndarray, params: ModulationParams) -> np.ndarray:
    """Matched raised-cosine filter and sampling at symbol centres.

    Each folded frequency bin is divided by the folded pulse energy, so a
    frame produced by :func:`kkqkd.waveform.pulse_shape` comes back exactly.
    """
    sps = int(params.samples_per_symbol)
    samples = np.asarray(samples, dtype=complex)
    if samples.size % sps:
        raise ValueError(f"{samples.size} samples is not a whole number of {sps}-sample symbols")
    n = samples.size // sps
    spec = sp_fft.fft(samples) * receive_filter(params, n)
    return sp_fft.ifft(spec.reshape(sps, n).sum(axis=0) / sps)


def receiver_noise_bandwidth(params: ModulationParams) -> float:
    """Equivalent noise bandwidth of the receive filter, Hz.

    White noise with per-sample quadrature variance ``s`` ends up with
    per-symbol quadrature variance ``s * noise_bandwidth / sample_rate``.
    """
    h = receive_filter(params)
    kappa = params.samples_per_symbol * float(np.sum(np.abs(h) ** 2)) / h.size
    return kappa * params.symbol_rate


def demodulate(wf: ComplexWaveform, a_r: float, params: ModulationParams) -> RecoveredFrame:
    """Remove the DC, shift the IF band down to baseband and sample the symbols."""
    if len(wf) != params.n_samples:
        raise ValueError(f"waveform has {len(wf)} samples, frame needs {params.n_samples}")
    centred = ComplexWaveform(wf.field - a_r, wf.sample_rate, wf.t0)
    baseband = frequency_shift(centred, -params.intermediate_frequency)
    symbols = matched_filter_downsample(baseband.samples, params)
    return RecoveredFrame(symbols, a_r, 0, float(wf.meta.get("clip_fraction", 0.0)))


def cross_correlation(rx: np.ndarray, tx: np.ndarray) -> np.ndarray:
    """Normalised circular cross-correlation magnitude, indexed by lag ``0..N-1``.

    ``rx = np.roll(tx, k)`` peaks at lag ``k`` with value 1.
    """
    rx = np.asarray(rx, dtype=complex)
    tx = np.asarray(tx, dtype=complex)
    if rx.size == 0 or tx.size == 0:
        raise ValueError("cross-correlation of an empty frame")
    if rx.size != tx.size:
        raise ValueError(f"frame lengths differ: {rx.size} vs {tx.size}")
    rx = rx - rx.mean()
    tx = tx - tx.mean()
    norm = math.sqrt(float(np.vdot(rx, rx).real) * float(np.vdot(tx, tx).real))
    if norm == 0:
        raise ValueError("cross-correlation of a zero-variance frame")
    return np.abs(sp_fft.ifft(sp_fft.fft(rx) * np.conj(sp_fft.fft(tx)))) / norm


def cross_correlate(rx: SymbolFrame, tx: SymbolFrame) -> tuple[int, float]:
    """Lag in ``(-N/2, N/2]`` and height of the correlation peak."""
    c = cross_correlation(rx.symbols, tx.symbols)
    k = int(np.argmax(c))
    n = c.size
    lag = k - n if k > n // 2 else k
    return lag, float(c[k])


def align(rx: np.ndarray, lag: int) -> np.ndarray:
    """Undo a lag found by :func:`cross_correlate`."""
    return np.roll(rx, -lag)


def monitor_dc_intensity(a_r_measured: float, a_r_reference: float, threshold_fraction: float) -> str:
    """``'alarm'`` when the DC amplitude moved by more than ``threshold_fraction``."""
    if a_r_reference == 0:
        raise ValueError("DC reference amplitude is zero")
    deviation = abs(a_r_measured - a_r_reference) / abs(a_r_reference)
    return "alarm" if deviation > threshold_fraction else "ok"
