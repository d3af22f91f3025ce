"""Transmitter side: Gaussian symbols, raised-cosine shaping, minimum-phase fields.

Conventions
-----------
Quadrature variance.  A symbol is ``c = a + i b`` with ``Var(a) = Var(b) = v_a``
in shot-noise units (SNU).  This is the per-quadrature convention: a symbol
frame with ``v_a = 5`` has ``E|c|^2 = 10``.

Frames are periodic.  Pulse shaping, filtering and the Hilbert transform all
work on the whole frame circularly, so a frame of ``n_symbols`` symbols at
``samples_per_symbol`` samples each is one period of a cyclic waveform and no
edge effects enter the receiver.  Symbol ``m`` is centred on sample
``m * samples_per_symbol``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft

from . import _random


@dataclass(frozen=True)
class ModulationParams:
    """Transmitter constants.

    Attributes
    ----------
    v_a : float
        Modulation variance per quadrature, SNU.
    g : float
        DC scaling factor; the minimum-phase DC amplitude is ``g * sqrt(v_a)``.
    symbol_rate : float
        Symbols per second.
    samples_per_symbol : int
        Oversampling factor; ``sample_rate = symbol_rate * samples_per_symbol``.
    bandwidth_b : float
        Spectral-shift parameter B in Hz.  The baseband signal is moved up by
        ``f_if`` (B/2 unless given) so that it sits in ``[0, B]``.
    f_car : float
        RF carrier added on top of the minimum-phase signal, Hz.
    rolloff : float
        Raised-cosine roll-off in [0, 1].
    n_symbols : int
        Frame length in symbols.
    seed : int
        Seed of the symbol stream.
    filter_span : int
        Raised-cosine truncation, in symbol periods on each side.
    f_if : float, optional
        Intermediate frequency of the spectral shift.  Defaults to B/2.
    """

    v_a: float
    g: float = 100.0
    symbol_rate: float = 1e6
    samples_per_symbol: int = 100
    bandwidth_b: float = 10e6
    f_car: float = 10e6
    rolloff: float = 0.3
    n_symbols: int = 10_000
    seed: int = 0
    filter_span: int = 8
    f_if: float | None = None

    def __post_init__(self) -> None:
        problems = []
        if not self.v_a > 0:
            problems.append(f"v_a must be > 0 (got {self.v_a})")
        if not self.g > 0:
            problems.append(f"g must be > 0 (got {self.g})")
        if not self.symbol_rate > 0:
            problems.append(f"symbol_rate must be > 0 (got {self.symbol_rate})")
        if int(self.samples_per_symbol) != self.samples_per_symbol or self.samples_per_symbol < 2:
            problems.append(f"samples_per_symbol must be an integer >= 2 (got {self.samples_per_symbol})")
        if not 0.0 <= self.rolloff <= 1.0:
            problems.append(f"rolloff must lie in [0, 1] (got {self.rolloff})")
        if int(self.n_symbols) != self.n_symbols or self.n_symbols < 1:
            problems.append(f"n_symbols must be a positive integer (got {self.n_symbols})")
        if self.filter_span < 1:
            problems.append(f"filter_span must be >= 1 (got {self.filter_span})")
        occupied = (1.0 + self.rolloff) * self.symbol_rate
        if self.bandwidth_b < occupied * (1 - 1e-12):
            problems.append(
                f"bandwidth_b={self.bandwidth_b:g} Hz is narrower than the raised-cosine "
                f"occupied band (1 + rolloff) * symbol_rate = {occupied:g} Hz"
            )
        if self.f_if is not None and self.f_if < self.bandwidth_b / 2 * (1 - 1e-12):
            problems.append(f"f_if must be >= B/2 = {self.bandwidth_b / 2:g} Hz (got {self.f_if})")
        if not problems:
            # frames are cyclic, so the IF tone must close on itself
            cycles = self.n_symbols * self.intermediate_frequency / self.symbol_rate
            if abs(cycles - round(cycles)) > 1e-6:
                problems.append(
                    f"frame of {self.n_symbols} symbols holds {cycles:g} IF cycles; "
                    "choose n_symbols so that n_symbols * f_if / symbol_rate is an integer"
                )
        if self.f_car < self.bandwidth_b * (1 - 1e-12):
            problems.append(f"f_car={self.f_car:g} Hz must be >= bandwidth_b={self.bandwidth_b:g} Hz")
        nyquist = 2.0 * (self.f_car + self.bandwidth_b)
        if self.symbol_rate > 0 and self.sample_rate < nyquist * (1 - 1e-12):
            problems.append(f"sample_rate={self.sample_rate:g} Hz is below 2 (f_car + B) = {nyquist:g} Hz")
        if problems:
            raise ValueError("invalid ModulationParams: " + "; ".join(problems))

    @property
    def sample_rate(self) -> float:
        return float(self.symbol_rate) * float(self.samples_per_symbol)

    @property
    def intermediate_frequency(self) -> float:
        return self.bandwidth_b / 2 if self.f_if is None else self.f_if

    @property
    def dc_amplitude(self) -> float:
        return self.g * math.sqrt(self.v_a)

    @property
    def n_samples(self) -> int:
        return int(self.n_symbols) * int(self.samples_per_symbol)


@dataclass(frozen=True)
class SymbolFrame:
    symbols: np.ndarray
    v_a_nominal: float | None = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.symbols, dtype=complex)
        if arr.ndim != 1:
            raise ValueError("symbols must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("symbols must be finite")
        object.__setattr__(self, "symbols", arr)

    def __len__(self) -> int:
        return self.symbols.size


@dataclass(frozen=True)
class ComplexWaveform:
    """Uniformly sampled complex field; ``t0`` is the time of sample 0.

    ``phase`` is an optical phase track (a scalar or one value per sample)
    kept apart from ``samples``: the physical field is
    ``samples * exp(1j * phase)``, available as :attr:`field`.  Laser phase
    and global rotations go there, so that modulus-only operations never see
    them, not even through floating-point rounding.
    """

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0
    meta: dict = field(default_factory=dict, compare=False, repr=False)
    phase: float | np.ndarray = field(default=0.0, compare=False, repr=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=complex)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be > 0 (got {self.sample_rate})")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    def replace(self, samples: np.ndarray) -> "ComplexWaveform":
        return ComplexWaveform(samples, self.sample_rate, self.t0, phase=self.phase)

    @property
    def field(self) -> np.ndarray:
        if np.isscalar(self.phase) and self.phase == 0:
            return self.samples
        return self.samples * np.exp(1j * np.asarray(self.phase))


def rotate_phase(wf: ComplexWaveform, theta: float | np.ndarray) -> ComplexWaveform:
    """Add ``theta`` (global, or one value per sample) to the optical phase track."""
    theta_arr = np.asarray(theta, dtype=float)
    if theta_arr.ndim not in (0, 1) or (theta_arr.ndim == 1 and theta_arr.size != len(wf)):
        raise ValueError("phase rotation must be a scalar or one value per sample")
    phase = np.asarray(wf.phase, dtype=float) + theta_arr
    return ComplexWaveform(wf.samples, wf.sample_rate, wf.t0, dict(wf.meta), phase if phase.ndim else float(phase))


def generate_symbols(params: ModulationParams) -> SymbolFrame:
    """Draw ``n_symbols`` complex Gaussian symbols with per-quadrature variance ``v_a``."""
    rng = _random.make_rng(params.seed, _random.SYMBOLS)
    return SymbolFrame(_random.complex_normal(rng, int(params.n_symbols), params.v_a), params.v_a)


def raised_cosine_taps(rolloff: float, samples_per_symbol: int, span: int = 8) -> np.ndarray:
    """Hann-tapered raised-cosine impulse response, peak 1, exact zeros at nonzero symbol offsets.

    Returns ``2 * span * samples_per_symbol + 1`` taps centred on index
    ``span * samples_per_symbol``.
    """
    if not 0.0 <= rolloff <= 1.0:
        raise ValueError(f"rolloff must lie in [0, 1] (got {rolloff})")
    n = np.arange(-span * samples_per_symbol, span * samples_per_symbol + 1)
    t = n / samples_per_symbol
    h = np.sinc(t)
    if rolloff > 0:
        denom = 1.0 - (2.0 * rolloff * t) ** 2
        singular = np.isclose(denom, 0.0, atol=1e-12)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = np.where(singular, np.pi / 4 * np.sinc(1.0 / (2.0 * rolloff)), h * np.cos(np.pi * rolloff * t) / denom)
    h = h * 0.5 * (1.0 + np.cos(np.pi * t / span))
    # pin the Nyquist zeros exactly; sinc(k) leaves ~1e-17 residue
    on_grid = (n % samples_per_symbol == 0) & (n != 0)
    h[on_grid] = 0.0
    h[n == 0] = 1.0
    return h


@functools.lru_cache(maxsize=32)
def _pulse_spectrum(n_samples: int, samples_per_symbol: int, rolloff: float, span: int) -> np.ndarray:
    taps = raised_cosine_taps(rolloff, samples_per_symbol, span)
    centre = span * samples_per_symbol
    circ = np.zeros(n_samples)
    # wrap the taps around the frame; tails alias onto one another for short frames
    np.add.at(circ, (np.arange(taps.size) - centre) % n_samples, taps)
    spec = sp_fft.fft(circ)
    spec.flags.writeable = False
    return spec


def pulse_spectrum(params: ModulationParams, n_symbols: int | None = None) -> np.ndarray:
    n = int(params.n_symbols if n_symbols is None else n_symbols)
    return _pulse_spectrum(n * int(params.samples_per_symbol), int(params.samples_per_symbol),
                           float(params.rolloff), int(params.filter_span))


def pulse_shape(frame: SymbolFrame, params: ModulationParams) -> ComplexWaveform:
    """Raised-cosine shape ``frame`` into a cyclic baseband waveform at ``params.sample_rate``."""
    if params.samples_per_symbol < 2:
        raise ValueError("samples_per_symbol must be >= 2")
    sps = int(params.samples_per_symbol)
    n = len(frame)
    if n == 0:
        raise ValueError("empty symbol frame")
    # spectrum of the impulse train is the symbol DFT repeated sps times
    train = np.tile(sp_fft.fft(frame.symbols), sps)
    samples = sp_fft.ifft(train * pulse_spectrum(params, n))
    return ComplexWaveform(samples, params.sample_rate)


@functools.lru_cache(maxsize=8)
def _phasor(n: int, cycles_per_sample: float, start_cycles: float) -> np.ndarray:
    # reduce mod 1 before scaling by 2 pi so long frames keep full phase precision
    cycles = np.mod(start_cycles + cycles_per_sample * np.arange(n), 1.0)
    out = np.exp(2j * np.pi * cycles)
    out.flags.writeable = False
    return out


def frequency_shift(wf: ComplexWaveform, freq: float) -> ComplexWaveform:
    """Multiply by ``exp(i 2 pi freq t)`` sample by sample."""
    if freq == 0:
        return wf
    rot = _phasor(len(wf), freq / wf.sample_rate, math.fmod(freq * wf.t0, 1.0))
    return wf.replace(wf.samples * rot)


def to_minimum_phase(wf: ComplexWaveform, params: ModulationParams) -> ComplexWaveform:
    """Return ``A + wf(t) exp(i 2 pi f_if t)`` with ``A = g sqrt(v_a)``."""
    shifted = frequency_shift(wf, params.intermediate_frequency)
    return ComplexWaveform(params.dc_amplitude + shifted.field, shifted.sample_rate, shifted.t0)


def add_carrier(wf: ComplexWaveform, f_car: float, bandwidth: float = 0.0) -> ComplexWaveform:
    """Rotate the field onto an RF carrier; ``add_carrier(w, -f)`` undoes ``add_carrier(w, f)``.

    ``bandwidth`` is the one-sided extent of the content above the carrier and
    is only used for the aliasing check.
    """
    if abs(f_car) + bandwidth > wf.sample_rate / 2:
        raise ValueError(
            f"carrier {f_car:g} Hz plus bandwidth {bandwidth:g} Hz aliases at sample rate {wf.sample_rate:g} Hz"
        )
    return frequency_shift(wf, f_car)


def minimum_phase_failure_prob(g: float) -> float:
    """Probability that one Gaussian symbol's modulus exceeds ``g * sqrt(v_a)``.

    The modulus of a circular Gaussian with per-quadrature variance ``v_a`` is
    Rayleigh distributed, so the tail is ``exp(-g**2 / 2)``.
    """
    if g < 0:
        raise ValueError(f"g must be non-negative (got {g})")
    return math.exp(-g * g / 2.0)


def frame_failure_bound(g: float, n_symbols: int) -> float:
    """Union bound on a frame containing at least one non-minimum-phase symbol."""
    return min(1.0, n_symbols * minimum_phase_failure_prob(g))


def check_winding(wf: ComplexWaveform, closed: bool = True) -> int:
    """Number of times the sampled trajectory encircles the origin.

    Sums the wrapped phase steps between consecutive samples; with ``closed``
    the step from the last sample back to the first is included, which is
    the right thing for a cyclic frame.
    """
    s = wf.field
    if np.any(s == 0):
        raise ValueError("winding number undefined: trajectory passes through the origin")
    steps = np.angle(s[1:] * np.conj(s[:-1]))
    total = steps.sum()
    if closed:
        total += np.angle(s[0] * np.conj(s[-1]))
    return int(np.rint(total / (2 * np.pi)))
