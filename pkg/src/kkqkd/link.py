"""End-to-end chain for one frame: transmitter, channel, KK receiver."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import _random, channel, receiver, waveform
from .channel import EffectiveChannel, Receiver
from .waveform import ModulationParams, SymbolFrame


@dataclass(frozen=True)
class LinkSetup:
    """Everything needed to simulate frames on one user's link.

    Attributes
    ----------
    params : ModulationParams
        Transmitter; ``params.seed`` is ignored in favour of per-frame seeds.
    channel : EffectiveChannel
        Composed transmittance and input-referred excess noise.
    receiver : Receiver
        Quantum efficiency and photocurrent-domain electronic noise.
    vacuum_scale : float
        Vacuum per band in raw receiver units; 0 disables shot noise.  The
        transmitted field and the excess noise are scaled to the same unit,
        so SNU-normalized results do not depend on it.
    mu : float
        Photoelectric conversion coefficient.
    kk_upsample : int
        Interpolation factor ahead of the KK nonlinearity.
    """

    params: ModulationParams
    channel: EffectiveChannel = EffectiveChannel(1.0, 0.0)
    receiver: Receiver = Receiver()
    vacuum_scale: float = 1.0
    mu: float = 1.0
    kk_upsample: int = 4

    def __post_init__(self) -> None:
        if self.vacuum_scale < 0:
            raise ValueError(f"vacuum_scale must be >= 0 (got {self.vacuum_scale})")
        if self.mu <= 0:
            raise ValueError(f"mu must be > 0 (got {self.mu})")

    def replace(self, **changes) -> "LinkSetup":
        return dataclasses.replace(self, **changes)

    @property
    def signal_unit(self) -> float:
        """Raw power of one SNU-per-band; the transmitted field is expressed in it."""
        return self.vacuum_scale if self.vacuum_scale > 0 else 1.0


@dataclass(frozen=True)
class FrameResult:
    tx: SymbolFrame
    rx: receiver.RecoveredFrame
    trace: receiver.PhotocurrentTrace | None = None
    winding: int = 0


def transmit(params: ModulationParams, seed: int, modulated: bool = True) -> tuple[SymbolFrame, waveform.ComplexWaveform]:
    """Symbols and the carrier-bearing minimum-phase field for one frame."""
    p = dataclasses.replace(params, seed=seed)
    if modulated:
        frame = waveform.generate_symbols(p)
        base = waveform.pulse_shape(frame, p)
    else:
        # DC-only frame: shaping zeros would only cost two FFTs
        frame = SymbolFrame(np.zeros(int(p.n_symbols), dtype=complex), 0.0)
        base = waveform.ComplexWaveform(np.zeros(p.n_samples, dtype=complex), p.sample_rate)
    field = waveform.to_minimum_phase(base, p)
    return frame, waveform.add_carrier(field, p.f_car, p.bandwidth_b)


def detect(field: waveform.ComplexWaveform, setup: LinkSetup, seed: int) -> receiver.PhotocurrentTrace:
    """Receiver front end: quantum efficiency, vacuum and square-law detection."""
    p = setup.params
    field = channel.attenuate(field, setup.receiver.eta)
    samples_per_mode = p.sample_rate / receiver.receiver_noise_bandwidth(p)
    field = channel.inject_vacuum(field, setup.vacuum_scale, _random.derive_seed(seed, 1), samples_per_mode)
    return receiver.direct_detect(field, setup.mu, setup.receiver.v_el_physical, _random.derive_seed(seed, 2))


def recover(trace: receiver.PhotocurrentTrace, setup: LinkSetup,
            a_r: float | None = None) -> receiver.RecoveredFrame:
    """KK recovery and demodulation; ``a_r`` defaults to the frame's own DC estimate."""
    field = receiver.kk_recover(trace, setup.kk_upsample)
    a_r = receiver.estimate_dc(field) if a_r is None else a_r
    return receiver.demodulate(field, a_r, setup.params)


def run_frame(setup: LinkSetup, seed: int, modulated: bool = True, keep_trace: bool = False,
              check_minimum_phase: bool = False) -> FrameResult:
    """Simulate one frame end to end.

    Randomness is split into independent child streams of ``seed`` for the
    symbols, the excess noise, the vacuum and the electronic noise.
    """
    tx, field = transmit(setup.params, _random.derive_seed(seed, 0), modulated)
    winding = 0
    if check_minimum_phase:
        # the carrier itself circles the origin, so test the field underneath it
        winding = waveform.check_winding(waveform.frequency_shift(field, -setup.params.f_car))
    unit = setup.signal_unit
    if unit != 1.0:
        field = field.replace(field.samples * math.sqrt(unit))
    field = channel.propagate(field, setup.channel, _random.derive_seed(seed, 3), setup.params, unit=unit)
    trace = detect(field, setup, seed)
    rx = recover(trace, setup)
    return FrameResult(tx, rx, trace if keep_trace else None, winding)
