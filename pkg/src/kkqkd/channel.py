"""Fiber, splitter and vacuum models, plus per-user channel composition.

Noise units.  The simulator works in an arbitrary field unit ``unit``: one
``unit`` is the per-quadrature variance, at the symbol level after the
receiver's matched filter, of the vacuum that one frequency band contributes.
:func:`inject_vacuum` with ``scale=unit`` therefore yields a raw
per-quadrature symbol variance of ``2 * unit`` after Kramers-Kronig detection
(signal band plus image band), which calibration turns into 1 SNU.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import fft as sp_fft

from . import _random
from .waveform import ComplexWaveform, ModulationParams, frequency_shift, pulse_spectrum

FIBER = "fiber"
SPLITTER = "splitter"
FIXED_LOSS = "fixed-loss"
_KINDS = (FIBER, SPLITTER, FIXED_LOSS)


@dataclass(frozen=True)
class ChannelSegment:
    """One element of a fiber path.

    ``excess_noise`` is in SNU referred to the input of the segment.
    """

    kind: str
    length_km: float = 0.0
    alpha_db_per_km: float = 0.0
    loss_db: float = 0.0
    excess_noise: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}; expected one of {_KINDS}")
        for name in ("length_km", "alpha_db_per_km", "loss_db", "excess_noise"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and >= 0 (got {value})")

    @classmethod
    def fiber(cls, length_km: float, alpha_db_per_km: float = 0.2, excess_noise: float = 0.0) -> "ChannelSegment":
        return cls(FIBER, length_km=length_km, alpha_db_per_km=alpha_db_per_km, excess_noise=excess_noise)

    @classmethod
    def splitter(cls, n_ports: int | None = None, loss_db: float | None = None,
                 excess_noise: float = 0.0) -> "ChannelSegment":
        """Ideal 1xN splitter (``10 log10 N`` dB) unless ``loss_db`` is given."""
        if loss_db is None:
            if n_ports is None or n_ports < 1:
                raise ValueError("splitter needs n_ports >= 1 or an explicit loss_db")
            loss_db = 10.0 * math.log10(n_ports)
        return cls(SPLITTER, loss_db=loss_db, excess_noise=excess_noise)

    @classmethod
    def fixed_loss(cls, loss_db: float, excess_noise: float = 0.0) -> "ChannelSegment":
        return cls(FIXED_LOSS, loss_db=loss_db, excess_noise=excess_noise)

    @property
    def loss_total_db(self) -> float:
        if self.kind == FIBER:
            return self.alpha_db_per_km * self.length_km
        return self.loss_db


@dataclass(frozen=True)
class Receiver:
    """Per-user detector.

    Attributes
    ----------
    eta : float
        Quantum efficiency in (0, 1].
    v_el_physical : float
        Photocurrent-domain electronic noise variance per sample, used by the
        waveform simulation.
    v_el : float
        Electronic noise in SNU, used by the analytic security paths.
    """

    eta: float = 1.0
    v_el_physical: float = 0.0
    v_el: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1] (got {self.eta})")
        if self.v_el_physical < 0 or self.v_el < 0:
            raise ValueError("electronic noise variances must be >= 0")


@dataclass(frozen=True)
class QanTopology:
    """Downstream access network: shared trunk, one splitter, per-user branches."""

    trunk: tuple[ChannelSegment, ...]
    splitter: ChannelSegment
    branches: tuple[tuple[ChannelSegment, ...], ...]
    receivers: tuple[Receiver, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "trunk", tuple(self.trunk))
        object.__setattr__(self, "branches", tuple(tuple(b) for b in self.branches))
        receivers = tuple(self.receivers) or tuple(Receiver() for _ in self.branches)
        object.__setattr__(self, "receivers", receivers)
        if len(self.branches) < 1:
            raise ValueError("topology needs at least one user branch")
        if len(self.receivers) != len(self.branches):
            raise ValueError(f"{len(self.branches)} branches but {len(self.receivers)} receivers")

    @property
    def n_users(self) -> int:
        return len(self.branches)

    def path(self, user: int) -> tuple[ChannelSegment, ...]:
        if not 0 <= user < self.n_users:
            raise IndexError(f"unknown user {user}; topology has {self.n_users} users")
        return (*self.trunk, self.splitter, *self.branches[user])

    @classmethod
    def symmetric(cls, n_users: int, trunk_km: float, branch_km: float, alpha_db_per_km: float,
                  splitter_loss_db: float | None = None, receiver: Receiver | None = None) -> "QanTopology":
        trunk = (ChannelSegment.fiber(trunk_km, alpha_db_per_km),)
        branches = tuple((ChannelSegment.fiber(branch_km, alpha_db_per_km),) for _ in range(n_users))
        rx = receiver or Receiver()
        return cls(trunk, ChannelSegment.splitter(n_users, splitter_loss_db), branches, (rx,) * n_users)


@dataclass(frozen=True)
class EffectiveChannel:
    transmittance_t: float
    excess_noise_eps: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.transmittance_t <= 1:
            raise ValueError(f"transmittance must lie in (0, 1] (got {self.transmittance_t})")
        if self.excess_noise_eps < 0:
            raise ValueError(f"excess noise must be >= 0 (got {self.excess_noise_eps})")


def segment_transmittance(seg: ChannelSegment) -> float:
    return 10.0 ** (-seg.loss_total_db / 10.0)


def path_channel(segments: Sequence[ChannelSegment]) -> EffectiveChannel:
    """Multiply transmittances and add input-referred excess noises along a path."""
    t = math.prod(segment_transmittance(s) for s in segments)
    eps = math.fsum(s.excess_noise for s in segments)
    return EffectiveChannel(t, eps)


def compose_effective_channel(topology: QanTopology, user: int) -> EffectiveChannel:
    return path_channel(topology.path(user))


def attenuate(wf: ComplexWaveform, power_transmittance: float) -> ComplexWaveform:
    if not 0 <= power_transmittance <= 1:
        raise ValueError(f"power transmittance must lie in [0, 1] (got {power_transmittance})")
    return wf.replace(wf.samples * math.sqrt(power_transmittance))


def shaped_noise(params: ModulationParams, n_symbols: int, quadrature_variance: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise symbols pulse-shaped like the signal, at baseband."""
    sym = _random.complex_normal(rng, n_symbols, quadrature_variance)
    train = np.tile(sp_fft.fft(sym), int(params.samples_per_symbol))
    return sp_fft.ifft(train * pulse_spectrum(params, n_symbols))


def propagate(wf: ComplexWaveform, channel: EffectiveChannel, seed: int,
              params: ModulationParams | None = None, unit: float = 1.0,
              frequency_offset: float | None = None) -> ComplexWaveform:
    """Send ``wf`` through a lossy, noisy channel.

    The field is scaled by ``sqrt(T)``.  Excess noise is added in the signal's
    own mode: Gaussian symbols with per-quadrature variance ``T * eps * unit``
    shaped by the transmit pulse and moved to ``frequency_offset`` (by default
    the transmitter's IF plus carrier), so that after shot-noise normalization
    the estimator sees exactly the input-referred ``eps``.

    ``params`` is required when ``eps > 0``.
    """
    out = wf.samples * math.sqrt(channel.transmittance_t)
    if channel.excess_noise_eps > 0:
        if params is None:
            raise ValueError("propagate needs ModulationParams to shape excess noise")
        sps = int(params.samples_per_symbol)
        if len(wf) % sps:
            raise ValueError(f"waveform length {len(wf)} is not a whole number of symbols")
        rng = _random.make_rng(seed, _random.EXCESS_NOISE)
        noise = shaped_noise(params, len(wf) // sps,
                             channel.transmittance_t * channel.excess_noise_eps * unit, rng)
        offset = params.intermediate_frequency + params.f_car if frequency_offset is None else frequency_offset
        out = out + frequency_shift(ComplexWaveform(noise, wf.sample_rate, wf.t0), offset).samples
    return wf.replace(out)


def inject_vacuum(wf: ComplexWaveform, scale: float, seed: int, samples_per_mode: float = 1.0) -> ComplexWaveform:
    """Add white complex Gaussian vacuum over the whole simulated band.

    ``samples_per_mode`` is ``sample_rate / noise_bandwidth`` of the receiver
    (see :func:`kkqkd.receiver.receiver_noise_bandwidth`).  The per-sample
    per-quadrature variance is ``scale * samples_per_mode``, which puts
    ``scale`` into each of the signal and image bands at the symbol level.
    """
    if scale < 0:
        raise ValueError(f"vacuum scale must be >= 0 (got {scale})")
    if scale == 0:
        return wf
    rng = _random.make_rng(seed, _random.VACUUM)
    return wf.replace(wf.samples + _random.complex_normal(rng, len(wf), scale * samples_per_mode))
