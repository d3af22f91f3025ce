"""Shot-noise normalization and covariance estimators for V_A, T and excess noise.

After normalization each received quadrature follows

    y = sqrt(eta T / 2) x + z,    Var(z) = 1 + eta T eps / 2 + v_el

which is the heterodyne measurement model; the factor 1/2 comes from the
image-band vacuum that KK detection adds, like the second port of a
heterodyne receiver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _random
from .calibration import CalibrationRecord
from .receiver import RecoveredFrame
from .waveform import SymbolFrame

MIN_SYMBOLS = 10_000


@dataclass(frozen=True)
class ParameterEstimate:
    """``t_hat`` is the power transmittance; ``eps_hat`` may be slightly negative."""

    v_a_hat: float
    t_hat: float
    eps_hat: float
    n_symbols_used: int

    @property
    def eps_negative(self) -> bool:
        return self.eps_hat < 0


def normalize_to_snu(frame: RecoveredFrame | SymbolFrame, cal: CalibrationRecord | None) -> SymbolFrame:
    """Divide both quadratures by ``sqrt(snu_per_quadrature)``."""
    if cal is None:
        raise ValueError("shot-noise normalization needs a calibration record")
    return SymbolFrame(np.asarray(frame.symbols) / math.sqrt(cal.snu_per_quadrature))


def _quadratures(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return z.real - z.real.mean(), z.imag - z.imag.mean()


def estimate_parameters(tx: SymbolFrame, rx_normalized: SymbolFrame, eta: float, v_el: float,
                        min_symbols: int = MIN_SYMBOLS) -> ParameterEstimate:
    """Estimate ``(V_A, T, eps)`` from aligned transmit and normalized receive symbols.

    Both quadratures are used and averaged; ``eta`` and ``v_el`` are trusted
    calibrated values.
    """
    x = np.asarray(tx.symbols)
    y = np.asarray(rx_normalized.symbols)
    if x.size != y.size:
        raise ValueError(f"frames are not aligned: {x.size} transmitted vs {y.size} received symbols")
    if x.size < min_symbols:
        raise ValueError(f"parameter estimation needs at least {min_symbols} symbols (got {x.size})")
    if not 0 < eta <= 1:
        raise ValueError(f"eta must lie in (0, 1] (got {eta})")
    xr, xi = _quadratures(x)
    yr, yi = _quadratures(y)
    v_a_hat = 0.5 * (np.mean(xr * xr) + np.mean(xi * xi))
    if v_a_hat <= 0:
        raise ValueError("transmitted frame has zero variance")
    t_amp = 0.5 * (np.mean(xr * yr) + np.mean(xi * yi)) / v_a_hat
    var_y = 0.5 * (np.mean(yr * yr) + np.mean(yi * yi))
    t_hat = 2.0 * t_amp * t_amp / eta
    if t_hat <= 0:
        raise ValueError("no correlation between transmitted and received symbols")
    eps_hat = (var_y - t_amp * t_amp * v_a_hat - 1.0 - v_el) * 2.0 / (eta * t_hat)
    return ParameterEstimate(float(v_a_hat), float(t_hat), float(eps_hat), int(x.size))


def synthesize_measurement(tx: SymbolFrame, t: float, eps: float, eta: float, v_el: float,
                           rng: np.random.Generator) -> SymbolFrame:
    """Received symbols drawn directly from the normalized measurement model."""
    x = np.asarray(tx.symbols)
    noise_var = 1.0 + eta * t * eps / 2.0 + v_el
    z = _random.complex_normal(rng, x.size, noise_var)
    return SymbolFrame(math.sqrt(eta * t / 2.0) * x + z)
