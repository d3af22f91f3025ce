"""Seeded random streams shared by the simulator.

Every stochastic step draws from its own PCG64 stream keyed by
``(seed, *stream)``, so frames and users can be simulated in any order or in
parallel and still reproduce bit-for-bit.  Gaussian variates come from a
polar (Marsaglia) transform of the uniform stream rather than numpy's
ziggurat, which keeps the mapping from seed to samples explicit.
"""
from __future__ import annotations

import numpy as np

# stream tags; keep stable, they are part of the reproducibility contract
SYMBOLS = 1
EXCESS_NOISE = 2
VACUUM = 3
ELECTRONIC = 4


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def standard_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` N(0, 1) samples with the Marsaglia polar method.

    Uniform pairs are drawn in fixed-size batches and the accepted ones are
    kept in order, so the output is a deterministic function of the stream.
    """
    half = (size + 1) // 2
    out = np.empty(2 * half)
    filled = 0
    while filled < half:
        need = half - filled
        batch = int(need * 1.28) + 64  # acceptance rate is pi / 4
        u = 2.0 * rng.random((2, batch)) - 1.0
        s = u[0] * u[0] + u[1] * u[1]
        keep = (s > 0.0) & (s < 1.0)
        u0, u1, s = u[0][keep][:need], u[1][keep][:need], s[keep][:need]
        f = np.sqrt(-2.0 * np.log(s) / s)
        n = s.size
        out[2 * filled:2 * (filled + n):2] = u0 * f
        out[2 * filled + 1:2 * (filled + n):2] = u1 * f
        filled += n
    return out[:size]


def complex_normal(rng: np.random.Generator, size: int, quadrature_variance: float) -> np.ndarray:
    """Circular complex Gaussian with the given variance on each quadrature."""
    z = standard_normal(rng, 2 * size)
    return np.sqrt(quadrature_variance) * (z[:size] + 1j * z[size:])


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a (user, frame, ...) job; independent of evaluation order."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    state = np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])
