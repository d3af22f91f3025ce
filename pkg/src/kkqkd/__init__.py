"""Direct-detection CV-QKD with a Kramers-Kronig receiver.

Modules
-------
waveform      Gaussian symbols, pulse shaping and minimum-phase fields.
channel       Fiber, splitter, excess noise, vacuum and network composition.
receiver      Square-law detection, KK field recovery, demodulation.
link          One frame end to end.
calibration   Shot-noise and electronic-noise calibration.
estimation    SNU normalization and V_A, T, eps estimators.
security      Asymptotic and finite-size key rates with a covariance oracle.
economics     Network hardware cost.
config, cli   YAML experiments and the ``kkqkd`` command.
"""
__all__ = ["calibration", "channel", "economics", "estimation", "link", "receiver", "security", "waveform"]
