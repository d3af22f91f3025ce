"""Experiment configuration: YAML files and shipped presets.

Every value is checked on load.  Errors carry the file name and the line of
the offending key, e.g. ``run.yaml:12: modulation.bandwidth_b: ...``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .channel import ChannelSegment, EffectiveChannel, QanTopology, Receiver, compose_effective_channel
from .link import LinkSetup
from .security import DETECTIONS, FiniteSizeParams, SecurityParams, quantum_efficiency_from_responsivity
from .waveform import ModulationParams

PRESETS = ("paper-experiment", "fig3-4user", "ideal")


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.message = message
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ReceiverSettings:
    kk_upsample: int = 4
    mu: float = 1.0


@dataclass(frozen=True)
class CalibrationSettings:
    """``reference_attenuation_db = None`` calibrates each user through its own path loss."""

    vacuum_scale: float = 1.0
    reference_attenuation_db: float | None = None
    n_frames: int = 4
    n_dark_frames: int = 1
    dc_alarm_threshold: float = 0.05


@dataclass(frozen=True)
class FiniteSizeSettings:
    n_total: tuple[float, ...] = (1e9,)
    n_key_fraction: float = 0.5
    eps_smooth: float = 1e-10
    eps_pa: float = 1e-10
    eps_pe: float = 1e-10

    def params(self, n_total: float) -> FiniteSizeParams:
        return FiniteSizeParams(n_total, self.n_key_fraction * n_total, self.eps_smooth, self.eps_pa, self.eps_pe)


@dataclass(frozen=True)
class SecuritySettings:
    beta: float = 0.95
    f_rep: float = 1e6
    detection: str = "dd"
    v_a_per_user: tuple[float, ...] | None = None
    finite_size: FiniteSizeSettings | None = None


@dataclass(frozen=True)
class SweepSettings:
    distances_km: tuple[float, ...] = ()
    detections: tuple[str, ...] = ("homodyne", "heterodyne", "dd")


@dataclass(frozen=True)
class RunSettings:
    n_frames: int = 1
    seed: int = 0
    check_winding: bool = False
    tamper_dc_factor: float = 1.0
    dump: bool = False


@dataclass(frozen=True)
class CostSettings:
    n_max: int = 64
    c_pd: float = 1.0
    multipliers: dict | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    modulation: ModulationParams
    topology: QanTopology
    receiver: ReceiverSettings = ReceiverSettings()
    calibration: CalibrationSettings = CalibrationSettings()
    security: SecuritySettings = SecuritySettings()
    sweep: SweepSettings = SweepSettings()
    run: RunSettings = RunSettings()
    cost: CostSettings = CostSettings()
    raw: dict = field(default_factory=dict, compare=False, repr=False)
    source: str = field(default="<config>", compare=False)

    @property
    def n_users(self) -> int:
        return self.topology.n_users

    def channel(self, user: int) -> EffectiveChannel:
        return compose_effective_channel(self.topology, user)

    def link_setup(self, user: int) -> LinkSetup:
        return LinkSetup(self.modulation, self.channel(user), self.topology.receivers[user],
                         self.calibration.vacuum_scale, self.receiver.mu, self.receiver.kk_upsample)

    def calibration_setup(self, user: int) -> LinkSetup:
        """Link used for calibration: reference attenuator in place of the fiber path."""
        if self.calibration.reference_attenuation_db is None:
            t = self.channel(user).transmittance_t
        else:
            t = 10.0 ** (-self.calibration.reference_attenuation_db / 10.0)
        return self.link_setup(user).replace(channel=EffectiveChannel(t, 0.0))

    def security_params(self, user: int, v_a: float | None = None, t: float | None = None,
                        eps: float | None = None, v_el: float | None = None,
                        detection: str | None = None) -> SecurityParams:
        """Per-user analytic parameters; any argument overrides the configured value."""
        ch = self.channel(user)
        rx = self.topology.receivers[user]
        if v_a is None:
            per_user = self.security.v_a_per_user
            v_a = per_user[user] if per_user else self.modulation.v_a
        return SecurityParams(
            v_a=v_a,
            t=ch.transmittance_t if t is None else t,
            eps=ch.excess_noise_eps if eps is None else eps,
            eta=rx.eta,
            v_el=rx.v_el if v_el is None else v_el,
            beta=self.security.beta,
            f_rep=self.security.f_rep,
            detection=detection or self.security.detection,
        )

    def with_overrides(self, seed: int | None = None) -> "ExperimentConfig":
        if seed is None:
            return self
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault("run", {})["seed"] = int(seed)
        return dataclasses.replace(self, run=dataclasses.replace(self.run, seed=int(seed)), raw=raw)

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


# -- parsing -------------------------------------------------------------------

def _line_map(node: yaml.Node, path: tuple = (), out: dict | None = None) -> dict:
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            sub = path + (key.value,)
            out[sub] = key.start_mark.line + 1
            _line_map(value, sub, out)
            out[sub] = key.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_map(item, path + (i,), out)
    return out


def _as_number(value: Any) -> float | None:
    # YAML 1.1 reads "1.0e6" (no exponent sign) as a string
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return None
    return None


class _Reader:
    """Typed access to one mapping of the YAML tree with line-anchored errors."""

    def __init__(self, data: Any, path: tuple, lines: dict, source: str):
        self.path = path
        self.lines = lines
        self.source = source
        if data is None:
            data = {}
        if not isinstance(data, dict):
            self.fail("expected a mapping")
        self.data = data

    def name(self, key: Any = None) -> str:
        parts = self.path + ((key,) if key is not None else ())
        return ".".join(str(p) for p in parts) or "<root>"

    def line(self, key: Any = None) -> int | None:
        path = self.path + ((key,) if key is not None else ())
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, message: str, key: Any = None):
        raise ConfigError(f"{self.name(key)}: {message}", self.source, self.line(key))

    def check_keys(self, allowed: set[str]) -> None:
        for key in self.data:
            if key not in allowed:
                self.fail(f"unknown key (allowed: {', '.join(sorted(allowed))})", key)

    def has(self, key: str) -> bool:
        return self.data.get(key) is not None

    def sub(self, key: str) -> "_Reader":
        return _Reader(self.data.get(key), self.path + (key,), self.lines, self.source)

    def number(self, key: str, default: Any = None, *, minimum: float | None = None,
               positive: bool = False, optional: bool = False) -> float | None:
        value = self.data.get(key, default)
        if value is None:
            if optional:
                return None
            self.fail("required number is missing", key)
        value = _as_number(value)
        if value is None:
            self.fail(f"expected a number, got {self.data.get(key)!r}", key)
        if not math.isfinite(value):
            self.fail("must be finite", key)
        if positive and value <= 0:
            self.fail(f"must be > 0 (got {value:g})", key)
        if minimum is not None and value < minimum:
            self.fail(f"must be >= {minimum:g} (got {value:g})", key)
        return value

    def integer(self, key: str, default: Any = None, *, minimum: int | None = None) -> int:
        value = self.data.get(key, default)
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(f"expected an integer, got {value!r}", key)
        if minimum is not None and value < minimum:
            self.fail(f"must be >= {minimum} (got {value})", key)
        return value

    def boolean(self, key: str, default: bool) -> bool:
        value = self.data.get(key, default)
        if not isinstance(value, bool):
            self.fail(f"expected true or false, got {value!r}", key)
        return value

    def choice(self, key: str, default: str, options: tuple[str, ...]) -> str:
        value = self.data.get(key, default)
        if value not in options:
            self.fail(f"expected one of {', '.join(options)}, got {value!r}", key)
        return value

    def number_list(self, key: str, optional: bool = True) -> tuple[float, ...] | None:
        value = self.data.get(key)
        if value is None:
            if optional:
                return None
            self.fail("required list is missing", key)
        if not isinstance(value, list):
            value = [value]
        out = []
        for i, item in enumerate(value):
            number = _as_number(item)
            if number is None:
                raise ConfigError(f"{self.name(key)}[{i}]: expected a number, got {item!r}",
                                  self.source, self.line(key))
            out.append(number)
        return tuple(out)

    def build(self, factory: Callable, **kwargs):
        """Call a validating constructor and pin its error to the key it names."""
        try:
            return factory(**kwargs)
        except ValueError as exc:
            message = str(exc)
            for key in self.data:
                if re.search(rf"\b{re.escape(str(key))}\b", message):
                    self.fail(message, key)
            self.fail(message)


def _segment(reader: _Reader, default_kind: str) -> ChannelSegment:
    reader.check_keys({"kind", "length_km", "alpha_db_per_km", "loss_db", "n_ports", "excess_noise"})
    kind = reader.choice("kind", default_kind, ("fiber", "splitter", "fixed-loss"))
    eps = reader.number("excess_noise", 0.0, minimum=0.0)
    if kind == "fiber":
        return reader.build(ChannelSegment.fiber, length_km=reader.number("length_km", 0.0, minimum=0.0),
                            alpha_db_per_km=reader.number("alpha_db_per_km", 0.2, minimum=0.0), excess_noise=eps)
    if kind == "splitter":
        n_ports = reader.integer("n_ports", 1, minimum=1) if reader.has("n_ports") else None
        loss = reader.number("loss_db", minimum=0.0, optional=True)
        if n_ports is None and loss is None:
            reader.fail("splitter needs loss_db or n_ports")
        return reader.build(ChannelSegment.splitter, n_ports=n_ports, loss_db=loss, excess_noise=eps)
    return reader.build(ChannelSegment.fixed_loss, loss_db=reader.number("loss_db", 0.0, minimum=0.0),
                        excess_noise=eps)


def _segment_list(data: Any, path: tuple, lines: dict, source: str) -> tuple[ChannelSegment, ...]:
    if data is None:
        return ()
    if not isinstance(data, list):
        raise ConfigError(f"{'.'.join(map(str, path))}: expected a list of segments", source, lines.get(path))
    return tuple(_segment(_Reader(item, path + (i,), lines, source), "fiber") for i, item in enumerate(data))


def _topology(r: _Reader) -> QanTopology:
    r.check_keys({"trunk", "splitter", "branches", "receivers"})
    trunk = _segment_list(r.data.get("trunk"), r.path + ("trunk",), r.lines, r.source)
    splitter = _segment(r.sub("splitter"), "splitter") if r.has("splitter") else ChannelSegment.splitter(loss_db=0.0)
    branches_raw = r.data.get("branches")
    if not isinstance(branches_raw, list) or not branches_raw:
        r.fail("needs a non-empty list of user branches", "branches")
    branches = tuple(_segment_list(b, r.path + ("branches", i), r.lines, r.source)
                     for i, b in enumerate(branches_raw))
    receivers_raw = r.data.get("receivers") or [{}] * len(branches)
    if not isinstance(receivers_raw, list) or len(receivers_raw) != len(branches):
        r.fail(f"needs one receiver per branch ({len(branches)})", "receivers")
    receivers = []
    for i, item in enumerate(receivers_raw):
        rr = _Reader(item, r.path + ("receivers", i), r.lines, r.source)
        rr.check_keys({"eta", "v_el_physical", "v_el", "responsivity", "wavelength_m"})
        if rr.has("responsivity"):
            eta = rr.build(quantum_efficiency_from_responsivity, re=rr.number("responsivity", positive=True),
                           wavelength=rr.number("wavelength_m", 1550e-9, positive=True))
        else:
            eta = rr.number("eta", 1.0, positive=True)
        receivers.append(rr.build(Receiver, eta=eta, v_el_physical=rr.number("v_el_physical", 0.0, minimum=0.0),
                                  v_el=rr.number("v_el", 0.0, minimum=0.0)))
    return r.build(QanTopology, trunk=trunk, splitter=splitter, branches=branches, receivers=tuple(receivers))


def _modulation(r: _Reader, seed: int) -> ModulationParams:
    names = {f.name for f in dataclasses.fields(ModulationParams)} - {"seed"}
    r.check_keys(names)
    kwargs: dict[str, Any] = {"v_a": r.number("v_a", positive=True), "seed": seed}
    for key in ("g", "symbol_rate", "bandwidth_b", "f_car", "rolloff"):
        if key in r.data:
            kwargs[key] = r.number(key)
    for key in ("samples_per_symbol", "n_symbols", "filter_span"):
        if key in r.data:
            kwargs[key] = r.integer(key)
    if r.has("f_if"):
        kwargs["f_if"] = r.number("f_if", positive=True)
    return r.build(ModulationParams, **kwargs)


def _distance_grid(r: _Reader) -> tuple[float, ...]:
    value = r.data.get("distances_km")
    if value is None:
        return ()
    if isinstance(value, dict):
        g = r.sub("distances_km")
        g.check_keys({"start", "stop", "step"})
        start, stop = g.number("start", 0.0, minimum=0.0), g.number("stop")
        step = g.number("step", positive=True)
        if stop < start:
            g.fail("stop must be >= start", "stop")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(float(x) for x in np.round(start + step * np.arange(n), 12))
    grid = r.number_list("distances_km")
    if any(d < 0 for d in grid):
        r.fail("distances must be >= 0", "distances_km")
    return grid


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", source,
                          mark.line + 1 if mark else None) from None
    lines = _line_map(node) if node is not None else {}
    root = _Reader(data, (), lines, source)
    root.check_keys({"modulation", "topology", "receiver", "calibration", "security", "sweep", "run", "cost"})
    for key in ("modulation", "topology"):
        if not root.has(key):
            root.fail(f"missing required section '{key}'")

    run_r = root.sub("run")
    run_r.check_keys({"n_frames", "seed", "check_winding", "tamper_dc_factor", "dump"})
    run = RunSettings(
        n_frames=run_r.integer("n_frames", 1, minimum=1),
        seed=run_r.integer("seed", 0, minimum=0),
        check_winding=run_r.boolean("check_winding", False),
        tamper_dc_factor=run_r.number("tamper_dc_factor", 1.0, positive=True),
        dump=run_r.boolean("dump", False),
    )
    modulation = _modulation(root.sub("modulation"), run.seed)
    topology = _topology(root.sub("topology"))

    rx_r = root.sub("receiver")
    rx_r.check_keys({"kk_upsample", "mu"})
    receiver = ReceiverSettings(rx_r.integer("kk_upsample", 4, minimum=1), rx_r.number("mu", 1.0, positive=True))

    cal_r = root.sub("calibration")
    cal_r.check_keys({"vacuum_scale", "reference_attenuation_db", "n_frames", "n_dark_frames", "dc_alarm_threshold"})
    calibration = CalibrationSettings(
        vacuum_scale=cal_r.number("vacuum_scale", 1.0, minimum=0.0),
        reference_attenuation_db=cal_r.number("reference_attenuation_db", minimum=0.0, optional=True),
        n_frames=cal_r.integer("n_frames", 4, minimum=1),
        n_dark_frames=cal_r.integer("n_dark_frames", 1, minimum=1),
        dc_alarm_threshold=cal_r.number("dc_alarm_threshold", 0.05, positive=True),
    )

    sec_r = root.sub("security")
    sec_r.check_keys({"beta", "f_rep", "detection", "v_a_per_user", "finite_size"})
    v_a_per_user = sec_r.number_list("v_a_per_user")
    if v_a_per_user is not None and len(v_a_per_user) != topology.n_users:
        sec_r.fail(f"needs {topology.n_users} values, one per user", "v_a_per_user")
    finite = None
    if sec_r.has("finite_size"):
        fs_r = sec_r.sub("finite_size")
        fs_r.check_keys({"n_total", "n_key_fraction", "eps_smooth", "eps_pa", "eps_pe"})
        n_total = fs_r.number_list("n_total", optional=False)
        frac = fs_r.number("n_key_fraction", 0.5, positive=True)
        if frac >= 1:
            fs_r.fail("must be < 1", "n_key_fraction")
        finite = FiniteSizeSettings(n_total, frac, *(fs_r.number(k, 1e-10, positive=True)
                                                     for k in ("eps_smooth", "eps_pa", "eps_pe")))
        for n in n_total:
            fs_r.build(finite.params, n_total=n)
    security = SecuritySettings(
        beta=sec_r.number("beta", 0.95, minimum=0.0),
        f_rep=sec_r.number("f_rep", 1e6, positive=True),
        detection=sec_r.choice("detection", "dd", DETECTIONS),
        v_a_per_user=v_a_per_user,
        finite_size=finite,
    )
    if security.beta > 1:
        sec_r.fail("must lie in [0, 1]", "beta")

    sw_r = root.sub("sweep")
    sw_r.check_keys({"distances_km", "detections"})
    detections = tuple(sw_r.data.get("detections") or SweepSettings.detections)
    for det in detections:
        if det not in DETECTIONS:
            sw_r.fail(f"unknown detection {det!r}; expected one of {', '.join(DETECTIONS)}", "detections")
    sweep = SweepSettings(_distance_grid(sw_r), detections)

    cost_r = root.sub("cost")
    cost_r.check_keys({"n_max", "c_pd", "multipliers"})
    multipliers = cost_r.data.get("multipliers")
    if multipliers is not None and not isinstance(multipliers, dict):
        cost_r.fail("expected a mapping of part -> multiplier", "multipliers")
    cost = CostSettings(cost_r.integer("n_max", 64, minimum=1), cost_r.number("c_pd", 1.0, positive=True),
                        multipliers)

    return ExperimentConfig(modulation, topology, receiver, calibration, security, sweep, run, cost,
                            raw=data, source=source)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}", "--preset")
    return resources.files("kkqkd.presets").joinpath(f"{name}.yaml").read_text(encoding="utf-8")


def load_preset(name: str) -> ExperimentConfig:
    return parse_config(preset_text(name), f"preset:{name}")
