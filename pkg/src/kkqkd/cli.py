"""Command-line front end.

Subcommands write CSV tables and a ``manifest.json`` into ``--out``.  Exit
codes: 0 success, 2 configuration error, 3 pipeline failure, 4 DC-monitor
alarm.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy
import yaml

from . import _random, calibration, economics, estimation, link, receiver, security
from .calibration import CalibrationRecord
from .config import PRESETS, ConfigError, ExperimentConfig, load_config, load_preset
from .waveform import SymbolFrame

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3
EXIT_ALARM = 4

CALIBRATION_FILE = "calibration.ini"
DUMP_PHOTOCURRENT_SYMBOLS = 20


class PipelineError(RuntimeError):
    pass


# -- helpers -------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"kkqkd": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, outputs: Sequence[Path],
                   extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config_source": cfg.source,
        "config_hash": cfg.config_hash(),
        "seed": cfg.run.seed,
        "versions": _versions(),
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _map(fn: Callable, jobs: Sequence, workers: int) -> list:
    """Run jobs in order, in a process pool when ``workers > 1``; results keep job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# -- calibrate -----------------------------------------------------------------

def _calibrate_user(job: tuple[ExperimentConfig, int]) -> CalibrationRecord:
    cfg, user = job
    seed = _random.derive_seed(cfg.run.seed, 1, user)
    setup = cfg.calibration_setup(user)
    return calibration.calibrate(setup, seed, cfg.calibration.n_frames, cfg.calibration.n_dark_frames)


def run_calibrate(cfg: ExperimentConfig, out: Path, workers: int = 1) -> dict[str, CalibrationRecord]:
    """Calibrate every user's receiver and write ``calibration.ini``."""
    records = _map(_calibrate_user, [(cfg, u) for u in range(cfg.n_users)], workers)
    named = {f"user{u + 1}": rec for u, rec in enumerate(records)}
    out.mkdir(parents=True, exist_ok=True)
    path = out / CALIBRATION_FILE
    calibration.save_records(path, named)
    write_manifest(out, "calibrate", cfg, [path])
    return named


# -- simulate ------------------------------------------------------------------

@dataclass(frozen=True)
class FrameRecord:
    frame: int
    user: int
    ok: bool
    v_a_hat: float = math.nan
    t_hat: float = math.nan
    eps_hat: float = math.nan
    xcorr_peak: float = math.nan
    lag: int = 0
    a_r: float = math.nan
    dc_status: str = ""
    clip_fraction: float = 0.0
    winding: int = 0
    dump: dict | None = None


def _simulate_frame(job: tuple[ExperimentConfig, CalibrationRecord, int, int]) -> FrameRecord:
    cfg, cal, user, frame = job
    setup = cfg.link_setup(user)
    if cfg.run.tamper_dc_factor != 1.0:
        params = dataclasses.replace(setup.params, g=setup.params.g * cfg.run.tamper_dc_factor)
        setup = setup.replace(params=params)
    want_dump = cfg.run.dump and user == 0 and frame == 0
    seed = _random.derive_seed(cfg.run.seed, 2, user, frame)
    res = link.run_frame(setup, seed, keep_trace=want_dump, check_minimum_phase=cfg.run.check_winding)
    if res.winding != 0 or res.rx.clip_fraction > receiver.CLIP_FLAG_FRACTION:
        return FrameRecord(frame, user, False, clip_fraction=res.rx.clip_fraction, winding=res.winding)
    lag, peak = receiver.cross_correlate(res.rx.as_symbol_frame(), res.tx)
    rx = SymbolFrame(receiver.align(res.rx.symbols, lag))
    est = estimation.estimate_parameters(res.tx, estimation.normalize_to_snu(rx, cal),
                                         setup.receiver.eta, cal.v_el)
    status = receiver.monitor_dc_intensity(res.rx.a_r_estimate, cal.a_r_reference,
                                           cfg.calibration.dc_alarm_threshold)
    dump = None
    if want_dump:
        n = DUMP_PHOTOCURRENT_SYMBOLS * setup.params.samples_per_symbol
        dump = {"tx": res.tx.symbols, "rx": estimation.normalize_to_snu(rx, cal).symbols,
                "t": res.trace.times()[:n], "i": res.trace.samples[:n]}
    return FrameRecord(frame, user, True, est.v_a_hat, est.t_hat, est.eps_hat, peak, lag,
                       res.rx.a_r_estimate, status, res.rx.clip_fraction, res.winding, dump)


@dataclass(frozen=True)
class UserSummary:
    user: int
    frames_used: int
    frames_skipped: int
    v_a_hat: float
    t_hat: float
    eps_hat: float
    v_el: float
    xcorr_peak: float
    alarms: int
    asymptotic: security.SkrResult | None
    finite: dict


@dataclass(frozen=True)
class SimulationResult:
    calibration: dict[str, CalibrationRecord]
    frames: list[FrameRecord]
    users: list[UserSummary]

    @property
    def alarms(self) -> int:
        return sum(u.alarms for u in self.users)


def summarize_user(cfg: ExperimentConfig, user: int, frames: Sequence[FrameRecord],
                   cal: CalibrationRecord) -> UserSummary:
    """Average the per-frame estimates and turn them into key rates."""
    used = [f for f in frames if f.ok]
    skipped = len(frames) - len(used)
    alarms = sum(f.dc_status == "alarm" for f in used)
    if not used:
        return UserSummary(user, 0, skipped, math.nan, math.nan, math.nan, cal.v_el, math.nan, alarms, None, {})
    v_a = float(np.mean([f.v_a_hat for f in used]))
    t = float(np.mean([f.t_hat for f in used]))
    eps = float(np.mean([f.eps_hat for f in used]))
    peak = float(np.mean([f.xcorr_peak for f in used]))
    asym, finite = None, {}
    t_clamped = min(t, 1.0)
    if t_clamped > 0:
        # negative excess-noise estimates are statistical; the key rate uses eps >= 0
        p = cfg.security_params(user, v_a=v_a, t=t_clamped, eps=max(eps, 0.0), v_el=cal.v_el)
        asym = security.skr_asymptotic(p)
        if cfg.security.finite_size is not None:
            for n_total in cfg.security.finite_size.n_total:
                try:
                    finite[n_total] = security.skr_finite_size(p, cfg.security.finite_size.params(n_total))
                except ValueError:
                    finite[n_total] = None
    return UserSummary(user, len(used), skipped, v_a, t, eps, cal.v_el, peak, alarms, asym, finite)


def run_simulate(cfg: ExperimentConfig, out: Path | None = None, workers: int = 1,
                 records: dict[str, CalibrationRecord] | None = None) -> SimulationResult:
    """Full waveform simulation of every user; writes estimate and SKR tables when ``out`` is set."""
    if records is None:
        records = _map(_calibrate_user, [(cfg, u) for u in range(cfg.n_users)], workers)
        records = {f"user{u + 1}": rec for u, rec in enumerate(records)}
    cals = []
    for u in range(cfg.n_users):
        key = f"user{u + 1}"
        if key not in records:
            raise PipelineError(f"calibration has no record for {key}")
        cals.append(records[key])
    jobs = [(cfg, cals[u], u, f) for u in range(cfg.n_users) for f in range(cfg.run.n_frames)]
    frames = sorted(_map(_simulate_frame, jobs, workers), key=lambda r: (r.user, r.frame))
    users = [summarize_user(cfg, u, [f for f in frames if f.user == u], cals[u]) for u in range(cfg.n_users)]
    result = SimulationResult(records, frames, users)
    if out is not None:
        _write_simulation(cfg, out, result)
    return result


def _write_simulation(cfg: ExperimentConfig, out: Path, result: SimulationResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cal_path = out / CALIBRATION_FILE
    calibration.save_records(cal_path, result.calibration)
    est_path = write_csv(
        out / "estimates.csv",
        ["frame", "user", "v_a_hat", "t_hat", "eps_hat", "xcorr_peak", "lag", "a_r", "dc_status",
         "clip_fraction", "skipped"],
        [(f.frame, f.user + 1, f.v_a_hat, f.t_hat, f.eps_hat, f.xcorr_peak, f.lag, f.a_r, f.dc_status,
          f.clip_fraction, int(not f.ok)) for f in result.frames],
    )
    n_totals = cfg.security.finite_size.n_total if cfg.security.finite_size else ()
    header = ["user", "frames_used", "frames_skipped", "v_a_hat", "t_hat", "eps_hat", "v_el", "xcorr_peak",
              "dc_alarms", "skr_asym_bps", "skr_asym_clipped_bps", "i_ab", "chi_be"]
    header += [f"skr_fs_bps_n{n:g}" for n in n_totals]
    rows = []
    for u in result.users:
        a = u.asymptotic
        row = [u.user + 1, u.frames_used, u.frames_skipped, u.v_a_hat, u.t_hat, u.eps_hat, u.v_el, u.xcorr_peak,
               u.alarms, a.skr_bps if a else math.nan, a.skr_clipped_bps if a else math.nan,
               a.i_ab if a else math.nan, a.chi_be if a else math.nan]
        row += [u.finite[n].skr_bps if u.finite.get(n) else math.nan for n in n_totals]
        rows.append(row)
    skr_path = write_csv(out / "skr.csv", header, rows)
    outputs = [cal_path, est_path, skr_path]
    dumps = [f.dump for f in result.frames if f.dump is not None]
    if dumps:
        d = dumps[0]
        outputs.append(write_csv(out / "symbols_user1.csv", ["index", "re_tx", "im_tx", "re_rx", "im_rx"],
                                 ((k, a.real, a.imag, b.real, b.imag)
                                  for k, (a, b) in enumerate(zip(d["tx"], d["rx"])))))
        outputs.append(write_csv(out / "photocurrent_user1.csv", ["t", "i"], zip(d["t"], d["i"])))
    write_manifest(out, "simulate", cfg, outputs)


# -- skr -------------------------------------------------------------------------

SKR_HEADER = ["user", "detection", "n_total", "v_a", "t", "eps", "eta", "v_el", "skr_bps", "skr_clipped_bps",
              "i_ab", "chi_be", "lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "chi_line", "chi_det",
              "chi_tot", "delta_n", "t_min", "eps_max"]


def skr_rows(cfg: ExperimentConfig) -> list[list]:
    rows = []
    n_totals = cfg.security.finite_size.n_total if cfg.security.finite_size else ()
    for u in range(cfg.n_users):
        p = cfg.security_params(u)
        results = [("inf", security.skr_asymptotic(p))]
        for n in n_totals:
            results.append((f"{n:g}", security.skr_finite_size(p, cfg.security.finite_size.params(n))))
        for n_label, r in results:
            fs = r.finite_size_terms
            rows.append([u + 1, p.detection, n_label, p.v_a, p.t, p.eps, p.eta, p.v_el, r.skr_bps,
                         r.skr_clipped_bps, r.i_ab, r.chi_be, *r.lambdas, r.chi_line, r.chi_det, r.chi_tot,
                         fs.delta_n if fs else math.nan, fs.t_min if fs else math.nan,
                         fs.eps_max if fs else math.nan])
    return rows


def run_skr(cfg: ExperimentConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = write_csv(out / "skr.csv", SKR_HEADER, skr_rows(cfg))
    write_manifest(out, "skr", cfg, [path])
    return path


# -- sweep ---------------------------------------------------------------------

SWEEP_HEADER = ["distance_km", "user", "t_eff", "eps", "skr_asym_bps", "skr_fs_bps", "i_ab", "chi_be", "detection"]


def sweep_rows(cfg: ExperimentConfig) -> list[security.SweepRow]:
    if not cfg.sweep.distances_km:
        raise ConfigError("sweep.distances_km: the distance grid is empty", cfg.source)
    fs = None
    if cfg.security.finite_size is not None:
        fs = cfg.security.finite_size.params(cfg.security.finite_size.n_total[0])
    rows = []
    for det in cfg.sweep.detections:
        # excess noise lives in the topology segments, so the base eps is zero
        per_user = [cfg.security_params(u, t=1.0, eps=0.0, detection=det) for u in range(cfg.n_users)]
        rows += security.qan_sweep(cfg.topology, per_user, cfg.sweep.distances_km, fs)
    return rows


def run_sweep(cfg: ExperimentConfig, out: Path, plot_script: bool = False) -> Path:
    rows = sweep_rows(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = write_csv(out / "sweep.csv", SWEEP_HEADER,
                     [(r.distance_km, r.user + 1, r.t_eff, r.eps, r.skr_asym_bps, r.skr_fs_bps, r.i_ab, r.chi_be,
                       r.detection) for r in rows])
    outputs = [path]
    if plot_script:
        outputs.append(_write_plot_script(out / "plot_sweep.py", SWEEP_PLOT))
    write_manifest(out, "sweep", cfg, outputs)
    return path


# -- cost ----------------------------------------------------------------------

def run_cost(cfg: ExperimentConfig, out: Path, n_max: int | None = None, plot_script: bool = False) -> Path:
    n_max = cfg.cost.n_max if n_max is None else n_max
    if n_max < 1:
        raise ConfigError(f"n_max must be >= 1 (got {n_max})", "--n-max")
    model = economics.CostModel(cfg.cost.c_pd, cfg.cost.multipliers) if cfg.cost.multipliers else \
        economics.CostModel(cfg.cost.c_pd)
    out.mkdir(parents=True, exist_ok=True)
    path = write_csv(out / "cost.csv", ["scheme", "n_users", "cost_cpd"], economics.cost_table(n_max, model))
    outputs = [path]
    if plot_script:
        outputs.append(_write_plot_script(out / "plot_cost.py", COST_PLOT))
    write_manifest(out, "cost", cfg, outputs)
    return path


SWEEP_PLOT = '''"""Plot sweep.csv (clipped SKR against distance, one panel per detection)."""
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

curves = defaultdict(list)
with open("sweep.csv") as fh:
    for r in csv.DictReader(fh):
        curves[(r["detection"], r["user"])].append((float(r["distance_km"]), max(float(r["skr_asym_bps"]), 0.0)))
detections = sorted({d for d, _ in curves})
fig, axes = plt.subplots(1, len(detections), figsize=(5 * len(detections), 4), sharey=True)
for ax, det in zip(axes if len(detections) > 1 else [axes], detections):
    for (d, user), pts in sorted(curves.items()):
        if d == det:
            ax.semilogy(*zip(*pts), label=f"user {user}")
    ax.set_title(det)
    ax.set_xlabel("distance (km)")
    ax.legend()
axes[0].set_ylabel("SKR (bit/s)") if len(detections) > 1 else axes.set_ylabel("SKR (bit/s)")
fig.savefig("sweep.png", dpi=150, bbox_inches="tight")
'''

COST_PLOT = '''"""Plot cost.csv (total cost against user count per scheme)."""
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

curves = defaultdict(list)
with open("cost.csv") as fh:
    for r in csv.DictReader(fh):
        curves[r["scheme"]].append((int(r["n_users"]), float(r["cost_cpd"])))
for scheme, pts in sorted(curves.items()):
    plt.plot(*zip(*pts), label=scheme)
plt.xlabel("users N")
plt.ylabel("cost (C_PD)")
plt.legend()
plt.savefig("cost.png", dpi=150, bbox_inches="tight")
'''


def _write_plot_script(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="YAML experiment configuration")
    src.add_argument("--preset", choices=PRESETS, help="shipped configuration")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory (default: results)")
    common.add_argument("--seed", type=int, help="override run.seed (unsigned 64-bit)")
    common.add_argument("--workers", type=int, default=1, help="worker processes (default: 1)")

    parser = argparse.ArgumentParser(prog="kkqkd", description="Direct-detection CV-QKD simulator and key-rate tools")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", parents=[common], help="shot-noise and electronic-noise calibration")
    sim = sub.add_parser("simulate", parents=[common], help="waveform simulation, estimation and key rates")
    sim.add_argument("--calibration", type=Path, help="reuse a calibration.ini instead of recalibrating")
    sub.add_parser("skr", parents=[common], help="analytic key rates for the configured users")
    sw = sub.add_parser("sweep", parents=[common], help="key rate against trunk distance")
    sw.add_argument("--plot-script", action="store_true", help="also write a matplotlib script")
    cost = sub.add_parser("cost", parents=[common], help="network hardware cost table")
    cost.add_argument("--n-max", type=int, help="largest user count (default: cost.n_max or 64)")
    cost.add_argument("--plot-script", action="store_true", help="also write a matplotlib script")
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.preset is not None:
        cfg = load_preset(args.preset)
    elif args.command == "cost":
        cfg = load_preset("fig3-4user")
    else:
        raise ConfigError("one of --config or --preset is required", "kkqkd")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        raise ConfigError(f"--seed must be an unsigned 64-bit integer (got {args.seed})", "kkqkd")
    if args.workers < 1:
        raise ConfigError(f"--workers must be >= 1 (got {args.workers})", "kkqkd")
    return cfg.with_overrides(seed=args.seed)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        out: Path = args.out
        if args.command == "calibrate":
            for name, rec in run_calibrate(cfg, out, args.workers).items():
                print(f"{name}: snu_per_quadrature={rec.snu_per_quadrature:.6g} v_el={rec.v_el:.5f} SNU "
                      f"a_r_reference={rec.a_r_reference:.6g}")
        elif args.command == "simulate":
            records = calibration.load_records(args.calibration) if args.calibration else None
            result = run_simulate(cfg, out, args.workers, records)
            for u in result.users:
                skr = u.asymptotic.skr_bps if u.asymptotic else math.nan
                print(f"user{u.user + 1}: frames={u.frames_used} skipped={u.frames_skipped} v_a={u.v_a_hat:.4f} "
                      f"T={u.t_hat:.4f} eps={u.eps_hat:.4f} xcorr={u.xcorr_peak:.3f} skr={skr / 1e3:.3f} kbit/s "
                      f"dc_alarms={u.alarms}")
            if result.alarms:
                print(f"DC monitor raised {result.alarms} alarm(s)", file=sys.stderr)
                return EXIT_ALARM
        elif args.command == "skr":
            path = run_skr(cfg, out)
            for row in skr_rows(cfg):
                print(f"user{row[0]} n_total={row[2]}: skr={row[8] / 1e3:.3f} kbit/s")
            print(f"wrote {path}")
        elif args.command == "sweep":
            print(f"wrote {run_sweep(cfg, out, args.plot_script)}")
        elif args.command == "cost":
            print(f"wrote {run_cost(cfg, out, args.n_max, args.plot_script)}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, receiver.MinimumPhaseError, RuntimeError, ValueError, OSError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
