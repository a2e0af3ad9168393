"""Command-line front-end: ``dmdxtalk {simulate,optimize,sweep,report}``.

Every command writes into ``OUT/<scenario>/<command>/``: one
``summary.tsv`` (columns scenario, command, seed, quantity, value), an
``artifacts.txt`` listing the data files, and the data files themselves
with a ``_s<seed>`` suffix. ``report`` collates all summaries under OUT.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

from scipy import fft as sfft
from threadpoolctl import threadpool_limits

from . import __version__
from .calibrate import optimize_sites, write_plan_table, write_scan_table
from .double_pass import (PupilSpec, calibrated_pupil, aperture_sweep, ip1_field, simulate_double_pass,
                          write_sweep_table)
from .errors import ConfigError, DmdXtalkError
from .hologram import write_pattern
from .metrics import extract_profile, relative_crosstalk, write_profile
from .optics import write_field
from .runconfig import RunConfig, load
from .scenario import Scene, build_scene
from .system import DoublePassSystem

log = logging.getLogger("dmdxtalk")

SUMMARY_COLUMNS = ("scenario", "command", "seed", "quantity", "value")


class Outputs:
    """Collects summary rows and artifact names for one command run."""

    def __init__(self, rc: RunConfig, command: str):
        self.rc = rc
        self.command = command
        self.dir = Path(rc.output_dir) / rc.scenario / command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.rows: list = []
        self.artifacts: list = []

    def path(self, stem: str, seed: int, ext: str) -> Path:
        name = f"{stem}_s{seed}.{ext}"
        self.artifacts.append(name)
        return self.dir / name

    def add(self, seed: int, quantity: str, value: str) -> None:
        self.rows.append((self.rc.scenario, self.command, str(seed), quantity, value))

    def finish(self) -> Path:
        lines = ["\t".join(SUMMARY_COLUMNS)] + ["\t".join(r) for r in self.rows]
        (self.dir / "summary.tsv").write_text("\n".join(lines) + "\n")
        (self.dir / "artifacts.txt").write_text("".join(f"{a}\n" for a in sorted(self.artifacts)))
        return self.dir


def _db(value: float) -> str:
    return f"{value:.2f}"


def _site_key(site: float) -> str:
    return f"{site:.3f}"


def scene_for(rc: RunConfig, seed: int) -> Scene:
    ab, relay = rc.aberration, rc.relay
    return build_scene(rc.optics, rc.target, seed, characterized_rms=ab.rms, residual_rms=ab.residual_rms,
                       baseline_db=ab.baseline_db, tune_site=ab.tune_site, ifta_iterations=rc.ifta_iterations,
                       terms=ab.terms, relay_rms=relay.rms, relay_seed=relay.seed, stray_floor=relay.stray_floor)


def _pupil(rc: RunConfig, scene: Scene) -> PupilSpec | None:
    if rc.pupil is None:
        return None
    field1 = ip1_field(scene.cfg, scene.target, scene.illum, scene.primary, scene.train_aberration)
    return calibrated_pupil(scene.cfg, field1, rc.pupil.d, rc.pupil.shape)


def _double_pass(scene: Scene, pattern, pupil):
    return simulate_double_pass(scene.cfg, pattern, pupil, scene.train_aberration, scene.relay_aberration,
                                scene.stray_floor, target=scene.target, illum=scene.illum,
                                rng_seed=scene.rng_seed)


# ------------------------------------------------------------------ commands


def cmd_simulate(rc: RunConfig) -> Path:
    """Profile, field snapshot and I_X at every configured site."""
    out = Outputs(rc, "simulate")
    for seed in rc.seeds:
        log.info("simulate: scenario %s seed %d", rc.scenario, seed)
        scene = scene_for(rc, seed)
        if rc.mode == "double":
            res = _double_pass(scene, scene.primary, _pupil(rc, scene))
            field, profile = res.field_ip2, res.profile
        else:
            field = ip1_field(scene.cfg, scene.target, scene.illum, scene.primary, scene.train_aberration)
            profile = extract_profile(field, floor_db=scene.cfg.detector_floor_db)
        write_profile(profile, out.path("profile", seed, "tsv"))
        write_field(field, out.path("field", seed, "dxf"))
        out.add(seed, "waist_m", f"{profile.waist:.4e}")
        for s in rc.sites:
            out.add(seed, f"I_X_dB@{_site_key(s)}", _db(relative_crosstalk(profile, s)))
        if rc.mode == "double":
            out.add(seed, "d_prime_w", f"{res.effective_aperture:.3f}")
            out.add(seed, "d_prime_flagged", str(int(res.flagged)))
    return out.finish()


def cmd_optimize(rc: RunConfig) -> Path:
    """Site plans, scan traces and the multiplexed pattern."""
    out = Outputs(rc, "optimize")
    scans = rc.scans
    for seed in rc.seeds:
        log.info("optimize: scenario %s seed %d, %d sites", rc.scenario, seed, len(rc.sites))
        scene = scene_for(rc, seed)
        pupil = None
        if rc.mode == "double":
            pupil = _pupil(rc, scene)
            system = DoublePassSystem.from_scene(scene, pupil=pupil)
        else:
            system = scene.single_pass()
        result = optimize_sites(system, list(rc.sites), phase_points=scans.phase_points,
                                amplitude_points=scans.amplitude_points,
                                exclusion_threshold=scans.exclusion_threshold, seed_target=scans.seed_target,
                                repair_rounds=scans.repair_rounds)
        pattern = system.pattern()
        write_plan_table(result.plans, out.path("plan", seed, "tsv"))
        write_scan_table(result.scans, out.path("scans", seed, "tsv"))
        write_pattern(pattern, out.path("pattern", seed, "dmd"))
        for p in result.plans:
            key = _site_key(p.site)
            out.add(seed, f"I_X_before_dB@{key}", _db(p.before_db))
            out.add(seed, f"I_X_after_dB@{key}", _db(p.after_db))
            out.add(seed, f"removed@{key}", str(int(p.removed)))
        if rc.mode == "double":
            res = _double_pass(scene, pattern, pupil)
            out.add(seed, "d_prime_w", f"{res.effective_aperture:.3f}")
    return out.finish()


def cmd_sweep(rc: RunConfig) -> Path:
    """Effective aperture ``d'`` against pupil size ``d``."""
    out = Outputs(rc, "sweep")
    d_values = list(rc.sweep.d_values) + ([None] if rc.sweep.include_open else [])
    for seed in rc.seeds:
        log.info("sweep: scenario %s seed %d, %d pupils", rc.scenario, seed, len(d_values))
        scene = scene_for(rc, seed)
        shape = rc.pupil.shape if rc.pupil is not None else "square"
        rows = aperture_sweep(scene.cfg, scene.primary, d_values, target=scene.target,
                              fp1_aberration=scene.train_aberration, relay_aberration=scene.relay_aberration,
                              stray_floor=scene.stray_floor, illum=scene.illum, rng_seed=scene.rng_seed,
                              shape=shape)
        write_sweep_table(rows, out.path("sweep", seed, "tsv"))
        for d, dp, _ in rows:
            out.add(seed, "d_prime_w@open" if d is None else f"d_prime_w@{d:.3f}", f"{dp:.3f}")
    return out.finish()


def cmd_report(run_dir) -> Path:
    """Collate every ``summary.tsv`` under ``run_dir`` into ``report.tsv``.

    Raises
    ------
    ConfigError
        If there are no summaries, or a summary lists artifacts that are
        missing. All missing files are named in the message.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory {run_dir} does not exist")
    summaries = sorted(run_dir.glob("*/*/summary.tsv"))
    missing, rows = [], []
    for summary in summaries:
        listing = summary.parent / "artifacts.txt"
        if not listing.is_file():
            missing.append(str(listing))
        else:
            for name in listing.read_text().split():
                if not (summary.parent / name).is_file():
                    missing.append(str(summary.parent / name))
        lines = summary.read_text().splitlines()
        if not lines or tuple(lines[0].split("\t")) != SUMMARY_COLUMNS:
            missing.append(f"{summary} (not a summary table)")
            continue
        rows.extend(tuple(line.split("\t")) for line in lines[1:] if line)
    if not summaries:
        raise ConfigError(f"no summary.tsv files under {run_dir}")
    if missing:
        raise ConfigError("missing run outputs:\n  " + "\n  ".join(missing))
    rows.sort(key=lambda r: (r[0], r[1], int(r[2])))
    path = run_dir / "report.tsv"
    path.write_text("\n".join(["\t".join(SUMMARY_COLUMNS)] + ["\t".join(r) for r in rows]) + "\n")
    return path


COMMANDS = {"simulate": cmd_simulate, "optimize": cmd_optimize, "sweep": cmd_sweep}


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config file (YAML)")
    common.add_argument("--seed", type=int, help="run only this seed instead of the configured list")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--threads", type=int, default=0, help="worker threads for FFT and BLAS (0 = auto)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="dmdxtalk", description="Simulate and suppress DMD addressing crosstalk.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="propagate the primary hologram and report I_X")
    sub.add_parser("optimize", parents=[common], help="optimise secondary gratings at the configured sites")
    sub.add_parser("sweep", parents=[common], help="effective aperture d' against pupil size d")
    sub.add_parser("report", parents=[common], help="collate summaries of earlier runs")
    return parser


@contextlib.contextmanager
def thread_limit(n: int):
    if n < 0:
        raise ConfigError("--threads must be 0 (auto) or positive")
    n = n or os.cpu_count() or 1
    with threadpool_limits(n), sfft.set_workers(n):
        yield


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    try:
        with thread_limit(args.threads):
            if args.command == "report":
                run_dir = args.out
                if run_dir is None:
                    run_dir = load(args.config).output_dir if args.config else "out"
                path = cmd_report(run_dir)
                sys.stdout.write(path.read_text())
                return 0
            if args.config is None:
                raise ConfigError(f"{args.command} needs --config")
            rc = load(args.config).with_overrides(args.seed, args.out)
            out_dir = COMMANDS[args.command](rc)
            print(out_dir / "summary.tsv")
            return 0
    except DmdXtalkError as exc:
        print(f"dmdxtalk {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
