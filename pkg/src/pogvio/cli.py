"""Command-line entry points: ``simulate``, ``run``, ``montecarlo`` and ``nullspace``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import __version__
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .consistency import (
    MonteCarloRecord, epoch_nees, observability_nullspace_residual, summarize, write_summary,
)
from .estimator import run_filter
from .simulator import SimData, generate, run_monte_carlo

logger = logging.getLogger(__name__)

EPOCH_COLUMNS = (
    ["t"]
    + [f"true_{k}" for k in ("rx", "ry", "rz", "px", "py", "pz")]
    + [f"est_{k}" for k in ("rx", "ry", "rz", "px", "py", "pz")]
    + [f"var_{k}" for k in ("thx", "thy", "thz", "px", "py", "pz")]
    + ["nees"]
)


def _f(x) -> str:
    return repr(float(x))


def write_epochs(path, rec: MonteCarloRecord) -> None:
    """Per-epoch CSV: time, true and estimated pose (rotation vector, position), pose variances, NEES."""
    rv_true = Rotation.from_matrix(rec.R_true).as_rotvec()
    rv_est = Rotation.from_matrix(rec.R_est).as_rotvec()
    var = np.einsum("kii->ki", rec.pose_cov)
    eps = epoch_nees(rec.pose_errors(), rec.pose_cov)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPOCH_COLUMNS)
        for k in range(len(rec.t)):
            row = [rec.t[k], *rv_true[k], *rec.p_true[k], *rv_est[k], *rec.p_est[k], *var[k], eps[k]]
            w.writerow([_f(x) for x in row])


def write_metadata(path, cfg: ExperimentConfig, command: str, seeds, extra: dict = None) -> None:
    meta = {
        "command": command,
        "version": __version__,
        "seeds": list(seeds),
        "config": cfg.as_dict(),
        "config_text": dump_config(cfg),
    }
    meta.update(extra or {})
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_streams(out: Path, sim: SimData) -> list:
    """Raw simulated streams for external replay."""
    files = []
    imu = sim.imu
    with open(out / "imu.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "wx", "wy", "wz", "ax", "ay", "az"])
        for k in range(len(imu["t"])):
            w.writerow([_f(x) for x in (imu["t"][k], *imu["omega"][k], *imu["accel"][k])])
    files.append("imu.csv")
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "t", "rx", "ry", "rz", "px", "py", "pz", "vx", "vy", "vz",
                    "bgx", "bgy", "bgz", "bax", "bay", "baz"])
        rv = Rotation.from_matrix(sim.truth_R).as_rotvec()
        for j in range(len(sim.frame_times)):
            w.writerow([j] + [_f(x) for x in (sim.frame_times[j], *rv[j], *sim.truth_p[j], *sim.truth_v[j],
                                              *sim.truth_bg[j], *sim.truth_ba[j])])
    files.append("truth.csv")
    with open(out / "camera.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "t", "feature_id", "x", "y"])
        for j, dets in enumerate(sim.detections):
            for fid, xy in dets:
                w.writerow([j, _f(sim.frame_times[j]), fid, _f(xy[0]), _f(xy[1])])
    files.append("camera.csv")
    with open(out / "landmarks.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature_id", "x", "y", "z"])
        for i, p in enumerate(sim.landmarks):
            w.writerow([i, *(_f(x) for x in p)])
    files.append("landmarks.csv")
    if sim.gnss:
        with open(out / "gnss.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "t", "sat_id", "constellation", "sat_x", "sat_y", "sat_z",
                        "pseudorange", "doppler", "wavelength"])
            for j in sorted(sim.gnss):
                for m in sim.gnss[j]:
                    w.writerow([j, _f(sim.frame_times[j]), m.sat.sat_id, m.sat.constellation,
                                *(_f(x) for x in m.sat.pos), _f(m.pseudorange), _f(m.doppler),
                                _f(m.sat.wavelength)])
        files.append("gnss.csv")
    return files


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    sim = generate(cfg.sim_config())
    files = write_streams(out, sim)
    write_metadata(out / "metadata.json", cfg, "simulate", [cfg.base_seed], {"files": files})
    print(f"wrote {len(files)} stream files to {out}")
    return 0


def _report(rows):
    for r in rows:
        print(f"{r['algorithm']}: ori {r['rmse_ori_deg']:.3f} deg, pos {r['rmse_pos_m']:.3f} m, "
              f"NEES {r['nees_pose']:.2f}, diverged {r['n_diverged']}")


def cmd_run(cfg: ExperimentConfig, out: Path) -> int:
    sim = generate(cfg.sim_config())
    rec = run_filter(sim, cfg.filter_config())
    write_epochs(out / "epochs.csv", rec)
    rows = [summarize([rec], cfg.algorithm, cfg.pixel_sigma)]
    write_summary(out / "summary.csv", rows)
    write_metadata(out / "metadata.json", cfg, "run", [cfg.base_seed])
    _report(rows)
    return 0


def cmd_montecarlo(cfg: ExperimentConfig, out: Path) -> int:
    records = run_monte_carlo(cfg.sim_config(), cfg.filter_config(), cfg.n_runs, cfg.base_seed, cfg.n_jobs)
    for rec in records:
        write_epochs(out / f"epochs_{rec.run_id:03d}.csv", rec)
    rows = [summarize(records, cfg.algorithm, cfg.pixel_sigma)]
    write_summary(out / "summary.csv", rows)
    seeds = [cfg.base_seed + i for i in range(cfg.n_runs)]
    write_metadata(out / "metadata.json", cfg, "montecarlo", seeds,
                   {"diverged_runs": [r.run_id for r in records if r.diverged]})
    _report(rows)
    return 0


def cmd_nullspace(cfg: ExperimentConfig, out: Path) -> int:
    sim = generate(cfg.sim_config())
    _, filt = run_filter(sim, cfg.filter_config(record_trace=True), return_filter=True)
    res = observability_nullspace_residual(filt.trace)
    cons = filt.trace.constraint
    with open(out / "nullspace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["update", "frame", "residual", "clone_sum_constraint"])
        for k, (frame, r) in enumerate(zip(filt.trace.t, res)):
            w.writerow([k, frame, _f(r), _f(cons[k]) if k < len(cons) else ""])
    worst = float(res.max()) if len(res) else 0.0
    write_metadata(out / "metadata.json", cfg, "nullspace", [cfg.base_seed],
                   {"max_residual": worst, "n_updates": len(res)})
    print(f"{cfg.algorithm}: {len(res)} updates, max null-space residual {worst:.3e}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "montecarlo": cmd_montecarlo, "nullspace": cmd_nullspace}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pogvio", description="Pose-only invariant VIO simulation and evaluation.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--algorithm", help="override the configured algorithm")
    p.add_argument("--runs", type=int, help="number of Monte Carlo runs")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {
            "algorithm": args.algorithm, "n_runs": args.runs, "base_seed": args.seed, "output_dir": args.out,
        })
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[args.command](cfg, out)


if __name__ == "__main__":
    sys.exit(main())
