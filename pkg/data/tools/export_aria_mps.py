#!/usr/bin/env python3
"""
Convert Aria Machine Perception Services outputs into the three stream text files.

Usage:
  python3 export_aria_mps.py --mps-dir path/to/mps --out recordings/loc1_rec3

Inputs (standard MPS layout, .csv or .csv.gz):
  slam/semidense_points.csv(.gz)        uid, graph_uid, px_world, py_world, pz_world, inv_dist_std, dist_std
  slam/semidense_observations.csv(.gz)  uid, frame_tracking_timestamp_us, camera_serial, u, v
  slam/closed_loop_trajectory.csv       tracking_timestamp_us, tx/ty/tz_world_device, qx/qy/qz/qw_world_device
  eye_gaze/general_eye_gaze.csv         tracking_timestamp_us, yaw_rads_cpf (or left/right_yaw_rads_cpf), pitch_rads_cpf

Outputs in --out: points.csv (one row per observation of a semidense point),
trajectory.csv (central-pupil frame to world) and gaze.csv (unit vectors in the
central-pupil frame). Times are seconds from the first trajectory sample.

Notes:
- The device→CPF extrinsic lives in the recording's calibration, not in the MPS
  outputs; pass it with --device-cpf "qw,qx,qy,qz,tx,ty,tz" (default identity).
- CPF has x left and y up; rows are rotated 180° about z so that the local frame
  has x right and y down like the image plane. Pass --keep-cpf-axes to skip that.
- Nothing here reads the recording containers themselves.
"""
import argparse
import csv
import gzip
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

US_PER_S = 1e6
FLIP_XY = Rotation.from_euler("z", 180, degrees=True)


def open_table(base: Path):
    for candidate in (base, base.with_name(base.name + ".gz")):
        if candidate.exists():
            opener = gzip.open if candidate.suffix == ".gz" else open
            return opener(candidate, "rt", encoding="utf-8", newline="")
    raise FileNotFoundError(f"missing MPS table {base}(.gz)")


def read_rows(base: Path):
    with open_table(base) as f:
        yield from csv.DictReader(f)


def parse_extrinsic(text: str):
    values = [float(v) for v in text.split(",")]
    if len(values) != 7:
        raise ValueError("--device-cpf needs 7 comma-separated values qw,qx,qy,qz,tx,ty,tz")
    qw, qx, qy, qz, *t = values
    return Rotation.from_quat([qx, qy, qz, qw]), np.array(t)


def load_trajectory(mps: Path, device_cpf, flip: bool):
    rows = list(read_rows(mps / "slam" / "closed_loop_trajectory.csv"))
    t_us = np.array([float(r["tracking_timestamp_us"]) for r in rows])
    trans = np.array([[float(r[f"t{a}_world_device"]) for a in "xyz"] for r in rows])
    quats = np.array([[float(r[f"q{a}_world_device"]) for a in "xyzw"] for r in rows])
    r_cpf, t_cpf = device_cpf
    world_device = Rotation.from_quat(quats)
    world_cpf = world_device * r_cpf
    if flip:
        world_cpf = world_cpf * FLIP_XY
    positions = world_device.apply(t_cpf) + trans
    order = np.argsort(t_us, kind="stable")
    keep = order[np.concatenate([[True], np.diff(t_us[order]) > 0])]
    return t_us[keep], world_cpf[keep], positions[keep]


def write_trajectory(path: Path, t0: float, t_us, rotations, positions):
    xyzw = rotations.as_quat()
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("# t_sec,qw,qx,qy,qz,tx,ty,tz\n")
        w = csv.writer(f)
        for t, q, p in zip(t_us, xyzw, positions):
            w.writerow([repr((t - t0) / US_PER_S), q[3], q[0], q[1], q[2], *p])


def write_gaze(path: Path, mps: Path, t0: float, flip: bool):
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("# t_sec,gx,gy,gz\n")
        w = csv.writer(f)
        for r in read_rows(mps / "eye_gaze" / "general_eye_gaze.csv"):
            if "yaw_rads_cpf" in r:
                yaw = float(r["yaw_rads_cpf"])
            else:
                yaw = 0.5 * (float(r["left_yaw_rads_cpf"]) + float(r["right_yaw_rads_cpf"]))
            pitch = float(r["pitch_rads_cpf"])
            d = np.array([np.tan(yaw), np.tan(pitch), 1.0])
            d /= np.linalg.norm(d)
            if flip:
                d[:2] = -d[:2]
            w.writerow([repr((float(r["tracking_timestamp_us"]) - t0) / US_PER_S), *d])
            count += 1
    return count


def write_points(path: Path, mps: Path, t0: float):
    points = {}
    for r in read_rows(mps / "slam" / "semidense_points.csv"):
        std = float(r["inv_dist_std"])
        points[r["uid"]] = (float(r["px_world"]), float(r["py_world"]), float(r["pz_world"]), std * std)
    count = missing = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("# t_sec,x,y,z,inv_dist_var\n")
        w = csv.writer(f)
        for r in read_rows(mps / "slam" / "semidense_observations.csv"):
            point = points.get(r["uid"])
            if point is None:
                missing += 1
                continue
            w.writerow([repr((float(r["frame_tracking_timestamp_us"]) - t0) / US_PER_S), *point])
            count += 1
    return count, missing


def main():
    ap = argparse.ArgumentParser(description="Export Aria MPS outputs to points/trajectory/gaze text streams.")
    ap.add_argument("--mps-dir", required=True, help="MPS output directory (contains slam/ and eye_gaze/)")
    ap.add_argument("--out", required=True, help="Output directory for the three stream files")
    ap.add_argument("--device-cpf", default="1,0,0,0,0,0,0", help="device→CPF extrinsic qw,qx,qy,qz,tx,ty,tz")
    ap.add_argument("--keep-cpf-axes", action="store_true", help="Do not rotate CPF to x-right/y-down")
    args = ap.parse_args()

    mps, out = Path(args.mps_dir), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    flip = not args.keep_cpf_axes

    t_us, rotations, positions = load_trajectory(mps, parse_extrinsic(args.device_cpf), flip)
    if not len(t_us):
        raise SystemExit("closed-loop trajectory is empty")
    t0 = t_us[0]
    write_trajectory(out / "trajectory.csv", t0, t_us, rotations, positions)
    n_gaze = write_gaze(out / "gaze.csv", mps, t0, flip)
    n_points, missing = write_points(out / "points.csv", mps, t0)

    print(f"✅ {len(t_us)} poses, {n_gaze} gaze samples, {n_points} point observations → {out}")
    if missing:
        print(f"⚠️ {missing} observations referenced unknown point uids and were skipped")


if __name__ == "__main__":
    main()
