"""Command-line interface.

Exit codes: 0 ok, 2 config error, 3 I/O failure, 4 numerical failure.
"""

from __future__ import annotations

import sys

import click
import numpy as np

from ..camera import Distortion
from ..errors import ConfigError, LinescanError
from ..extract import ExtractParams
from ..geom import PlaneParams
from . import pipeline


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)
    except OSError as e:
        click.echo(f"i/o error: {e}", err=True)
        sys.exit(3)
    except LinescanError as e:
        click.echo(f"numerical failure: {type(e).__name__}: {e}", err=True)
        sys.exit(4)


def _parse_distort(text):
    if text is None:
        return None
    vals = [float(x) for x in text.split(",")]
    if len(vals) != 5:
        raise ConfigError("--distort wants k1,k2,k3,p1,p2")
    return Distortion(k1=vals[0], k2=vals[1], k3=vals[2], p1=vals[3], p2=vals[4])


@click.group()
def cli():
    """Virtual line-laser scanner: render, calibrate, extract, reconstruct."""


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--threads", type=int, default=1)
@click.option("--passes", default=None, help="Comma list: rgb,depth,normals,mask.")
@click.option("--distort", default=None,
              help="Post-render lens warp, coefficients k1,k2,k3,p1,p2.")
def render(config_path, out_dir, seed, threads, passes, distort):
    """Render all frames of a scan config (multi-pass + sidecar JSON)."""
    passes_t = tuple(passes.split(",")) if passes else None

    def body():
        dist = _parse_distort(distort)
        dirs = pipeline.cmd_render(
            config_path, out_dir, seed=seed, threads=threads,
            passes=passes_t, distort=dist,
        )
        click.echo(f"rendered {len(dirs)} frame(s) into {out_dir}")

    _run(body)


@cli.command("calibrate-camera")
@click.option("--frames", "frames_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--corners", type=click.Choice(["detect", "sidecar"]), default="detect",
              help="Image detector, or ground-truth projections from sidecars.")
@click.option("--noise", "noise_sigma", type=float, default=0.0,
              help="Pixel noise to inject on sidecar corners.")
@click.option("--threads", type=int, default=1)
def calibrate_camera(frames_dir, out_path, corners, noise_sigma, threads):
    """Planar intrinsic calibration from rendered checkerboard frames."""

    def body():
        cal, payload = pipeline.cmd_calibrate_camera(
            frames_dir, out_path, corners=corners,
            noise_sigma=noise_sigma, threads=threads,
        )
        click.echo(
            f"fx={cal.intrinsics.fx:.2f} fy={cal.intrinsics.fy:.2f} "
            f"cx={cal.intrinsics.cx:.2f} cy={cal.intrinsics.cy:.2f} "
            f"rms={cal.rms_px:.4f}px -> {out_path}"
        )

    _run(body)


@cli.command("calibrate-laser")
@click.option("--frames", "frames_dir", required=True, type=click.Path(exists=True))
@click.option("--calibration", "calibration_path", default=None,
              type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--color", default="blue", type=click.Choice(["red", "green", "blue"]))
@click.option("--threads", type=int, default=1)
def calibrate_laser(frames_dir, calibration_path, out_path, color, threads):
    """Laser-plane calibration from rendered board views with the stripe."""

    def body():
        fit, payload = pipeline.cmd_calibrate_laser(
            frames_dir, calibration_path, out_path,
            params=ExtractParams(laser_color=color), threads=threads,
        )
        msg = (
            f"phi=({payload['phi'][0]:.4f}, {payload['phi'][1]:.4f}, "
            f"{payload['phi'][2]:.4f}, {payload['phi'][3]:.4f}) "
            f"mean|d|={fit.mean_abs_distance * 1000:.3f}mm"
        )
        if "angle_error_mrad" in payload:
            msg += f" angle_err={payload['angle_error_mrad']:.3f}mrad"
        click.echo(msg + f" -> {out_path}")

    _run(body)


@cli.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--color", default="blue", type=click.Choice(["red", "green", "blue"]))
def extract(image_path, out_path, color):
    """Extract the laser-line profile from an RGB PFM image to CSV."""

    def body():
        prof = pipeline.cmd_extract(
            image_path, out_path, params=ExtractParams(laser_color=color)
        )
        click.echo(f"{prof.n_valid} valid rows -> {out_path}")

    _run(body)


@cli.command()
@click.option("--profile", "profile_path", required=True, type=click.Path(exists=True))
@click.option("--calibration", "calibration_path", required=True,
              type=click.Path(exists=True))
@click.option("--plane", "plane_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def reconstruct(profile_path, calibration_path, plane_path, out_path):
    """Triangulate a profile CSV against a calibrated laser plane -> PLY."""

    def body():
        cloud = pipeline.cmd_reconstruct(
            profile_path, calibration_path, plane_path, out_path
        )
        click.echo(f"{int(cloud.valid.sum())} points -> {out_path}")

    _run(body)


@cli.command()
@click.option("--frames", "frames_dir", required=True, type=click.Path(exists=True))
@click.option("--methods", default="rgb,mask,gt",
              help="Comma list of rgb,mask,gt depth sources to compare.")
@click.option("--out", "out_prefix", required=True, type=click.Path())
@click.option("--color", default="blue", type=click.Choice(["red", "green", "blue"]))
def evaluate(frames_dir, methods, out_prefix, color):
    """Compare triangulated depth against ground truth (JSON + CSV)."""

    def body():
        reports = pipeline.cmd_evaluate(
            frames_dir, methods=tuple(methods.split(",")), out_prefix=out_prefix,
            params=ExtractParams(laser_color=color),
        )
        for m, rep in reports.items():
            click.echo(
                f"{m}: n={rep.n} rms_z={rep.rms_z * 1000:.4f}mm "
                f"mean_z={rep.mean_z * 1000:+.4f}mm"
            )

    _run(body)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--threads", type=int, default=1)
@click.option("--color", default="blue", type=click.Choice(["red", "green", "blue"]))
def scan(config_path, out_path, threads, color):
    """Full sweep: render, extract, triangulate, assemble into one PLY."""

    def body():
        cloud = pipeline.cmd_scan(
            config_path, out_path, threads=threads,
            params=ExtractParams(laser_color=color),
        )
        click.echo(f"{int(cloud.valid.sum())} points -> {out_path}")

    _run(body)


if __name__ == "__main__":
    cli()
