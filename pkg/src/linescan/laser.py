"""Line-laser model.

The laser sits in its own frame with the beam along local -z and the fan
spreading along local y; the fan plane is therefore the local y-z plane and
its normal is the local x-axis. Emission directions are projected onto the
z = 1 plane (division by |z|), where the cross-section intensity is a unit
amplitude Gaussian in x, clipped to |y| <= gamma = tan(theta_c / 2).

The power correction factor rescales that mask so its integral over the
projected plane matches the 4*pi integrated intensity of a unit point source,
which is what makes the configured power physically meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, OutsideHemisphere
from .geom import PlaneParams, Pose

# Rendered radiant scale: image units per mW at 1 m for the peak.
RADIANT_SCALE_PER_MW = 1.0


def sigma_from_divergence(theta_l: float) -> float:
    """Gaussian spread on the z = 1 plane from the full 1/e^2 divergence angle.

    sigma = tan(theta_l / 2) / sqrt(-2 ln(1/e^2)); the denominator is exactly 2.
    """
    if not 0.0 < theta_l < np.pi:
        raise DomainError(f"divergence angle {theta_l} outside (0, pi)")
    return np.tan(theta_l / 2.0) / np.sqrt(-2.0 * np.log(np.exp(-2.0)))


def power_correction(sigma: float, theta_c: float) -> float:
    """Scale factor lambda = 4 pi / (2 tan(theta_c / 2) sigma sqrt(2 pi)).

    Dividing the unit sphere's integrated intensity (4 pi) by the mask's own
    integral (2 gamma sigma sqrt(2 pi)) so that scaling the Gaussian mask by
    the result reproduces a physically meaningful total power.
    """
    if sigma <= 0.0:
        raise DomainError("sigma must be positive")
    if not 0.0 < theta_c < np.pi:
        raise DomainError(f"cone angle {theta_c} outside (0, pi)")
    return 4.0 * np.pi / (2.0 * np.tan(theta_c / 2.0) * sigma * np.sqrt(2.0 * np.pi))


@dataclass(frozen=True)
class LaserModel:
    """Line laser: pose, color, power, divergence geometry.

    divergence_angle is the full fan-thickness angle at 1/e^2 intensity,
    cone_angle the full fan length angle. sigma is derived, not a free field.
    """

    pose_wl: Pose
    color: tuple = (0.0, 0.2, 1.0)
    power_mw: float = 20.0
    divergence_angle: float = np.deg2rad(0.3)
    cone_angle: float = np.deg2rad(45.0)

    def __post_init__(self):
        if not 0.0 < self.divergence_angle < self.cone_angle < np.pi:
            raise DomainError("need 0 < divergence_angle < cone_angle < pi")
        if self.power_mw <= 0.0:
            raise DomainError("power must be positive")
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))

    @property
    def sigma(self) -> float:
        return sigma_from_divergence(self.divergence_angle)

    @property
    def gamma(self) -> float:
        """Cone half-extent on the projected plane, tan(theta_c / 2)."""
        return np.tan(self.cone_angle / 2.0)

    @property
    def power_scale(self) -> float:
        """Mask scale including power: power_correction * power * radiant scale."""
        return (
            power_correction(self.sigma, self.cone_angle)
            * self.power_mw
            * RADIANT_SCALE_PER_MW
        )

    @property
    def origin(self) -> np.ndarray:
        return self.pose_wl.t

    def intensity_profile(self, x_p, y_p):
        """Scaled Gaussian profile on the projected plane (vectorized).

        Returns power_scale * exp(-x_p^2 / (2 sigma^2)) inside |y_p| <= gamma,
        zero outside the cone.
        """
        x_p = np.asarray(x_p, dtype=np.float64)
        y_p = np.asarray(y_p, dtype=np.float64)
        g = np.exp(-(x_p * x_p) / (2.0 * self.sigma**2))
        return np.where(np.abs(y_p) <= self.gamma, g * self.power_scale, 0.0)


def intensity_mask(model: LaserModel, dir_local) -> float:
    """Emission intensity for a direction in the laser's local frame.

    The direction is projected to the z = 1 plane by dividing by |z|; the
    returned value is power-corrected (peak equals model.power_scale).
    Raises OutsideHemisphere when the direction has z >= 0.
    """
    d = np.asarray(dir_local, dtype=np.float64)
    if d[2] >= 0.0:
        raise OutsideHemisphere("direction not inside the -z emission hemisphere")
    az = abs(d[2])
    x_p = d[0] / az
    y_p = d[1] / az
    return float(model.intensity_profile(x_p, y_p))


def laser_plane(model: LaserModel) -> PlaneParams:
    """Ground-truth laser plane: through the origin, normal = world-frame local x.

    Output is normalized (unit normal, d <= 0 sign convention).
    """
    n = model.pose_wl.R[:, 0]
    d = -float(n @ model.origin)
    return PlaneParams(n[0], n[1], n[2], d).normalized()


def standard_placement(offset_x: float = 0.2, tilt_deg: float = 13.0) -> Pose:
    """Laser pose offset along camera +x, beam tilted inwards toward the axis.

    The beam starts along world +z (laser frame rotated pi about y) and is
    tilted by -tilt about the world y-axis so it converges onto the optical
    axis. offset_x = 0.2 m, tilt = 13 deg reproduces the reference plane
    (0.9744, 0, 0.2250, -0.1949).
    """
    from .geom import rot_y

    R = rot_y(np.deg2rad(-tilt_deg)) @ rot_y(np.pi)
    return Pose(R, np.array([offset_x, 0.0, 0.0]))
