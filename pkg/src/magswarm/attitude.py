"""Modified Rodrigues parameter (MRP) attitude kinematics and swarm state containers.

Conventions
-----------
``mrp_to_dcm(sigma)`` returns the frame transformation C^{B/N}, i.e. it maps
inertial components of a vector into body components.  Angular rates are the
body rate of B relative to N, expressed in B.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag


def skew(v):
    """Cross-product matrix so that ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def shadow(sigma, threshold=1.0):
    """Switch to the shadow set when ``|sigma| > threshold``."""
    sigma = np.asarray(sigma, dtype=float)
    s2 = sigma @ sigma
    if s2 > threshold**2:
        return -sigma / s2
    return sigma


def mrp_to_dcm(sigma):
    sigma = np.asarray(sigma, dtype=float)
    s2 = sigma @ sigma
    S = skew(sigma)
    return np.eye(3) + (8.0 * S @ S - 4.0 * (1.0 - s2) * S) / (1.0 + s2) ** 2


def dcm_to_mrp(C):
    """Inverse of :func:`mrp_to_dcm`, returning the short-rotation set (|sigma| <= 1)."""
    q = dcm_to_quaternion(C)
    if q[0] < 0:
        q = -q
    return q[1:] / (1.0 + q[0])


def dcm_to_quaternion(C):
    """Scalar-first Euler parameters from a DCM (Shepperd's method)."""
    C = np.asarray(C, dtype=float)
    tr = np.trace(C)
    b2 = np.array([1 + tr, 1 + 2 * C[0, 0] - tr, 1 + 2 * C[1, 1] - tr, 1 + 2 * C[2, 2] - tr]) / 4
    i = int(np.argmax(b2))
    b = np.empty(4)
    b[i] = np.sqrt(b2[i])
    if i == 0:
        b[1] = (C[1, 2] - C[2, 1]) / (4 * b[0])
        b[2] = (C[2, 0] - C[0, 2]) / (4 * b[0])
        b[3] = (C[0, 1] - C[1, 0]) / (4 * b[0])
    elif i == 1:
        b[0] = (C[1, 2] - C[2, 1]) / (4 * b[1])
        b[2] = (C[0, 1] + C[1, 0]) / (4 * b[1])
        b[3] = (C[2, 0] + C[0, 2]) / (4 * b[1])
    elif i == 2:
        b[0] = (C[2, 0] - C[0, 2]) / (4 * b[2])
        b[1] = (C[0, 1] + C[1, 0]) / (4 * b[2])
        b[3] = (C[1, 2] + C[2, 1]) / (4 * b[2])
    else:
        b[0] = (C[0, 1] - C[1, 0]) / (4 * b[3])
        b[1] = (C[2, 0] + C[0, 2]) / (4 * b[3])
        b[2] = (C[1, 2] + C[2, 1]) / (4 * b[3])
    return b


def mrp_matrix(sigma):
    """Kinematic matrix Z(sigma) with sigma_dot = Z(sigma) @ omega."""
    sigma = np.asarray(sigma, dtype=float)
    s2 = sigma @ sigma
    return 0.25 * ((1.0 - s2) * np.eye(3) + 2.0 * skew(sigma) + 2.0 * np.outer(sigma, sigma))


def mrp_kinematics(sigma, omega):
    return mrp_matrix(sigma) @ np.asarray(omega, dtype=float)


def attitude_error(sigma, sigma_d):
    """MRP of the relative rotation C(sigma) @ C(sigma_d).T, canonical set."""
    s = np.asarray(sigma, dtype=float)
    r = np.asarray(sigma_d, dtype=float)
    s2, r2 = s @ s, r @ r
    den = 1.0 + s2 * r2 + 2.0 * (s @ r)
    if abs(den) < 1e-8:
        # near the 360 deg singularity of the subtraction formula
        return dcm_to_mrp(mrp_to_dcm(s) @ mrp_to_dcm(r).T)
    e = ((1.0 - r2) * s - (1.0 - s2) * r + 2.0 * np.cross(s, r)) / den
    return shadow(e)


@dataclass
class SatelliteState:
    position: np.ndarray
    velocity: np.ndarray
    attitude: np.ndarray
    angular_rate: np.ndarray
    wheel_momentum: np.ndarray | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.attitude = np.asarray(self.attitude, dtype=float).reshape(3)
        self.angular_rate = np.asarray(self.angular_rate, dtype=float).reshape(3)
        if self.wheel_momentum is not None:
            self.wheel_momentum = np.asarray(self.wheel_momentum, dtype=float).reshape(3)
        parts = [self.position, self.velocity, self.attitude, self.angular_rate]
        if self.wheel_momentum is not None:
            parts.append(self.wheel_momentum)
        if not np.all(np.isfinite(np.concatenate(parts))):
            raise ValueError("satellite state has non-finite entries")

    @property
    def dcm(self):
        """C^{B/N} of this satellite."""
        return mrp_to_dcm(self.attitude)


@dataclass
class SwarmState:
    """Ordered satellites; the first ``m`` carry reaction wheels."""

    satellites: list[SatelliteState] = field(default_factory=list)

    def __post_init__(self):
        if len(self.satellites) < 2:
            raise ValueError("a swarm needs at least two satellites")
        flags = [s.wheel_momentum is not None for s in self.satellites]
        m = sum(flags)
        if any(flags[m:]) or not all(flags[:m]):
            raise ValueError("wheel-equipped satellites must come first")

    @property
    def n(self):
        return len(self.satellites)

    @property
    def m(self):
        return sum(s.wheel_momentum is not None for s in self.satellites)

    @property
    def positions(self):
        return np.array([s.position for s in self.satellites])

    @property
    def attitudes(self):
        return np.array([s.attitude for s in self.satellites])

    def zeta(self):
        """Stacked [r_dot (3n); omega (3n); h (3m)] velocity vector."""
        parts = [s.velocity for s in self.satellites] + [s.angular_rate for s in self.satellites]
        parts += [s.wheel_momentum for s in self.satellites[: self.m]]
        return np.concatenate(parts)


@dataclass
class KinematicsStack:
    P: np.ndarray


def stack_kinematics(errors, n_wheels=0):
    """Map from the stacked velocity vector zeta to the error rate [r_dot; e_sigma_dot].

    ``errors`` holds one attitude error MRP per satellite.  The result has shape
    ``6n x (6n + 3 n_wheels)``; wheel columns are zero.
    """
    errors = [np.asarray(e, dtype=float) for e in errors]
    n = len(errors)
    if n < 1:
        raise ValueError("need at least one attitude error")
    P = np.zeros((6 * n, 6 * n + 3 * n_wheels))
    P[: 3 * n, : 3 * n] = np.eye(3 * n)
    P[3 * n :, 3 * n : 6 * n] = block_diag(*[mrp_matrix(e) for e in errors])
    return KinematicsStack(P)


def swarm_kinematics_stack(swarm: SwarmState, errors):
    if len(errors) != swarm.n:
        raise ValueError(f"expected {swarm.n} attitude errors, got {len(errors)}")
    return stack_kinematics(errors, swarm.m)
