"""Coil-to-coil magnetic interaction: contour-integral (exact) and point-dipole (far) models.

Frame conventions used throughout the package:

* dipoles are given in the body frame of the satellite carrying the coil;
* forces are expressed in the inertial frame;
* torques act about the receiving satellite's centre and are expressed in its body frame.

A geometry matrix maps ``kron(mu_source, mu_receiver)`` to the 6-vector
``[force; torque]`` after multiplication by ``MU0 / (4 pi)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .attitude import SatelliteState, SwarmState

MU0 = 4e-7 * np.pi
KM = MU0 / (4 * np.pi)  # 1e-7

# in-plane basis (u1, u2) per body axis, with u1 x u2 = axis
_PLANE = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


class QuadratureError(RuntimeError):
    pass


class GeometryError(ValueError):
    pass


def pinv(A, cutoff=1e-10):
    """SVD pseudoinverse dropping singular values below ``cutoff * s_max``."""
    A = np.asarray(A, dtype=float)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.T.shape)
    keep = s > cutoff * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def numerical_rank(A, cutoff=1e-10):
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > cutoff * s[0]))


@dataclass
class CoilSpec:
    """Magnetorquer of up to three orthogonal circular coils, one per body axis.

    ``axis_offsets[v]`` is the body-frame position of the axis-``v`` coil centre
    relative to the satellite centre.  ``resistance`` is per coil [ohm].
    """

    turns: int
    loop_radius: float
    mu_r: float = 1.0
    demag: float = 0.0
    axes: tuple = (0, 1, 2)
    axis_offsets: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    resistance: float = 2.0

    def __post_init__(self):
        self.axis_offsets = np.asarray(self.axis_offsets, dtype=float).reshape(3, 3)
        self.axes = tuple(int(a) for a in self.axes)
        if self.loop_radius <= 0 or self.turns <= 0:
            raise ValueError("coil radius and turns must be positive")
        if self.mu_r < 1 or not 0 <= self.demag <= 1:
            raise ValueError("need mu_r >= 1 and 0 <= demag <= 1")

    @property
    def area(self):
        return np.pi * self.loop_radius**2

    @property
    def core_gain(self):
        """Dipole amplification of a ferromagnetic core (1 for an air core)."""
        return 1.0 + (self.mu_r - 1.0) / (1.0 - self.demag + self.mu_r * self.demag)

    @property
    def dipole_per_amp(self):
        return self.turns * self.area * self.core_gain


def dipole_moment(coil: CoilSpec, currents):
    return coil.dipole_per_amp * np.asarray(currents, dtype=float)


# --------------------------------------------------------------------------
# contour quadrature


def _loop(center, dcm_nb, axis, radius, n):
    """Trapezoid nodes of a circular loop: positions, line elements, radius vectors."""
    phi = 2 * np.pi * np.arange(n) / n
    i1, i2 = _PLANE[axis]
    u1, u2 = dcm_nb[:, i1], dcm_nb[:, i2]
    rel = radius * (np.cos(phi)[:, None] * u1 + np.sin(phi)[:, None] * u2)
    dl = radius * (2 * np.pi / n) * (-np.sin(phi)[:, None] * u1 + np.cos(phi)[:, None] * u2)
    return center + rel, dl, rel


def _kernel(recv, src):
    """Discrete double contour integral for one receiver/source loop pair.

    Returns the 6-vector [force kernel; torque kernel about the receiver loop
    centre], both in the inertial frame.
    """
    xa, dla, ra = recv
    xb, dlb, _ = src
    r = xa[:, None, :] - xb[None, :, :]
    inv3 = np.sum(r * r, axis=-1) ** -1.5
    inner = np.einsum("abk,ab->ak", np.cross(r, dlb[None, :, :]), inv3)
    df = np.cross(inner, dla)
    return np.concatenate([df.sum(axis=0), np.cross(ra, df).sum(axis=0)])


def coil_geometry_vector(receiver_pose, source_pose, radii, nodes=64):
    """Geometry vector of a single pair of circular loops at fixed resolution.

    Each pose is ``(center, dcm_nb, axis)`` with ``dcm_nb`` = C^{N/B}.  The
    result is in the inertial frame, torque about the receiver loop centre.
    """
    if nodes < 16:
        raise ValueError("at least 16 quadrature nodes per loop are required")
    rc, rC, ra = receiver_pose
    sc, sC, sa = source_pose
    _check_separation(np.asarray(rc, float), np.asarray(sc, float), radii[0], radii[1])
    recv = _loop(np.asarray(rc, float), np.asarray(rC, float), ra, radii[0], nodes)
    src = _loop(np.asarray(sc, float), np.asarray(sC, float), sa, radii[1], nodes)
    return _kernel(recv, src)


def adaptive_geometry_vector(receiver_pose, source_pose, radii, nodes=64, tol=1e-6, max_nodes=512):
    """Doubling refinement of :func:`coil_geometry_vector` until the relative change is below ``tol``."""
    g = coil_geometry_vector(receiver_pose, source_pose, radii, nodes)
    while True:
        if 2 * nodes > max_nodes:
            raise QuadratureError(f"no convergence to {tol:g} within {max_nodes} nodes")
        nodes *= 2
        g2 = coil_geometry_vector(receiver_pose, source_pose, radii, nodes)
        if np.linalg.norm(g2 - g) <= tol * np.linalg.norm(g2):
            return g2
        g = g2


def _check_separation(c1, c2, r1, r2):
    d = np.linalg.norm(c1 - c2)
    if d < 1.05 * (r1 + r2):
        raise GeometryError(f"coil centres {d:.4g} m apart, below 1.05 (R1 + R2) = {1.05 * (r1 + r2):.4g} m")


# --------------------------------------------------------------------------
# geometry matrices


@dataclass
class GeometryMatrix:
    """6x9 map of kron(mu_source, mu_receiver) to [f (inertial); tau (receiver body)], before MU0/4pi."""

    G: np.ndarray
    nodes: int = 0


def _coil_centers(sat: SatelliteState, coil: CoilSpec):
    Cnb = sat.dcm.T
    return Cnb, [sat.position + Cnb @ coil.axis_offsets[v] for v in range(3)]


def _assemble(receiver, source, coils, pair_fn):
    """Fill G column by column; ``pair_fn`` returns an inertial [f; tau_about_coil] for unit dipoles."""
    rcoil, scoil = coils
    rC, rcent = _coil_centers(receiver, rcoil)
    sC, scent = _coil_centers(source, scoil)
    G = np.zeros((6, 9))
    for w in scoil.axes:
        for v in rcoil.axes:
            g = pair_fn((rcent[v], rC, v), (scent[w], sC, w))
            off = rC @ rcoil.axis_offsets[v]
            tau = g[3:] + np.cross(off, g[:3])
            G[:, 3 * w + v] = np.concatenate([g[:3], rC.T @ tau])
    return G


def geometry_matrix(receiver: SatelliteState, source: SatelliteState, coils, nodes=64, tol=1e-6, max_nodes=512,
                    adaptive=True):
    """Exact geometry matrix G_{j<-k} by contour quadrature.

    With ``adaptive`` the node count is doubled (for all nine axis pairs together)
    until the Frobenius change is below ``tol``.
    """
    rcoil, scoil = coils
    radii = (rcoil.loop_radius, scoil.loop_radius)
    scale = 1.0 / (rcoil.area * scoil.area)

    def at(n):
        return scale * _assemble(receiver, source, coils, lambda a, b: coil_geometry_vector(a, b, radii, n))

    G = at(nodes)
    if not adaptive:
        return GeometryMatrix(G, nodes)
    while True:
        if 2 * nodes > max_nodes:
            raise QuadratureError(f"geometry matrix did not converge to {tol:g} within {max_nodes} nodes")
        nodes *= 2
        G2 = at(nodes)
        if np.linalg.norm(G2 - G) <= tol * np.linalg.norm(G2):
            return GeometryMatrix(G2, nodes)
        G = G2


def exact_wrench(G, mu_source, mu_receiver):
    G = G.G if isinstance(G, GeometryMatrix) else np.asarray(G)
    return KM * G @ np.kron(mu_source, mu_receiver)


def dipole_field(mu, r):
    """Point-dipole flux density at relative position ``r`` (inertial), in tesla."""
    d = np.linalg.norm(r)
    rh = r / d
    return KM * (3 * (mu @ rh) * rh - mu) / d**3


def far_field_wrench(mu_receiver, mu_source, relative_position):
    """[grad(mu_j . B_k); mu_j x B_k] for point dipoles, all vectors inertial.

    ``relative_position`` points from the source dipole to the receiver dipole.
    """
    r = np.asarray(relative_position, dtype=float)
    d = np.linalg.norm(r)
    if d == 0:
        raise GeometryError("coincident dipoles")
    mj = np.asarray(mu_receiver, dtype=float)
    mk = np.asarray(mu_source, dtype=float)
    rh = r / d
    f = 3 * KM / d**4 * ((mk @ rh) * mj + (mj @ rh) * mk + (mk @ mj) * rh - 5 * (mk @ rh) * (mj @ rh) * rh)
    tau = np.cross(mj, dipole_field(mk, r))
    return np.concatenate([f, tau])


def body_dipole_wrench(positions, dcms, mus_body):
    """Stacked [f_1..f_n; tau_1..tau_n] from body-fixed point dipoles at the satellite centres.

    ``dcms`` are C^{B/N}; forces inertial, torques in each body frame.
    """
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    mus = np.array([C.T @ np.asarray(m, dtype=float) for C, m in zip(dcms, mus_body)])
    f = np.zeros((n, 3))
    tau = np.zeros((n, 3))
    for j in range(n):
        for k in range(n):
            if j != k:
                w = far_field_wrench(mus[j], mus[k], positions[j] - positions[k])
                f[j] += w[:3]
                tau[j] += dcms[j] @ w[3:]
    return np.concatenate([f.ravel(), tau.ravel()])


def far_geometry_matrix(receiver: SatelliteState, source: SatelliteState, coils):
    """Dipole-model counterpart Q_{j<-k} of :func:`geometry_matrix` (same frames and scaling)."""

    def pair(a, b):
        (rc, rC, v), (sc, sC, w) = a, b
        return far_field_wrench(rC[:, v], sC[:, w], rc - sc) / KM

    return _assemble(receiver, source, coils, pair)


# --------------------------------------------------------------------------
# stacks


def commutation_matrix(p=3, q=3):
    """K with K @ kron(a, b) == kron(b, a) for a in R^p, b in R^q."""
    K = np.zeros((p * q, p * q))
    for i in range(p):
        for j in range(q):
            K[j * p + i, i * q + j] = 1.0
    return K


def wrench_permutation(n_rows):
    """Reorder [f1, t1, f2, t2, ...] into [f1, f2, ..., t1, t2, ...]."""
    K = np.zeros((6 * n_rows, 6 * n_rows))
    for j in range(n_rows):
        K[3 * j : 3 * j + 3, 6 * j : 6 * j + 3] = np.eye(3)
        K[3 * n_rows + 3 * j : 3 * n_rows + 3 * j + 3, 6 * j + 3 : 6 * j + 6] = np.eye(3)
    return K


def pair_list(n):
    return list(combinations(range(n), 2))


def selection_stack(n):
    """R: rows pick kron(mu_b, mu_a) for each pair a < b out of kron(mu_N, mu_N)."""
    E = [np.kron(np.eye(n)[i], np.eye(3)) for i in range(n)]
    return np.vstack([np.kron(E[b], E[a]) for a, b in pair_list(n)])


@dataclass
class GeometryStack:
    """Stacked interaction map for a swarm.

    ``matrix`` has 6(n-1) rows (the first n-1 satellites, the last one's wrench
    follows from momentum balance); ``full`` has 6n rows.  Rows are ordered
    [f_1, ..., f_n, tau_1, ..., tau_n].  Multiply by ``MU0/8pi`` and apply to
    ``kron(s_N, s_N) + kron(c_N, c_N)`` for the averaged wrench.
    """

    matrix: np.ndarray
    full: np.ndarray
    blocks: dict
    model: str
    n: int
    K_perm: np.ndarray
    R_sel: np.ndarray
    K33: np.ndarray

    def reduced_from_full(self, u_full):
        """Drop satellite n from a full-ordered wrench vector."""
        n = self.n
        u_full = np.asarray(u_full)
        return np.concatenate([u_full[: 3 * (n - 1)], u_full[3 * n : 3 * n + 3 * (n - 1)]])


def pair_blocks(swarm: SwarmState, coils, model="exact", pairs=None, **quad):
    """Geometry matrices X_{j<-k} for every ordered pair (both directions)."""
    pairs = pair_list(swarm.n) if pairs is None else pairs
    blocks = {}
    for a, b in pairs:
        for j, k in ((a, b), (b, a)):
            sj, sk = swarm.satellites[j], swarm.satellites[k]
            if model == "exact":
                blocks[(j, k)] = geometry_matrix(sj, sk, (coils[j], coils[k]), **quad).G
            elif model == "far":
                blocks[(j, k)] = far_geometry_matrix(sj, sk, (coils[j], coils[k]))
            else:
                raise ValueError(f"unknown model {model!r}")
    return blocks


def stack_from_blocks(blocks, n, model="exact"):
    pairs = pair_list(n)
    K33 = commutation_matrix()
    R = selection_stack(n)
    raw = np.zeros((6 * n, 9 * len(pairs)))
    for p, (a, b) in enumerate(pairs):
        cols = slice(9 * p, 9 * p + 9)
        # pair block holds kron(mu_b, mu_a) with a < b
        if (a, b) in blocks:
            raw[6 * a : 6 * a + 6, cols] = blocks[(a, b)]
        if (b, a) in blocks:
            raw[6 * b : 6 * b + 6, cols] = blocks[(b, a)] @ K33
    full = wrench_permutation(n) @ raw @ R
    red_rows = np.r_[0 : 3 * (n - 1), 3 * n : 3 * n + 3 * (n - 1)]
    return GeometryStack(
        matrix=full[red_rows],
        full=full,
        blocks=blocks,
        model=model,
        n=n,
        K_perm=wrench_permutation(n - 1),
        R_sel=R,
        K33=K33,
    )


def stack_geometry(swarm: SwarmState, coils, model="exact", pairs=None, **quad):
    """Build G_zeta (``model='exact'``) or Q_zeta (``model='far'``).

    ``coils`` is one CoilSpec per satellite.  ``pairs`` restricts which
    satellite pairs interact (e.g. same-frequency pairs only).
    """
    if swarm.n < 2:
        raise ValueError("stacking needs n >= 2")
    blocks = pair_blocks(swarm, coils, model, pairs, **quad)
    return stack_from_blocks(blocks, swarm.n, model)


def dipole_products(s_N, c_N):
    s_N, c_N = np.ravel(s_N), np.ravel(c_N)
    return np.kron(s_N, s_N) + np.kron(c_N, c_N)


def exact_far_mapping(G_zeta, Q_zeta, P_zeta):
    """H with G P^T = H Q P^T (least squares if overdetermined)."""
    QP = Q_zeta @ P_zeta.T
    r = numerical_rank(QP)
    if r < QP.shape[0]:
        raise np.linalg.LinAlgError(f"Q_zeta P_zeta^T has rank {r} < {QP.shape[0]} rows")
    return G_zeta @ P_zeta.T @ pinv(QP)


def orthogonal_projector(Q_zeta):
    """Projector Q^+ Q onto the row space of Q."""
    return pinv(Q_zeta) @ Q_zeta
