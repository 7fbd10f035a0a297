"""Numpy MLPs for the coil-geometry and allocation maps, with Lipschitz, quantization and bit-flip certificates."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .allocation import DEFAULT_FREQUENCIES, DipoleWave, averaged_wrench, solve_opt_ac
from .attitude import SatelliteState, SwarmState, mrp_to_dcm
from .magnetics import (
    KM,
    CoilSpec,
    GeometryError,
    _assemble,
    adaptive_geometry_vector,
    far_field_wrench,
    pair_list,
    stack_from_blocks,
    stack_geometry,
)

FORMAT_VERSION = 1

ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a, 1.0),
    "identity": (lambda h: h, lambda a: np.ones_like(a), 1.0),
}


class TrainingError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


# --------------------------------------------------------------------------
# model


@dataclass
class MlpModel:
    """y = out_offset + out_scale * (W_{L+1} phi(... phi(W_1 z + b_1) ...) + b_{L+1}), z = (x - in_offset) / in_scale."""

    weights: list
    biases: list
    activation: str = "tanh"
    in_offset: np.ndarray = None
    in_scale: np.ndarray = None
    out_offset: np.ndarray = None
    out_scale: np.ndarray = None

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float).reshape(-1) for b in self.biases]
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.size:
                raise ValueError(f"layer {l}: {W.shape[0]} rows but {b.size} biases")
            if l and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input width {W.shape[1]} != {self.weights[l - 1].shape[0]}")
        d_in, d_out = self.weights[0].shape[1], self.weights[-1].shape[0]
        self.in_offset = np.zeros(d_in) if self.in_offset is None else np.asarray(self.in_offset, float)
        self.in_scale = np.ones(d_in) if self.in_scale is None else np.asarray(self.in_scale, float)
        self.out_offset = np.zeros(d_out) if self.out_offset is None else np.asarray(self.out_offset, float)
        self.out_scale = np.ones(d_out) if self.out_scale is None else np.asarray(self.out_scale, float)
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise ValueError("normalization scales must be positive")

    @property
    def n_in(self):
        return self.weights[0].shape[1]

    @property
    def n_out(self):
        return self.weights[-1].shape[0]

    @property
    def depth(self):
        """Number of hidden (activated) layers L."""
        return len(self.weights) - 1

    def copy(self, weights=None):
        return MlpModel(
            [W.copy() for W in (self.weights if weights is None else weights)],
            [b.copy() for b in self.biases],
            self.activation,
            self.in_offset.copy(),
            self.in_scale.copy(),
            self.out_offset.copy(),
            self.out_scale.copy(),
        )

    def __call__(self, x):
        return mlp_forward(self, x)


def init_mlp(sizes, rng, activation="tanh"):
    """Glorot-uniform weights and zero biases for layer widths ``sizes``."""
    Ws, bs = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (a + b))
        Ws.append(rng.uniform(-lim, lim, size=(b, a)))
        bs.append(np.zeros(b))
    return MlpModel(Ws, bs, activation)


def _hidden(model, z):
    phi = ACTIVATIONS[model.activation][0]
    acts = [z]
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        acts.append(phi(acts[-1] @ W.T + b))
    return acts


def mlp_forward(model: MlpModel, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.n_in:
        raise ValueError(f"input width {X.shape[1]} != model input {model.n_in}")
    z = (X - model.in_offset) / model.in_scale
    h = _hidden(model, z)[-1]
    y = model.out_offset + model.out_scale * (h @ model.weights[-1].T + model.biases[-1])
    return y[0] if single else y


def lipschitz_bound(model: MlpModel):
    """||phi||^L prod sigma(W^l), including the declared input/output scalings."""
    lip = ACTIVATIONS[model.activation][2] ** model.depth
    for W in model.weights:
        lip *= np.linalg.norm(W, 2)
    return float(lip * model.out_scale.max() / model.in_scale.min())


def layer_norms(model: MlpModel):
    return np.array([np.linalg.norm(W, 2) for W in model.weights])


def empirical_lipschitz(fn, X, rng, pairs=100_000, rel_step=1e-3, batch=20_000):
    """Largest sampled slope ||f(x1) - f(x2)|| / ||x1 - x2||.

    Half the pairs are random pairs from ``X``; the other half are short random
    steps from points of ``X`` (these probe the local gradient).
    """
    X = np.asarray(X, dtype=float)
    span = X.std(axis=0).max() if len(X) > 1 else 1.0
    best = 0.0
    done = 0
    while done < pairs:
        k = min(batch, pairs - done)
        i = rng.integers(len(X), size=k)
        x1 = X[i]
        h = k // 2
        x2 = np.empty_like(x1)
        x2[:h] = X[rng.integers(len(X), size=h)]
        v = rng.normal(size=(k - h, X.shape[1]))
        v *= (rel_step * span / np.linalg.norm(v, axis=1))[:, None]
        x2[h:] = x1[h:] + v
        dx = np.linalg.norm(x1 - x2, axis=1)
        ok = dx > 0
        dy = np.linalg.norm(np.atleast_2d(fn(x1)) - np.atleast_2d(fn(x2)), axis=1)
        if ok.any():
            best = max(best, float((dy[ok] / dx[ok]).max()))
        done += k
    return best


def covering_radius(train_X, probe_X):
    """Mesh norm sup_{x in probe} min_{x' in train} ||x - x'|| (probe samples the region)."""
    d, _ = cKDTree(np.asarray(train_X, float)).query(np.asarray(probe_X, float))
    return float(d.max())


def dataset_lipschitz(X, Y, k=8):
    """Largest slope between each stored sample and its k nearest neighbours.

    Finite differences of oracle values already in the dataset, so the true
    map's constant is estimated without new quadrature.  An estimate, not a bound.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    dist, idx = cKDTree(X).query(X, k + 1)
    dist, idx = dist[:, 1:], idx[:, 1:]
    dY = np.linalg.norm(Y[idx] - Y[:, None, :], axis=2)
    ok = dist > 0
    return float((dY[ok] / dist[ok]).max())


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    hidden: tuple = (128, 128, 128, 128)
    activation: str = "tanh"
    epochs: int = 200
    batch: int = 128
    lr: float = 2e-3
    lr_final: float = 2e-5
    huber_delta: float = 0.05
    holdout: float = 0.1
    seed: int = 0
    target_loss: float = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or not self.lr > 0:
            raise ValueError("epochs, batch and lr must be positive")
        if not 0 <= self.holdout < 1:
            raise ValueError("holdout fraction must be in [0, 1)")


def _huber(r, delta):
    a = np.abs(r)
    loss = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    grad = np.clip(r, -delta, delta)
    return loss, grad


def train_mlp(X, Y, config: TrainConfig = None):
    """Adam on the smoothed absolute error of standardised targets; returns (model, history)."""
    cfg = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) != len(Y) or len(X) == 0:
        raise ValueError("inputs and targets must have the same nonzero length")
    rng = np.random.default_rng(cfg.seed)
    model = init_mlp((X.shape[1], *cfg.hidden, Y.shape[1]), rng, cfg.activation)
    model.in_offset, model.in_scale = X.mean(axis=0), np.maximum(X.std(axis=0), 1e-12)
    model.out_offset, model.out_scale = Y.mean(axis=0), np.maximum(Y.std(axis=0), 1e-12)
    Z = (X - model.in_offset) / model.in_scale
    T = (Y - model.out_offset) / model.out_scale
    dphi = ACTIVATIONS[cfg.activation][1]

    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    history = []
    n = len(Z)
    nb = max(1, int(np.ceil(n / cfg.batch)))
    L = model.depth
    for epoch in range(cfg.epochs):
        # cosine decay from lr to lr_final
        lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + np.cos(np.pi * epoch / cfg.epochs))
        perm = rng.permutation(n)
        total = 0.0
        for k in range(nb):
            idx = perm[k * cfg.batch : (k + 1) * cfg.batch]
            acts = _hidden(model, Z[idx])
            out = acts[-1] @ model.weights[-1].T + model.biases[-1]
            loss, g = _huber(out - T[idx], cfg.huber_delta)
            total += loss.sum()
            d = g / (len(idx) * T.shape[1])
            gW, gb = [None] * (L + 1), [None] * (L + 1)
            for l in range(L, -1, -1):
                gW[l] = d.T @ acts[l]
                gb[l] = d.sum(axis=0)
                if l:
                    d = (d @ model.weights[l]) * dphi(acts[l])
            step += 1
            grads = gW + gb
            for i, (p, gr) in enumerate(zip(params, grads)):
                m1[i] = b1 * m1[i] + (1 - b1) * gr
                m2[i] = b2 * m2[i] + (1 - b2) * gr * gr
                mh = m1[i] / (1 - b1**step)
                vh = m2[i] / (1 - b2**step)
                p -= lr * mh / (np.sqrt(vh) + eps)
        history.append(total / (n * T.shape[1]))
        if not np.isfinite(history[-1]):
            raise TrainingError(f"loss diverged at epoch {epoch}", history)
    if cfg.target_loss is not None and history[-1] > cfg.target_loss:
        raise TrainingError(f"final loss {history[-1]:.3e} above target {cfg.target_loss:.3e}", history)
    return model, history


def split_holdout(n, fraction, rng):
    perm = rng.permutation(n)
    k = int(round(fraction * n))
    return perm[k:], perm[:k]


# --------------------------------------------------------------------------
# coil geometry model


def loop_frame(axis_vec):
    """Orthonormal columns [u1, u2, n] with the loop normal last (any in-plane pair)."""
    n = np.asarray(axis_vec, float) / np.linalg.norm(axis_vec)
    a = np.eye(3)[np.argmin(np.abs(n))]
    u1 = np.cross(a, n)
    u1 /= np.linalg.norm(u1)
    return np.column_stack([u1, np.cross(n, u1), n])


def exact_pair_vector(r_local, n_local, radius=1.0, nodes=64, tol=1e-7):
    """Quadrature geometry vector of two equal loops; receiver at the origin with normal +z.

    ``r_local`` is the source centre and ``n_local`` its normal, both in the receiver loop frame.
    """
    src = (np.asarray(r_local, float), loop_frame(n_local), 2)
    return adaptive_geometry_vector((np.zeros(3), np.eye(3), 2), src, (radius, radius), nodes=nodes, tol=tol)


def far_pair_vector(r_local, n_local, radius=1.0):
    """Point-dipole counterpart of :func:`exact_pair_vector`."""
    A = np.pi * radius**2
    return far_field_wrench(A * np.array([0.0, 0.0, 1.0]), A * np.asarray(n_local, float), -np.asarray(r_local, float)) / KM


def encode_geometry(x, g, gamma=1.0):
    """Physical pair vectors -> network targets: undo diag(I, gamma I) and the radial decay."""
    x = np.atleast_2d(x)
    g = np.atleast_2d(g)
    rho = np.linalg.norm(x[:, :3], axis=1)[:, None]
    return np.hstack([g[:, :3] * rho**4, g[:, 3:] / gamma * rho**3])


def decode_geometry(x, y, gamma=1.0):
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    rho = np.linalg.norm(x[:, :3], axis=1)[:, None]
    return np.hstack([y[:, :3] / rho**4, gamma * y[:, 3:] / rho**3])


@dataclass
class GeometryDataset:
    """Features x = [r / gamma (3), source normal (3)] in the receiver loop frame and pair vectors g (gamma = 1)."""

    X: np.ndarray
    G: np.ndarray
    annulus: tuple


def sample_loop_pairs(n, rng, annulus=(2.4, 16.0)):
    """Source centres log-uniform in distance over the annulus (in loop radii), uniform direction and normal."""
    lo, hi = annulus
    d = np.exp(rng.uniform(np.log(lo), np.log(hi), size=n))
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    nv = rng.normal(size=(n, 3))
    nv /= np.linalg.norm(nv, axis=1)[:, None]
    return np.hstack([d[:, None] * u, nv])


def geometry_dataset(n, seed=0, annulus=(2.4, 16.0), tol=1e-7):
    rng = np.random.default_rng(seed)
    X = sample_loop_pairs(n, rng, annulus)
    G = np.array([exact_pair_vector(x[:3], x[3:], 1.0, tol=tol) for x in X])
    return GeometryDataset(X, G, tuple(annulus))


def relative_errors(pred, true):
    return np.linalg.norm(pred - true, axis=1) / np.linalg.norm(true, axis=1)


@dataclass
class GeometrySurrogate:
    model: MlpModel
    annulus: tuple = (2.4, 16.0)
    report: dict = field(default_factory=dict)

    def pair_vector(self, r_local, n_local, gamma=1.0):
        """g = net(r / gamma, n) diag(I, gamma I) with the radial decay restored."""
        r = np.atleast_2d(np.asarray(r_local, float))
        nv = np.atleast_2d(np.asarray(n_local, float))
        x = np.hstack([r / gamma, nv])
        g = decode_geometry(x, self.model(x), gamma)
        return g[0] if np.ndim(r_local) == 1 else g

    def in_domain(self, r_local, gamma=1.0):
        d = np.linalg.norm(r_local) / gamma
        return self.annulus[0] <= d <= self.annulus[1]

    def loop_pair(self, receiver_pose, source_pose, radius):
        """Same contract as the quadrature pair function: inertial [f; tau about the receiver loop]."""
        (rc, rC, v), (sc, sC, w) = receiver_pose, source_pose
        F = loop_frame(rC[:, v])
        # loops are axisymmetric, so any in-plane basis of the receiver coil will do
        g = self.pair_vector(F.T @ (np.asarray(sc) - np.asarray(rc)), F.T @ sC[:, w], radius)
        return np.concatenate([F @ g[:3], F @ g[3:]])

    def geometry_matrix(self, receiver: SatelliteState, source: SatelliteState, coils):
        rcoil, scoil = coils
        if not np.isclose(rcoil.loop_radius, scoil.loop_radius):
            raise GeometryError("the geometry surrogate covers equal loop radii only")
        R = rcoil.loop_radius
        scale = 1.0 / (rcoil.area * scoil.area)
        return scale * _assemble(receiver, source, coils, lambda a, b: self.loop_pair(a, b, R))

    def blocks(self, swarm: SwarmState, coils, pairs=None):
        out = {}
        for a, b in pair_list(swarm.n) if pairs is None else pairs:
            for j, k in ((a, b), (b, a)):
                out[(j, k)] = self.geometry_matrix(swarm.satellites[j], swarm.satellites[k], (coils[j], coils[k]))
        return out

    def stack(self, swarm: SwarmState, coils, pairs=None):
        return stack_from_blocks(self.blocks(swarm, coils, pairs), swarm.n, model="surrogate")


def train_geometry_surrogate(dataset: GeometryDataset, config: TrainConfig = None):
    """Fit the normalized pair-vector map and report held-out relative errors (median, 95th percentile)."""
    cfg = config or TrainConfig()
    rng = np.random.default_rng(cfg.seed + 1)
    train, hold = split_holdout(len(dataset.X), cfg.holdout, rng)
    Y = encode_geometry(dataset.X, dataset.G)
    model, history = train_mlp(dataset.X[train], Y[train], cfg)
    sur = GeometrySurrogate(model, dataset.annulus)
    rep = dict(history=history, train_idx=train, holdout_idx=hold)
    if len(hold):
        err = relative_errors(sur.pair_vector(dataset.X[hold, :3], dataset.X[hold, 3:]), dataset.G[hold])
        rep.update(holdout_median=float(np.median(err)), holdout_p95=float(np.percentile(err, 95)))
    sur.report = rep
    return sur


# --------------------------------------------------------------------------
# allocation model


def allocation_frame(r, command):
    """Rotation R (rows e1, e2, e3) with e1 along ``r`` and the force, else torque, in the e1-e2 half plane."""
    r = np.asarray(r, float)
    e1 = r / np.linalg.norm(r)
    command = np.asarray(command, float)
    for v in (command[:3], command[3:6], np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0])):
        p = v - (v @ e1) * e1
        if np.linalg.norm(p) > 1e-9 * np.linalg.norm(v):
            break
    e2 = p / np.linalg.norm(p)
    return np.vstack([e1, e2, np.cross(e1, e2)])


def allocation_scale(u_norm, d):
    """Dipole scale sqrt(|u| d^4 / KM) that makes the normalised coefficients O(1)."""
    return np.sqrt(np.asarray(u_norm) * np.asarray(d) ** 4 / KM)


def normalized_command(command, d):
    f, tau = np.asarray(command[:3], float), np.asarray(command[3:6], float)
    v = np.concatenate([f, tau / d])
    return v, np.linalg.norm(v)


def allocation_features(r, command):
    """Unit [f; tau / d] in the canonical frame, its norm, the frame and the distance."""
    d = np.linalg.norm(r)
    R = allocation_frame(r, command)
    v, nv = normalized_command(command, d)
    vc = np.concatenate([R @ v[:3], R @ v[3:]])
    return (vc / nv if nv > 0 else vc), nv, R, d


_IU = np.triu_indices(6)


def gram_vector(s, c):
    """Upper triangle of [s c][s c]^T; invariant under the O(2) mixing of sine and cosine parts."""
    A = np.column_stack([np.ravel(s), np.ravel(c)])
    return (A @ A.T)[_IU]


def coefficients_from_gram(g):
    """Rank-2 factor (s, c) of the symmetric matrix with upper triangle ``g`` (negative eigenvalues clipped)."""
    M = np.zeros((6, 6))
    M[_IU] = g
    M = M + M.T - np.diag(np.diag(M))
    w, V = np.linalg.eigh(M)
    A = V[:, ::-1][:, :2] * np.sqrt(np.clip(w[::-1][:2], 0.0, None))
    return A[:, 0], A[:, 1]


@dataclass
class AllocationDataset:
    """Solver allocations for a receiver at the origin (identity attitude) and a neighbour at ``r``.

    ``X`` holds the canonical unit commands and ``Y`` the Gram vectors of the
    inertial, frame-rotated, scale-normalised dipole coefficients.  ``S``/``C``
    keep the raw body-frame solutions.
    """

    X: np.ndarray
    Y: np.ndarray
    S: np.ndarray
    C: np.ndarray
    positions: np.ndarray
    sigmas: np.ndarray
    commands: np.ndarray
    coil: CoilSpec
    model: str


def _pair_swarm(r, sigma):
    return SwarmState([
        SatelliteState(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3)),
        SatelliteState(r, np.zeros(3), sigma, np.zeros(3)),
    ])


def allocation_target(r, sigma, command, s, c):
    """Feature and Gram target for one solved problem with body-frame coefficients ``s``, ``c`` of shape (2, 3)."""
    x, nv, R, d = allocation_features(r, command)
    C1 = mrp_to_dcm(sigma)
    s = np.vstack([s[0], C1.T @ s[1]]) @ R.T
    c = np.vstack([c[0], C1.T @ c[1]]) @ R.T
    k = allocation_scale(nv, d)
    return x, (gram_vector(s / k, c / k) if nv > 0 else np.zeros(21))


def sample_allocation_problem(rng, d_range, max_tilt=0.3):
    d = rng.uniform(*d_range)
    u = rng.normal(size=3)
    r = d * u / np.linalg.norm(u)
    sigma = rng.uniform(-1, 1, size=3) * np.tan(max_tilt / 4)
    cmd = rng.normal(size=6)
    cmd[3:] *= d
    cmd *= 1e-3 * np.exp(rng.uniform(np.log(0.1), np.log(10.0)))
    return r, sigma, cmd


def allocation_dataset(n, coil: CoilSpec, d_range, seed=0, starts=4, max_tilt=0.3):
    """Power-optimal far-model allocations for random poses and commands.

    The point-dipole wrench depends only on inertial dipoles, so the features
    drop the attitudes and rotate into :func:`allocation_frame`; the scaling
    by d^4 leaves no distance dependence either.
    """
    if np.any(coil.axis_offsets):
        raise ValueError("the allocation reduction assumes co-located coil axes")
    rng = np.random.default_rng(seed)
    rows = {k: [] for k in ("X", "Y", "S", "C", "positions", "sigmas", "commands")}
    for _ in range(n):
        r, sigma, cmd = sample_allocation_problem(rng, d_range, max_tilt)
        stack = stack_geometry(_pair_swarm(r, sigma), [coil, coil], "far")
        res = solve_opt_ac(np.vstack([cmd, np.zeros(6)]), stack, [1.0, 1.0], starts=starts,
                           seed=int(rng.integers(2**31)), with_dual=False)
        s = np.array([w.s for w in res.waves])
        c = np.array([w.c for w in res.waves])
        x, y = allocation_target(r, sigma, cmd, s, c)
        for key, val in zip(rows, (x, y, s.ravel(), c.ravel(), r, sigma, cmd)):
            rows[key].append(val)
    return AllocationDataset(**{k: np.array(v) for k, v in rows.items()}, coil=coil, model="far")


@dataclass
class AllocationSurrogate:
    model: MlpModel
    coil: CoilSpec
    report: dict = field(default_factory=dict)

    def coefficients(self, r, sigma, command):
        """Predicted body-frame (s, c), each (2, 3), for a receiver at the origin and its neighbour at ``r``."""
        r = np.asarray(r, float)
        x, nv, R, d = allocation_features(r, command)
        if nv == 0:
            return np.zeros((2, 3)), np.zeros((2, 3))
        s, c = coefficients_from_gram(self.model(x))
        k = allocation_scale(nv, d)
        s = s.reshape(2, 3) @ R * k
        c = c.reshape(2, 3) @ R * k
        C1 = mrp_to_dcm(sigma)
        return np.vstack([s[0], C1 @ s[1]]), np.vstack([c[0], C1 @ c[1]])

    def waves(self, r, sigma, command, omega=DEFAULT_FREQUENCIES[0]):
        s, c = self.coefficients(r, sigma, command)
        return [DipoleWave(s[j], c[j], omega) for j in range(2)]


def train_allocation_surrogate(dataset: AllocationDataset, config: TrainConfig = None):
    cfg = config or TrainConfig()
    rng = np.random.default_rng(cfg.seed + 1)
    train, hold = split_holdout(len(dataset.X), cfg.holdout, rng)
    model, history = train_mlp(dataset.X[train], dataset.Y[train], cfg)
    sur = AllocationSurrogate(model, dataset.coil)
    sur.report = dict(history=history, train_idx=train, holdout_idx=hold)
    if len(hold):
        errs = np.array([achieved_command_error(sur, dataset.positions[i], dataset.sigmas[i], dataset.commands[i])[0]
                         for i in hold])
        sur.report.update(holdout_median=float(np.median(errs)), holdout_p95=float(np.percentile(errs, 95)))
    return sur


def achieved_command_error(sur: AllocationSurrogate, r, sigma, command, model="far"):
    """Relative error of the averaged wrench from predicted coefficients, in [f; tau / d] units."""
    stack = stack_geometry(_pair_swarm(r, sigma), [sur.coil, sur.coil], model)
    achieved = averaged_wrench(sur.waves(r, sigma, command), stack)[0]
    d = np.linalg.norm(r)
    a, _ = normalized_command(achieved, d)
    u, nu = normalized_command(command, d)
    return float(np.linalg.norm(a - u) / nu), achieved


# --------------------------------------------------------------------------
# residual quantization and bit flips


@dataclass
class QuantizedModel:
    """Per layer, P residual levels of sign-magnitude codes: value = (-1)^sign * scale * (mag + 1/2)."""

    base: MlpModel
    P: int
    n_bit: int
    protect: int
    signs: list
    mags: list
    scales: list

    def level_values(self, layer, level):
        return np.where(self.signs[layer][level], -1.0, 1.0) * self.scales[layer][level] * (self.mags[layer][level] + 0.5)

    def layer_weight(self, layer):
        return sum(self.level_values(layer, i) for i in range(self.P))

    def dequantize(self):
        return self.base.copy([self.layer_weight(l) for l in range(len(self.base.weights))])

    def copy(self):
        return QuantizedModel(self.base, self.P, self.n_bit, self.protect,
                              [[s.copy() for s in L] for L in self.signs],
                              [[m.copy() for m in L] for L in self.mags],
                              [list(L) for L in self.scales])


def _quantize_level(r, n_bit):
    top = 2 ** (n_bit - 1)
    amax = np.abs(r).max()
    scale = amax / top
    if scale == 0:
        return np.zeros(r.shape, bool), np.zeros(r.shape, np.int64), 0.0
    mag = np.minimum(np.floor(np.abs(r) / scale), top - 1).astype(np.int64)
    return r < 0, mag, float(scale)


def residual_quantize(model: MlpModel, P, n_bit, protect=1):
    """P-level residual quantization; each level leaves at most max|residual| / 2^n_bit behind."""
    if P < 1 or n_bit < 2:
        raise ValueError("need P >= 1 and n_bit >= 2")
    if not 0 <= protect <= P:
        raise ValueError("protection order must be between 0 and P")
    signs, mags, scales = [], [], []
    for W in model.weights:
        r = W.copy()
        sL, mL, cL = [], [], []
        for _ in range(P):
            s, m, sc = _quantize_level(r, n_bit)
            sL.append(s)
            mL.append(m)
            cL.append(sc)
            r = r - np.where(s, -1.0, 1.0) * sc * (m + 0.5) if sc else r
        signs.append(sL)
        mags.append(mL)
        scales.append(cL)
    return QuantizedModel(model, P, n_bit, protect, signs, mags, scales)


def quantization_error_bound(W, P, n_bit):
    return np.abs(W).max() / (2 * 2 ** (n_bit - 1)) ** P


def propagated_output_bound(model: MlpModel, perturbed: MlpModel, X):
    """Per-sample bound on ||model(x) - perturbed(x)|| for weight-only perturbations.

    Uses e_l <= ||dW_l h_{l-1}|| + sigma(W~_l) ||phi||_Lip e_{l-1} along the
    unperturbed activations h.
    """
    lip = ACTIVATIONS[model.activation][2]
    Z = (np.atleast_2d(np.asarray(X, float)) - model.in_offset) / model.in_scale
    acts = _hidden(model, Z)
    e = np.zeros(len(Z))
    for l, (W, Wt) in enumerate(zip(model.weights, perturbed.weights)):
        step = np.linalg.norm(acts[l] @ (Wt - W).T, axis=1)
        e = step + np.linalg.norm(Wt, 2) * e
        if l < model.depth:
            e = lip * e
    return e * model.out_scale.max()


def inject_flips(qmodel: QuantizedModel, flips):
    """Flip sign bits at (layer, level, flat_index) triples; protected levels are refused."""
    q = qmodel.copy()
    for layer, level, idx in flips:
        if level < qmodel.protect:
            raise ValueError(f"level {level + 1} is protected (order {qmodel.protect})")
        if level >= qmodel.P:
            raise ValueError(f"level {level + 1} does not exist (P={qmodel.P})")
        s = q.signs[layer][level].reshape(-1)
        s[idx] = ~s[idx]
    return q


def flip_bound(W0s, n_bf, p, n_bit):
    """Degradation bound prod(1 + n_bf max|w0| / (2^(p n_bit - 1) sigma(W0)))."""
    out = 1.0
    for W in W0s:
        out *= 1 + n_bf * np.abs(W).max() / (2.0 ** (p * n_bit - 1) * np.linalg.norm(W, 2))
    return float(out)


@dataclass
class LipschitzReport:
    layer_norms: np.ndarray
    product_bound: float
    base_bound: float
    empirical: float
    gamma_measured: float
    gamma_bound: float
    n_bf: int
    rho: float = np.nan
    L_true: float = np.nan
    L_learned: float = np.nan


def bitflip_degradation(qmodel: QuantizedModel, n_bf, seed=0, probe=None, pairs=0):
    """Flip n_bf sign bits of level p+1 in every layer and compare the Lipschitz growth with its bound.

    ``gamma_measured`` is the post-flip spectral-norm product over the flip-free
    one; ``empirical`` is the sampled slope of the flipped model on ``probe`` points.
    """
    p = qmodel.protect
    if p >= qmodel.P:
        raise ValueError("every level is protected; flips fall outside the model")
    rng = np.random.default_rng(seed)
    flips = []
    for l, W in enumerate(qmodel.base.weights):
        if n_bf > W.size:
            raise ValueError(f"n_bf={n_bf} exceeds the {W.size} weights of layer {l}")
        flips += [(l, p, int(i)) for i in rng.choice(W.size, size=n_bf, replace=False)]
    m0 = qmodel.dequantize()
    mT = inject_flips(qmodel, flips).dequantize()
    base = lipschitz_bound(m0)
    bound_T = lipschitz_bound(mT)
    emp = empirical_lipschitz(mT, probe, rng, pairs) if probe is not None and pairs else np.nan
    return LipschitzReport(
        layer_norms=layer_norms(mT),
        product_bound=bound_T,
        base_bound=base,
        empirical=emp,
        gamma_measured=bound_T / base,
        gamma_bound=flip_bound(m0.weights, n_bf, p, qmodel.n_bit),
        n_bf=n_bf,
    )


def learned_steady_error_bound(report: LipschitzReport, gains, ripple_sup, mass, train_residual=0.0):
    """(ripple + residual + (L_G + (1 + gamma_F) L_g) rho) / (alpha sqrt(m k_p / k_d)) with alpha = k_d / m.

    ``train_residual`` is the largest model error on the training points nearest
    the operating region; 0 recovers the flip/learning-free expression.
    """
    k_p, k_d = gains
    if not (k_p > 0 and k_d > 0 and mass > 0):
        raise ValueError("gains and mass must be positive")
    alpha = k_d / mass
    gamma = report.gamma_bound
    learn = 0.0 if report.rho == 0 else (report.L_true + (1 + gamma) * report.L_learned) * report.rho
    return float((ripple_sup + train_residual + learn) / (alpha * np.sqrt(mass * k_p / k_d)))


# --------------------------------------------------------------------------
# persistence


def _model_arrays(model: MlpModel, prefix=""):
    arrs = {f"{prefix}W{l}": W for l, W in enumerate(model.weights)}
    arrs.update({f"{prefix}b{l}": b for l, b in enumerate(model.biases)})
    for key in ("in_offset", "in_scale", "out_offset", "out_scale"):
        arrs[prefix + key] = getattr(model, key)
    return arrs


def _model_from(arrs, header, prefix=""):
    L = header["layers"]
    return MlpModel([arrs[f"{prefix}W{l}"] for l in range(L)], [arrs[f"{prefix}b{l}"] for l in range(L)],
                    header["activation"], *(arrs[prefix + k] for k in ("in_offset", "in_scale", "out_offset", "out_scale")))


def save_model(path, obj):
    """Write an MlpModel, surrogate or QuantizedModel to a versioned ``.npz`` container."""
    if isinstance(obj, GeometrySurrogate):
        kind, model, extra = "geometry", obj.model, {"annulus": list(obj.annulus)}
    elif isinstance(obj, AllocationSurrogate):
        kind, model, extra = "allocation", obj.model, {"coil": [obj.coil.turns, obj.coil.loop_radius]}
    elif isinstance(obj, QuantizedModel):
        kind, model, extra = "quantized", obj.base, {"P": obj.P, "n_bit": obj.n_bit, "protect": obj.protect,
                                                    "scales": obj.scales}
    elif isinstance(obj, MlpModel):
        kind, model, extra = "mlp", obj, {}
    else:
        raise TypeError(f"cannot save {type(obj).__name__}")
    header = dict(version=FORMAT_VERSION, kind=kind, layers=len(model.weights), activation=model.activation,
                  dims=[model.n_in] + [W.shape[0] for W in model.weights], **extra)
    arrs = _model_arrays(model)
    if kind == "quantized":
        for l in range(len(model.weights)):
            for i in range(obj.P):
                arrs[f"sign{l}_{i}"] = obj.signs[l][i]
                arrs[f"mag{l}_{i}"] = obj.mags[l][i]
    np.savez(path, header=np.array(json.dumps(header)), **arrs)


def load_model(path):
    with np.load(path, allow_pickle=False) as f:
        header = json.loads(str(f["header"]))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {header.get('version')}")
        arrs = {k: f[k] for k in f.files if k != "header"}
    model = _model_from(arrs, header)
    if header["kind"] == "geometry":
        return GeometrySurrogate(model, tuple(header["annulus"]))
    if header["kind"] == "allocation":
        return AllocationSurrogate(model, CoilSpec(*header["coil"]))
    if header["kind"] == "quantized":
        L, P = header["layers"], header["P"]
        return QuantizedModel(model, P, header["n_bit"], header["protect"],
                              [[arrs[f"sign{l}_{i}"] for i in range(P)] for l in range(L)],
                              [[arrs[f"mag{l}_{i}"] for i in range(P)] for l in range(L)],
                              header["scales"])
    return model
