"""Surrogate full-order model: a planar torsional spring-damper chain.

The simulated robot is a chain of `n_links` rigid links pinned at the origin
(the anterior tip), free to rotate, with a torsional spring and damper at
every joint. Three actuated body spans receive a net bending torque
proportional to the even entries of a 6-component pressure-like input (the
odd entries are the antagonists and carry the opposite pressure, so only the
even ones enter the torque law). Head and tail joints are passive.

Joint dynamics are linear and decoupled; all nonlinearity enters through the
trigonometric kinematics that map joint angles to node positions, which is
what the exported snapshots and outputs are built from. The exported
full-order state is the node-coordinate vector (dimension 2*(n_links+1)),
not the internal (theta, omega) pair.
"""

from dataclasses import dataclass, field

import numpy as np

# Fractions of the chain taken by head, body1, body2, body3, tail.
SEGMENT_FRACTIONS = (0.15, 0.22, 0.22, 0.22, 0.19)

N_INPUTS = 6


def default_spans(n_links):
    """Partition [0, n_links) into the five segment spans."""
    edges = np.round(np.cumsum((0.0,) + SEGMENT_FRACTIONS) * n_links).astype(int)
    edges[-1] = n_links
    return tuple((int(edges[i]), int(edges[i + 1])) for i in range(5))


@dataclass
class FomConfig:
    """Physical and numerical constants of the surrogate chain.

    `length` is the total body length in meters; each link has length
    length / n_links. The actuation gain is calibrated so that u = 1 yields
    tail-beat amplitudes of a few centimeters at 0.5 to 1.5 Hz; all constants
    here are surrogate choices, exposed for override.
    """

    n_links: int = 400
    length: float = 1.117
    joint_stiffness: float = 2.0
    joint_damping: float = 0.15
    node_mass: float = 0.01
    actuation_gain: float = 2.5e-3
    segment_spans: tuple = None
    substeps: int = 10
    dt: float = 0.01

    def __post_init__(self):
        if self.segment_spans is None:
            self.segment_spans = default_spans(self.n_links)
        if self.n_links < 5:
            raise ValueError("need at least 5 links for 5 segments")
        for val, name in [
            (self.length, "length"),
            (self.joint_stiffness, "joint_stiffness"),
            (self.joint_damping, "joint_damping"),
            (self.node_mass, "node_mass"),
            (self.actuation_gain, "actuation_gain"),
            (self.dt, "dt"),
        ]:
            if not val > 0:
                raise ValueError(f"{name} must be positive")
        spans = list(self.segment_spans)
        if len(spans) != 5:
            raise ValueError("segment_spans must have 5 entries")
        cursor = 0
        for lo, hi in spans:
            if lo != cursor or hi <= lo:
                raise ValueError("segment_spans must partition [0, n_links)")
            cursor = hi
        if cursor != self.n_links:
            raise ValueError("segment_spans must partition [0, n_links)")
        # Symplectic-Euler stability bound for the undamped joint oscillator.
        h = self.dt / self.substeps
        h_max = 2.0 * np.sqrt(self.node_mass / self.joint_stiffness)
        if h > h_max:
            raise ValueError(
                f"substep {h:.3e} s violates stability bound {h_max:.3e} s; "
                "raise substeps or soften the joints"
            )

    @property
    def link_length(self):
        return self.length / self.n_links

    @property
    def n_full(self):
        """Dimension of the exported node-coordinate state."""
        return 2 * (self.n_links + 1)

    def body_spans(self):
        return self.segment_spans[1:4]


@dataclass
class FomState:
    theta: np.ndarray
    omega: np.ndarray
    t: float = 0.0


def neutral_state(cfg):
    return FomState(np.zeros(cfg.n_links), np.zeros(cfg.n_links), 0.0)


def _net_torque_input(cfg, u):
    """Per-joint actuation torque pattern for input u (even entries drive)."""
    tau = np.zeros(cfg.n_links)
    for i, (lo, hi) in enumerate(cfg.body_spans()):
        tau[lo:hi] = cfg.actuation_gain * u[2 * i]
    return tau


def step(cfg, s, u):
    """Advance one sampling interval of cfg.dt seconds.

    Runs cfg.substeps semi-implicit Euler substeps: the velocity update uses
    the torque -k theta - c omega + g u_net evaluated at the current angles,
    then the angle update uses the new velocity. The input is held constant
    over the whole interval.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (N_INPUTS,):
        raise ValueError(f"input must have {N_INPUTS} entries")
    if not np.all(np.isfinite(u)):
        raise ValueError("input contains non-finite entries")
    k = cfg.joint_stiffness
    c = cfg.joint_damping
    m = cfg.node_mass
    h = cfg.dt / cfg.substeps
    tau_u = _net_torque_input(cfg, u)
    theta = s.theta.copy()
    omega = s.omega.copy()
    for _ in range(cfg.substeps):
        omega += (h / m) * (-k * theta - c * omega + tau_u)
        theta += h * omega
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(omega))):
        raise RuntimeError("simulation diverged")
    return FomState(theta, omega, s.t + cfg.dt)


def energy(cfg, s):
    """Spring plus kinetic energy surrogate used by the dissipation tests."""
    return 0.5 * cfg.joint_stiffness * float(s.theta @ s.theta) + 0.5 * cfg.node_mass * float(s.omega @ s.omega)


def node_positions(cfg, s):
    """(n_links+1, 2) node coordinates from cumulative joint rotations."""
    heading = np.cumsum(s.theta)
    ell = cfg.link_length
    x = np.concatenate(([0.0], np.cumsum(ell * np.cos(heading))))
    z = np.concatenate(([0.0], np.cumsum(ell * np.sin(heading))))
    return np.column_stack([x, z])


def full_state(cfg, s):
    """Exported snapshot vector: all node x coordinates, then all node z."""
    nodes = node_positions(cfg, s)
    return np.concatenate([nodes[:, 0], nodes[:, 1]])


N_OUTPUT_POINTS = 20


def output(cfg, s):
    """Centerline observation: 20 points equally spaced in arc length.

    Points sit at arc positions j * L / 19 along the chain, interpolated
    linearly within links (the chain's arc length is exactly the link index
    times the link length). Returned interleaved as (x0, z0, ..., x19, z19).
    """
    nodes = node_positions(cfg, s)
    ell = cfg.link_length
    stations = np.linspace(0.0, cfg.length, N_OUTPUT_POINTS)
    idx = np.minimum((stations / ell).astype(int), cfg.n_links - 1)
    frac = stations / ell - idx
    pts = nodes[idx] + frac[:, None] * (nodes[idx + 1] - nodes[idx])
    return pts.reshape(-1)


def neutral_full_state(cfg):
    return full_state(cfg, neutral_state(cfg))


def neutral_output(cfg):
    return output(cfg, neutral_state(cfg))
