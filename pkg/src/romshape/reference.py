"""Reference trajectories for shape tracking.

Three sources: replay of a recorded feasible output sequence, a synthetic
bioinspired traveling wave with an exponential amplitude envelope, and
centerline sequences imported from CSV (for example digitized footage of a
different swimmer). All references are centered outputs on the 20-point
arc-length grid, interleaved (x0, z0, x1, z1, ...), with a boolean row mask
naming the entries that tracking metrics score. Lateral (z) entries carry
the objective; axial (x) entries are never scored because the chain is
inextensible and axial drift is a kinematic consequence of bending.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import fom

GAIT_AMPLITUDE = 0.03
GAIT_DECAYS = (1.0, 3.5)
GAIT_FREQUENCIES = (0.5, 1.0)
GAIT_WAVENUMBERS = (0.5, 1.0, 1.5)

SNAP_REL_TOL = 1e-9


@dataclass
class ReferenceTrajectory:
    Yref: np.ndarray
    mask: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.Yref = np.asarray(self.Yref, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.Yref.ndim != 2 or self.mask.shape != (self.Yref.shape[0],):
            raise ValueError("mask must have one entry per output row")


def _z_mask(p):
    mask = np.zeros(p, dtype=bool)
    mask[1::2] = True
    return mask


def replay(Y, source="replay"):
    """Wrap a recorded centered output sequence as a reference."""
    Y = np.asarray(Y, dtype=float)
    return ReferenceTrajectory(Yref=Y.copy(), mask=_z_mask(Y.shape[0]), source=source)


@dataclass(frozen=True)
class GaitParams:
    decay: float
    frequency: float
    wavenumber: float
    amplitude: float = GAIT_AMPLITUDE

    def label(self):
        return (
            f"wave_a{self.decay:g}_f{self.frequency:g}_k{self.wavenumber:g}"
        )


def traveling_wave(params, length, dt, steps):
    """Posteriorly amplified traveling-wave lateral reference.

    z_j(t) = A exp(decay (s_j/length - 1)) sin(wavenumber s_j - 2 pi f t)
    at the arc stations s_j = j length/19; the x rows stay at neutral.
    """
    stations = np.linspace(0.0, length, fom.N_OUTPUT_POINTS)
    t = np.arange(steps) * dt
    envelope = params.amplitude * np.exp(params.decay * (stations / length - 1.0))
    phase = params.wavenumber * stations[:, None] - 2.0 * np.pi * params.frequency * t[None, :]
    Z = envelope[:, None] * np.sin(phase)
    Yref = np.zeros((2 * fom.N_OUTPUT_POINTS, steps))
    Yref[1::2, :] = Z
    return ReferenceTrajectory(
        Yref=Yref, mask=_z_mask(2 * fom.N_OUTPUT_POINTS), source=params.label()
    )


def gait_grid():
    """The 12 stock gait parameter combinations, in deterministic order."""
    return [
        GaitParams(decay=a, frequency=f, wavenumber=k)
        for a in GAIT_DECAYS
        for f in GAIT_FREQUENCIES
        for k in GAIT_WAVENUMBERS
    ]


def _read_centerline_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for record in csv.reader(fh):
            if not record or not record[0].strip():
                continue
            try:
                rows.append([float(cell) for cell in record])
            except ValueError:
                if rows:
                    raise ValueError(f"malformed centerline row: {record!r}")
                continue  # header line
    if not rows:
        raise ValueError("centerline file holds no numeric rows")
    width = len(rows[0])
    if width < 3 or width % 2 == 0:
        raise ValueError("centerline rows must be t, x0, z0, x1, z1, ...")
    if any(len(row) != width for row in rows):
        raise ValueError("ragged centerline file")
    table = np.array(rows, dtype=float)
    t = table[:, 0]
    if np.any(np.diff(t) <= 0):
        raise ValueError("centerline timestamps must increase")
    n_pts = (width - 1) // 2
    frames = table[:, 1:].reshape(len(rows), n_pts, 2)
    return t, frames


def _arc_resample(pts, distances, snap_tol):
    """Sample a polyline at arc-length distances, extending past the end.

    A distance within snap_tol of a vertex returns that vertex verbatim, so
    re-sampling a polyline on its own grid is an exact round trip.
    """
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    if total <= 0.0:
        raise ValueError("degenerate centerline: zero arc length")
    out = np.empty((distances.size, 2))
    for i, dist in enumerate(distances):
        j = int(np.argmin(np.abs(cum - dist)))
        if abs(cum[j] - dist) <= snap_tol:
            out[i] = pts[j]
            continue
        if dist >= total:
            k = seg_len.size - 1
            while seg_len[k] == 0.0 and k > 0:
                k -= 1
            out[i] = pts[-1] + (dist - total) * seg[k] / seg_len[k]
            continue
        k = int(np.searchsorted(cum, dist, side="right")) - 1
        k = min(max(k, 0), seg_len.size - 1)
        while seg_len[k] == 0.0 and k + 1 < seg_len.size:
            k += 1
        frac = (dist - cum[k]) / seg_len[k]
        out[i] = pts[k] + frac * seg[k]
    return out


def import_centerlines(path, length, dt, steps, source=None):
    """Build a reference from a CSV sequence of planar centerlines.

    Rows are t, x0, z0, x1, z1, ... at arbitrary increasing times; each
    coordinate is linearly interpolated onto the control grid k dt (held
    constant beyond the recorded span). Each frame is re-discretized at the
    robot's arc step length/19 measured along the source polyline. A source
    shorter than the robot fills only the posterior stations: with
    n_seg = round(19 S / length) segments (S the first frame's arc length,
    clipped to 1..19), the sampled points land on stations 19-n_seg .. 19,
    anterior rows are zeroed and left out of the mask. z rows take the
    source lateral coordinate; x rows are centered against the neutral
    stations and are never scored.
    """
    t_src, frames = _read_centerline_csv(path)
    tk = np.arange(steps) * dt
    n_pts = frames.shape[1]
    interp = np.empty((steps, n_pts, 2))
    for j in range(n_pts):
        for c in range(2):
            interp[:, j, c] = np.interp(tk, t_src, frames[:, j, c])

    arc_step = length / (fom.N_OUTPUT_POINTS - 1)
    first = frames[0]
    seg = np.diff(first, axis=0)
    S = float(np.hypot(seg[:, 0], seg[:, 1]).sum())
    if S <= 0.0:
        raise ValueError("degenerate centerline: zero arc length")
    n_seg = int(np.clip(round((fom.N_OUTPUT_POINTS - 1) * S / length), 1, fom.N_OUTPUT_POINTS - 1))
    j0 = (fom.N_OUTPUT_POINTS - 1) - n_seg
    distances = np.arange(n_seg + 1) * arc_step
    snap_tol = SNAP_REL_TOL * arc_step

    p = 2 * fom.N_OUTPUT_POINTS
    Yref = np.zeros((p, steps))
    stations = np.arange(fom.N_OUTPUT_POINTS) * arc_step
    for k in range(steps):
        sampled = _arc_resample(interp[k], distances, snap_tol)
        for i in range(n_seg + 1):
            j = j0 + i
            Yref[2 * j, k] = sampled[i, 0] - stations[j]
            Yref[2 * j + 1, k] = sampled[i, 1]
    mask = np.zeros(p, dtype=bool)
    mask[2 * j0 + 1 :: 2] = True
    label = source if source is not None else f"import:{path}"
    return ReferenceTrajectory(Yref=Yref, mask=mask, source=label)


def export_centerlines(path, Yref, length, dt):
    """Write a centered output sequence back out in the import CSV layout."""
    p, K = Yref.shape
    n = p // 2
    stations = np.arange(n) * (length / (n - 1))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        head = ["t"]
        for j in range(n):
            head += [f"x{j}", f"z{j}"]
        fh.write(",".join(head) + "\n")
        for k in range(K):
            cells = [repr(float(k * dt))]
            for j in range(n):
                cells.append(repr(float(Yref[2 * j, k] + stations[j])))
                cells.append(repr(float(Yref[2 * j + 1, k])))
            fh.write(",".join(cells) + "\n")
