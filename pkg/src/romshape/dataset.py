"""Sinusoidal-excitation trial grid, snapshot assembly, and persistence.

The training corpus is 40 open-loop trials: 8 amplitude patterns crossed with
5 excitation frequencies, numbered row-major (pattern 1 covers trials 1..5 in
frequency order, pattern 2 covers 6..10, and so on). Each trial drives the
three body segments with sinusoids at phases 0, 120, and 240 degrees and
records K = 1000 columns of centered full state, raw input, and centered
output at 100 Hz. Column k holds the state and output at t = k * dt together
with the input held over [k*dt, (k+1)*dt), so column 0 is the neutral start
and x_{k+1} = step(x_k, u_k) is aligned column by column.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import fom, storage

FREQUENCIES = (0.1, 0.3, 0.5, 1.0, 1.5)

# Amplitude patterns as (low/high flag rows): each row scales (A1, A2, A3).
# Rows 1-4 use the low level, rows 5-8 the high level.
_PATTERNS = (
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (1, 1, 1),
)

PHASES = (0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0)

# Default pressure levels; surrogate choices, overridable via config.
A_LOW = 0.4
A_HIGH = 1.0

TRAIN_SETS = {1: (40,), 2: (40, 17), 3: (40, 17, 36)}
CONTROL_TEST_TRIALS = (4, 6, 12, 19, 22, 26, 33, 39)


def estimation_test_trials():
    """The 37 trials outside the largest training set."""
    held_out = set(TRAIN_SETS[3])
    return tuple(t for t in range(1, 41) if t not in held_out)


@dataclass(frozen=True)
class TrialSpec:
    trial_id: int
    amplitudes: tuple
    frequency: float
    phases: tuple = PHASES
    duration: float = 10.0
    steps: int = 1000

    def __post_init__(self):
        if not 1 <= self.trial_id <= 40:
            raise ValueError("trial_id must be in 1..40")
        if len(self.amplitudes) != 3 or len(self.phases) != 3:
            raise ValueError("need 3 amplitudes and 3 phases")


def trial_grid(a_low=A_LOW, a_high=A_HIGH):
    """All 40 trial specs in trial-id order."""
    specs = []
    levels = [a_low] * 4 + [a_high] * 4
    patterns = _PATTERNS + _PATTERNS
    tid = 1
    for level, pattern in zip(levels, patterns):
        for f in FREQUENCIES:
            amps = tuple(level * flag for flag in pattern)
            specs.append(TrialSpec(trial_id=tid, amplitudes=amps, frequency=f))
            tid += 1
    return specs


def input_signal(spec, t):
    """Six-component pressure input at time t (antagonists negated)."""
    u = np.zeros(fom.N_INPUTS)
    w = 2.0 * np.pi * spec.frequency
    for i in range(3):
        drive = spec.amplitudes[i] * np.sin(w * t + spec.phases[i])
        u[2 * i] = drive
        u[2 * i + 1] = -drive
    return u


@dataclass
class SnapshotSet:
    """Centered snapshot matrices for one or more concatenated trials.

    segments holds the per-trial column counts in order, so derivative
    estimation and shifted-pair construction never cross a trial boundary.
    """

    X: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    x_neutral: np.ndarray
    y_neutral: np.ndarray
    dt: float
    trial_ids: list
    segments: list

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.U.shape[0]

    @property
    def p(self):
        return self.Y.shape[0]

    @property
    def K(self):
        return self.X.shape[1]

    def segment_slices(self):
        out = []
        start = 0
        for length in self.segments:
            out.append(slice(start, start + length))
            start += length
        return out

    def trial(self, trial_id):
        """The single-trial subset for trial_id."""
        for tid, sl in zip(self.trial_ids, self.segment_slices()):
            if tid == trial_id:
                return SnapshotSet(
                    X=self.X[:, sl],
                    U=self.U[:, sl],
                    Y=self.Y[:, sl],
                    x_neutral=self.x_neutral,
                    y_neutral=self.y_neutral,
                    dt=self.dt,
                    trial_ids=[tid],
                    segments=[sl.stop - sl.start],
                )
        raise KeyError(f"trial {trial_id} not in set {self.trial_ids}")


def run_trial(cfg, spec):
    """Simulate one trial and return its centered SnapshotSet."""
    K = spec.steps
    x_neutral = fom.neutral_full_state(cfg)
    y_neutral = fom.neutral_output(cfg)
    X = np.zeros((x_neutral.size, K))
    U = np.zeros((fom.N_INPUTS, K))
    Y = np.zeros((y_neutral.size, K))
    s = fom.neutral_state(cfg)
    for k in range(K):
        X[:, k] = fom.full_state(cfg, s) - x_neutral
        Y[:, k] = fom.output(cfg, s) - y_neutral
        u = input_signal(spec, k * cfg.dt)
        U[:, k] = u
        if k < K - 1:
            s = fom.step(cfg, s, u)
    return SnapshotSet(
        X=X,
        U=U,
        Y=Y,
        x_neutral=x_neutral,
        y_neutral=y_neutral,
        dt=cfg.dt,
        trial_ids=[spec.trial_id],
        segments=[K],
    )


PROBE_FREQUENCIES = (0.75, 0.2)


def validation_probes(cfg, a_low=A_LOW, a_high=A_HIGH, duration=10.0, steps=1000):
    """Two plant records at off-grid frequencies, as (U, Y) pairs.

    Neither frequency appears in the trial grid, so these records exercise
    a fitted model outside its training support without touching any test
    trial. Used to rank otherwise equivalent observer gains; never
    persisted (the trial ids are placeholders).
    """
    specs = [
        TrialSpec(
            trial_id=1,
            amplitudes=(a_high, a_low, a_high),
            frequency=PROBE_FREQUENCIES[0],
            duration=duration,
            steps=steps,
        ),
        TrialSpec(
            trial_id=2,
            amplitudes=(a_low, a_high, 0.0),
            frequency=PROBE_FREQUENCIES[1],
            duration=duration,
            steps=steps,
        ),
    ]
    out = []
    for spec in specs:
        sset = run_trial(cfg, spec)
        out.append((sset.U, sset.Y))
    return out


def concat(sets):
    """Column-wise concatenation preserving trial boundaries."""
    if not sets:
        raise ValueError("nothing to concatenate")
    first = sets[0]
    for other in sets[1:]:
        if (other.n, other.m, other.p) != (first.n, first.m, first.p):
            raise ValueError("mismatched snapshot dimensions")
        if other.dt != first.dt:
            raise ValueError("mismatched dt")
        if not (
            np.array_equal(other.x_neutral, first.x_neutral)
            and np.array_equal(other.y_neutral, first.y_neutral)
        ):
            raise ValueError("mismatched neutral vectors")
    return SnapshotSet(
        X=np.concatenate([s.X for s in sets], axis=1),
        U=np.concatenate([s.U for s in sets], axis=1),
        Y=np.concatenate([s.Y for s in sets], axis=1),
        x_neutral=first.x_neutral,
        y_neutral=first.y_neutral,
        dt=first.dt,
        trial_ids=[t for s in sets for t in s.trial_ids],
        segments=[k for s in sets for k in s.segments],
    )


def _spec_to_json(spec):
    return {
        "trial_id": spec.trial_id,
        "amplitudes": list(spec.amplitudes),
        "frequency": spec.frequency,
        "phases": list(spec.phases),
        "duration": spec.duration,
        "steps": spec.steps,
    }


def spec_from_json(obj):
    return TrialSpec(
        trial_id=int(obj["trial_id"]),
        amplitudes=tuple(obj["amplitudes"]),
        frequency=float(obj["frequency"]),
        phases=tuple(obj["phases"]),
        duration=float(obj["duration"]),
        steps=int(obj["steps"]),
    )


def save_trial(dirpath, sset, trial_id, spec=None, config_hash=None):
    """Write one trial's subdirectory of the dataset layout."""
    sl = dict(zip(sset.trial_ids, sset.segment_slices()))[trial_id]
    tdir = os.path.join(dirpath, str(trial_id))
    os.makedirs(tdir, exist_ok=True)
    meta = {
        "trial_id": trial_id,
        "dt": sset.dt,
        "config_hash": config_hash,
        "matrices": {
            "X": storage.save_matrix(os.path.join(tdir, "X.f64"), sset.X[:, sl]),
            "U": storage.save_matrix(os.path.join(tdir, "U.f64"), sset.U[:, sl]),
            "Y": storage.save_matrix(os.path.join(tdir, "Y.f64"), sset.Y[:, sl]),
        },
    }
    if spec is not None:
        meta["spec"] = _spec_to_json(spec)
    storage.write_json(os.path.join(tdir, "meta.json"), meta)


def save_root(dirpath, sset, trial_ids, config_hash=None):
    """Write the dataset root: neutral vectors plus the trial index."""
    os.makedirs(dirpath, exist_ok=True)
    root_desc = {
        "dt": sset.dt,
        "x_neutral": storage.save_matrix(
            os.path.join(dirpath, "x_neutral.f64"), sset.x_neutral[None, :]
        ),
        "y_neutral": storage.save_matrix(
            os.path.join(dirpath, "y_neutral.f64"), sset.y_neutral[None, :]
        ),
    }
    manifest = {
        "trials": sorted(int(t) for t in trial_ids),
        "config_hash": config_hash,
        "root": root_desc,
    }
    storage.write_json(os.path.join(dirpath, "manifest.json"), manifest)
    return manifest


def save(sset, dirpath, specs=None, config_hash=None):
    """Persist a SnapshotSet as dataset/<trial_id>/{X,U,Y}.f64 + meta.json.

    Neutral vectors land at the dataset root. specs, when given, maps
    trial_id to its TrialSpec for the per-trial metadata.
    """
    os.makedirs(dirpath, exist_ok=True)
    spec_map = {s.trial_id: s for s in specs} if specs else {}
    for tid in sset.trial_ids:
        save_trial(
            dirpath, sset, tid, spec=spec_map.get(tid), config_hash=config_hash
        )
    save_root(dirpath, sset, sset.trial_ids, config_hash=config_hash)


def load(dirpath, trial_ids=None):
    """Load trials (all by default, ascending id) into one SnapshotSet."""
    manifest = storage.read_json(os.path.join(dirpath, "manifest.json"))
    available = manifest["trials"]
    if trial_ids is None:
        trial_ids = available
    missing = [t for t in trial_ids if t not in available]
    if missing:
        raise KeyError(f"trials {missing} not in dataset {dirpath}")
    root = manifest["root"]
    x_neutral = storage.load_matrix(
        os.path.join(dirpath, "x_neutral.f64"), root["x_neutral"]
    ).ravel()
    y_neutral = storage.load_matrix(
        os.path.join(dirpath, "y_neutral.f64"), root["y_neutral"]
    ).ravel()
    parts = []
    for tid in trial_ids:
        tdir = os.path.join(dirpath, str(tid))
        meta = storage.read_json(os.path.join(tdir, "meta.json"))
        if meta["trial_id"] != tid:
            raise ValueError(f"{tdir}: meta trial_id mismatch")
        mats = {
            name: storage.load_matrix(
                os.path.join(tdir, f"{name}.f64"), meta["matrices"][name]
            )
            for name in ("X", "U", "Y")
        }
        parts.append(
            SnapshotSet(
                X=mats["X"],
                U=mats["U"],
                Y=mats["Y"],
                x_neutral=x_neutral,
                y_neutral=y_neutral,
                dt=float(meta["dt"]),
                trial_ids=[tid],
                segments=[mats["X"].shape[1]],
            )
        )
    return concat(parts)


def load_trial_spec(dirpath, trial_id):
    meta = storage.read_json(os.path.join(dirpath, str(trial_id), "meta.json"))
    return spec_from_json(meta["spec"])


def load_trial_io(dirpath, trial_id):
    """Load one trial's input and output records only, skipping the state.

    The state block dominates the trial payload; estimation sweeps and
    replay references need just (U, Y, dt).
    """
    tdir = os.path.join(dirpath, str(trial_id))
    meta = storage.read_json(os.path.join(tdir, "meta.json"))
    U = storage.load_matrix(os.path.join(tdir, "U.f64"), meta["matrices"]["U"])
    Y = storage.load_matrix(os.path.join(tdir, "Y.f64"), meta["matrices"]["Y"])
    return U, Y, float(meta["dt"])
