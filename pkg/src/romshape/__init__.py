"""Reduced-order modeling and model-predictive shape control toolkit.

Pipeline, end to end: simulate an actuated flexible chain, excite it with a
bank of sinusoidal pressure trials, fit linear reduced models from the
recorded snapshots by three non-intrusive methods, wrap each model with a
pole-placed output observer, and close the loop with a condensed box-QP
predictive controller tracking feasible, bioinspired, or imported shape
references. Each stage is importable on its own; the `romshape` console
script chains them.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    dataset,
    estimator,
    fom,
    linalg,
    metrics,
    mpc,
    reference,
    report,
    romfit,
    storage,
)
from .dataset import SnapshotSet, TrialSpec  # noqa: F401
from .estimator import ObserverGain, place_gain  # noqa: F401
from .fom import FomConfig, FomState  # noqa: F401
from .mpc import MpcSpec, TrackingReport  # noqa: F401
from .reference import GaitParams, ReferenceTrajectory  # noqa: F401
from .romfit import (  # noqa: F401
    DiscreteRom,
    LagrangianRom,
    dmdc_fit,
    era_okid_fit,
    lopinf_fit,
    lopinf_to_discrete,
)
