"""Multi-fidelity residual neural-process state estimation for skid-steer
ground robots: physics priors, a simulator, a UKF label oracle, the online
learner and conformal calibration, plus a CLI tying them together."""

from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
