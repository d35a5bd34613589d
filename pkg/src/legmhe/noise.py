"""Noise covariances, window length and rate shared by both estimators."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigParse


def _iso(sigma: float) -> np.ndarray:
    return sigma * sigma * np.eye(3)


COVARIANCE_FIELDS = (
    "Q_a", "Q_omega", "Q_ba", "Q_bomega", "Q_p", "Q_foot", "Q_pf", "Q_vf", "Q_slip",
    "Q_vo", "Q_yqc", "P_p", "P_v", "P_foot", "P_ba", "P_att", "P_bomega",
)

# Fields that may be positive semidefinite rather than definite.
SEMIDEFINITE_FIELDS = ("Q_slip",)

LO_FORMS = ("both", "position", "velocity")


@dataclass
class NoiseConfig:
    """Covariances in SI units; rates are densities (per second).

    ``Q_ba`` and ``Q_bomega`` are random-walk densities, multiplied by the
    step length.  ``Q_p`` and ``Q_foot`` are per-step position diffusions.
    ``Q_vo`` applies to every per-node VO increment.  ``P_*`` entries are the
    initial covariances of the two estimators.
    """

    Q_a: np.ndarray = field(default_factory=lambda: _iso(0.02))
    Q_omega: np.ndarray = field(default_factory=lambda: _iso(0.002))
    Q_ba: np.ndarray = field(default_factory=lambda: _iso(1e-3))
    Q_bomega: np.ndarray = field(default_factory=lambda: _iso(1e-4))
    Q_p: np.ndarray = field(default_factory=lambda: _iso(1e-6))
    Q_foot: np.ndarray = field(default_factory=lambda: 1e2 * np.eye(3))
    Q_pf: np.ndarray = field(default_factory=lambda: _iso(0.01))
    Q_vf: np.ndarray = field(default_factory=lambda: _iso(0.05))
    Q_slip: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    Q_vo: np.ndarray = field(default_factory=lambda: _iso(0.005))
    Q_yqc: np.ndarray = field(default_factory=lambda: _iso(0.01))
    P_p: np.ndarray = field(default_factory=lambda: _iso(0.01))
    P_v: np.ndarray = field(default_factory=lambda: _iso(0.05))
    P_foot: np.ndarray = field(default_factory=lambda: _iso(0.05))
    P_ba: np.ndarray = field(default_factory=lambda: _iso(0.05))
    P_att: np.ndarray = field(default_factory=lambda: _iso(0.02))
    P_bomega: np.ndarray = field(default_factory=lambda: _iso(0.005))
    window: int = 20
    rate: float = 200.0
    ekf_iterations: int = 3
    lo_form: str = "both"
    gravity: float = 9.81

    def __post_init__(self):
        for name in COVARIANCE_FIELDS:
            setattr(self, name, _as_cov(name, getattr(self, name)))
        self.window = int(self.window)
        self.rate = float(self.rate)
        self.ekf_iterations = int(self.ekf_iterations)
        if self.window < 1:
            raise ConfigParse("window must be at least 1", window=self.window)
        if not self.rate > 0.0:
            raise ConfigParse("rate must be positive", rate=self.rate)
        if self.ekf_iterations < 1:
            raise ConfigParse("ekf_iterations must be at least 1")
        if self.lo_form not in LO_FORMS:
            raise ConfigParse("unknown lo_form", lo_form=self.lo_form, allowed=LO_FORMS)

    @property
    def dt(self) -> float:
        return 1.0 / self.rate

    def with_changes(self, **changes) -> "NoiseConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            out[f.name] = val.ravel().tolist() if isinstance(val, np.ndarray) else val
        return out


def _as_cov(name: str, value) -> np.ndarray:
    """Accept a 3x3 matrix, a 9-entry row-major list, a 3-entry diagonal or a scalar."""
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        a = float(a) * np.eye(3)
    elif a.shape == (3,):
        a = np.diag(a)
    elif a.shape == (9,):
        a = a.reshape(3, 3)
    if a.shape != (3, 3) or not np.all(np.isfinite(a)):
        raise ConfigParse("covariance must be 3x3", field=name, shape=a.shape)
    if np.max(np.abs(a - a.T)) > 1e-12 * (1.0 + np.max(np.abs(a))):
        raise ConfigParse("covariance must be symmetric", field=name)
    lo = np.linalg.eigvalsh(a).min()
    if name in SEMIDEFINITE_FIELDS:
        if lo < -1e-15:
            raise ConfigParse("covariance must be positive semidefinite", field=name)
    elif lo <= 0.0:
        raise ConfigParse("covariance must be positive definite", field=name)
    return a
