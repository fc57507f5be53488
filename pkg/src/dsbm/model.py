"""Dynamic SBM parameters and detectability theory.

Snapshots are indexed ``t = 0 .. T-1``; there are ``n (T - 1)`` temporal edges.
The canonical parameterization is ``(c, epsilon)``; ``c_in``, ``c_out`` and
``lambda`` are always derived.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def derive_rates(c: float, epsilon: float, k: int) -> tuple[float, float, float]:
    """Return ``(c_in, c_out, lam)`` for mean degree ``c`` and ratio ``epsilon``."""
    if not c > 0:
        raise ValueError(f"mean degree must be positive, got {c}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if k < 2:
        raise ValueError(f"need k >= 2 groups, got {k}")
    c_in = k * c / (1.0 + (k - 1) * epsilon)
    c_out = epsilon * c_in
    lam = (1.0 - epsilon) / (1.0 + (k - 1) * epsilon)
    return c_in, c_out, lam


def _check_unit(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")


def ks_margin(c: float, lam: float, eta: float) -> float:
    """Signed distance from the dynamic Kesten-Stigum bound.

    Positive means detectable: ``c lam^2 (1 + eta^2) - (1 - eta^2)``.
    """
    if not c > 0:
        raise ValueError(f"mean degree must be positive, got {c}")
    _check_unit("lambda", lam)
    _check_unit("eta", eta)
    return c * lam**2 * (1.0 + eta**2) - (1.0 - eta**2)


def branching_matrix(c: float, lam: float, eta: float) -> np.ndarray:
    """Signal-weighted two-type (spatial, temporal) branching matrix."""
    a = c * lam**2
    e2 = eta**2
    return np.array([[a, a], [2.0 * e2, e2]])


def branching_eigenvalue(c: float, lam: float, eta: float) -> float:
    """Largest eigenvalue of the signal-weighted branching matrix (closed form)."""
    if not c > 0:
        raise ValueError(f"mean degree must be positive, got {c}")
    _check_unit("lambda", lam)
    _check_unit("eta", eta)
    a = c * lam**2
    e2 = eta**2
    s = a + e2
    return 0.5 * (s + math.sqrt(s * s + 4.0 * a * e2))


def critical_epsilon(c: float, eta: float, k: int = 2) -> tuple[float, bool]:
    """Return ``(eps_c, ok)``: the epsilon where ``ks_margin`` vanishes.

    ``ok`` is False when no epsilon in ``[0, 1)`` is detectable
    (``c <= (1 - eta^2) / (1 + eta^2)``); ``eps_c`` is then 0.
    """
    if not c > 0:
        raise ValueError(f"mean degree must be positive, got {c}")
    _check_unit("eta", eta)
    if k < 2:
        raise ValueError(f"need k >= 2 groups, got {k}")
    rhs = (1.0 - eta**2) / (1.0 + eta**2)
    if c <= rhs:
        return 0.0, False
    lam_c = math.sqrt(rhs / c)
    return (1.0 - lam_c) / (1.0 + (k - 1) * lam_c), True


@dataclass(frozen=True)
class ThresholdReport:
    ks_margin: float
    branching_eigenvalue: float
    detectable: bool
    epsilon_critical: float


@dataclass(frozen=True)
class ModelParams:
    n: int
    T: int
    k: int
    eta: float
    c: float
    epsilon: float
    prior: tuple[float, ...] | None = None
    _prior: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.T < 1:
            raise ValueError("n and T must be positive")
        if self.k < 1:
            raise ValueError("k must be positive")
        _check_unit("eta", self.eta)
        _check_unit("epsilon", self.epsilon)
        if not self.c > 0:
            raise ValueError("mean degree must be positive")
        if self.prior is None:
            q = np.full(self.k, 1.0 / self.k)
        else:
            q = np.asarray(self.prior, dtype=float)
            if q.shape != (self.k,):
                raise ValueError(f"prior must have length k={self.k}")
            if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-12:
                raise ValueError("prior must be a probability vector")
            object.__setattr__(self, "prior", tuple(float(x) for x in q))
        q.setflags(write=False)
        object.__setattr__(self, "_prior", q)

    @property
    def q(self) -> np.ndarray:
        return self._prior

    @property
    def uniform_prior(self) -> bool:
        return bool(np.allclose(self._prior, 1.0 / self.k, atol=1e-12, rtol=0))

    @property
    def c_in(self) -> float:
        return self.k * self.c / (1.0 + (self.k - 1) * self.epsilon)

    @property
    def c_out(self) -> float:
        return self.epsilon * self.c_in

    @property
    def lam(self) -> float:
        return (1.0 - self.epsilon) / (1.0 + (self.k - 1) * self.epsilon)

    @property
    def cmat(self) -> np.ndarray:
        """k x k matrix ``c_rs`` (``c_in`` on the diagonal, ``c_out`` elsewhere)."""
        m = np.full((self.k, self.k), self.c_out)
        np.fill_diagonal(m, self.c_in)
        return m

    @property
    def pmat(self) -> np.ndarray:
        p = self.cmat / self.n
        if p.max() > 1.0:
            raise ValueError(f"edge probability c_in/n = {p.max():.3g} exceeds 1")
        return p

    @property
    def sigma(self) -> np.ndarray:
        """Spatial label-copy matrix ``lam I + (1 - lam) J / k``."""
        return self.lam * np.eye(self.k) + (1.0 - self.lam) / self.k

    @property
    def tau(self) -> np.ndarray:
        """Temporal label-copy matrix ``eta I + (1 - eta) J / k``."""
        return self.eta * np.eye(self.k) + (1.0 - self.eta) / self.k

    def with_(self, **changes) -> "ModelParams":
        d = dict(n=self.n, T=self.T, k=self.k, eta=self.eta, c=self.c,
                 epsilon=self.epsilon, prior=self.prior)
        d.update(changes)
        return ModelParams(**d)

    def to_dict(self) -> dict:
        return dict(n=self.n, T=self.T, k=self.k, eta=self.eta, c=self.c,
                    epsilon=self.epsilon, prior=list(self.q))

    def _require_uniform(self):
        if not self.uniform_prior:
            raise ValueError("threshold theory assumes a uniform prior")

    def threshold(self) -> ThresholdReport:
        self._require_uniform()
        margin = ks_margin(self.c, self.lam, self.eta)
        eps_c, _ = critical_epsilon(self.c, self.eta, self.k)
        return ThresholdReport(
            ks_margin=margin,
            branching_eigenvalue=branching_eigenvalue(self.c, self.lam, self.eta),
            detectable=margin > 0,
            epsilon_critical=eps_c,
        )
