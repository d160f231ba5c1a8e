"""Prior distributions over the signal strength and their JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["GammaComponent", "MixturePrior", "EfronPrior", "prior_from_json"]

GAMMA_MIXTURE = "gamma-mixture"
DISCRETE_GRID = "discrete-grid"
EFRON = "efron"


@dataclass(frozen=True)
class GammaComponent:
    """Gamma(shape, rate) component with mixing weight."""

    shape: float
    rate: float
    weight: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("gamma shape and rate must be positive")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("weight must lie in [0, 1]")

    @property
    def mean(self):
        return self.shape / self.rate


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass(frozen=True, eq=False)
class MixturePrior:
    """Either a finite gamma mixture or a discrete distribution on a grid.

    Use :meth:`gamma_mixture` or :meth:`discrete` to build one. ``fit_info``
    carries fitting metadata (method, iterations, objective trace, ...).
    """

    kind: str
    shapes: np.ndarray | None = None
    rates: np.ndarray | None = None
    weights: np.ndarray | None = None
    support: np.ndarray | None = None
    masses: np.ndarray | None = None
    fit_info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == GAMMA_MIXTURE:
            shapes = np.asarray(self.shapes, dtype=np.float64).ravel()
            rates = np.asarray(self.rates, dtype=np.float64).ravel()
            weights = np.asarray(self.weights, dtype=np.float64).ravel()
            if not (shapes.size == rates.size == weights.size) or shapes.size == 0:
                raise ValueError("shapes, rates and weights must have equal, nonzero length")
            if (shapes <= 0).any() or (rates <= 0).any():
                raise ValueError("gamma shapes and rates must be positive")
            _check_masses(weights)
            object.__setattr__(self, "shapes", shapes)
            object.__setattr__(self, "rates", rates)
            object.__setattr__(self, "weights", weights)
        elif self.kind == DISCRETE_GRID:
            support = np.asarray(self.support, dtype=np.float64).ravel()
            masses = np.asarray(self.masses, dtype=np.float64).ravel()
            if support.size == 0 or support.size != masses.size:
                raise ValueError("support and masses must have equal, nonzero length")
            if (support <= 0).any() or (np.diff(support) <= 0).any():
                raise ValueError("support must be positive and strictly increasing")
            _check_masses(masses)
            object.__setattr__(self, "support", support)
            object.__setattr__(self, "masses", masses)
        else:
            raise ValueError(f"unknown prior kind {self.kind!r}")

    @classmethod
    def gamma_mixture(cls, shapes, rates, weights, **fit_info):
        return cls(GAMMA_MIXTURE, shapes=shapes, rates=rates, weights=weights, fit_info=fit_info)

    @classmethod
    def single_gamma(cls, shape, rate):
        return cls.gamma_mixture([shape], [rate], [1.0])

    @classmethod
    def discrete(cls, support, masses, **fit_info):
        return cls(DISCRETE_GRID, support=support, masses=masses, fit_info=fit_info)

    @property
    def components(self) -> list[GammaComponent]:
        if self.kind != GAMMA_MIXTURE:
            raise AttributeError("discrete priors have no gamma components")
        return [GammaComponent(a, b, w) for a, b, w in zip(self.shapes, self.rates, self.weights)]

    @property
    def n_components(self):
        return self.shapes.size if self.kind == GAMMA_MIXTURE else self.support.size

    def active(self, threshold=1e-6) -> "MixturePrior":
        """Drop components (or grid points) with weight at or below ``threshold``."""
        if self.kind == GAMMA_MIXTURE:
            keep = self.weights > threshold
            w = self.weights[keep]
            return MixturePrior.gamma_mixture(
                self.shapes[keep], self.rates[keep], w / w.sum(), **self.fit_info
            )
        keep = self.masses > threshold
        m = self.masses[keep]
        return MixturePrior.discrete(self.support[keep], m / m.sum(), **self.fit_info)

    def mean(self):
        if self.kind == GAMMA_MIXTURE:
            return float(np.sum(self.weights * self.shapes / self.rates))
        return float(np.sum(self.masses * self.support))

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == GAMMA_MIXTURE:
            d["components"] = [
                {"shape": float(a), "rate": float(b), "weight": float(w)}
                for a, b, w in zip(self.shapes, self.rates, self.weights)
            ]
        else:
            d["support"] = self.support.tolist()
            d["masses"] = self.masses.tolist()
        d["fit"] = _json_safe(self.fit_info)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _check_masses(m):
    if (m < 0).any():
        raise ValueError("masses must be nonnegative")
    if abs(m.sum() - 1.0) > 1e-10:
        raise ValueError(f"masses sum to {m.sum()!r}, not 1")


@dataclass(frozen=True, eq=False)
class EfronPrior:
    """Exponential-family prior on a grid: ``g = exp(Q alpha - phi(alpha))``."""

    support: np.ndarray
    alpha: np.ndarray
    structure: np.ndarray
    c0: float
    df: int
    fit_info: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "support", np.asarray(self.support, dtype=np.float64))
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=np.float64))
        object.__setattr__(self, "structure", np.asarray(self.structure, dtype=np.float64))

    @property
    def normalizer(self) -> float:
        eta = self.structure @ self.alpha
        top = eta.max()
        return float(top + np.log(np.exp(eta - top).sum()))

    @property
    def masses(self) -> np.ndarray:
        eta = self.structure @ self.alpha
        return np.exp(eta - self.normalizer)

    def as_discrete(self) -> MixturePrior:
        m = self.masses
        return MixturePrior.discrete(self.support, m / m.sum(), **self.fit_info)

    def mean(self):
        return float(np.sum(self.masses * self.support))

    def to_dict(self):
        return {
            "kind": EFRON,
            "support": self.support.tolist(),
            "masses": self.masses.tolist(),
            "alpha": self.alpha.tolist(),
            "structure": self.structure.tolist(),
            "c0": float(self.c0),
            "df": int(self.df),
            "fit": _json_safe(self.fit_info),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def prior_from_json(text: str):
    d = json.loads(text)
    fit = d.get("fit", {})
    if d["kind"] == GAMMA_MIXTURE:
        comps = d["components"]
        return MixturePrior.gamma_mixture(
            [c["shape"] for c in comps],
            [c["rate"] for c in comps],
            [c["weight"] for c in comps],
            **fit,
        )
    if d["kind"] == DISCRETE_GRID:
        return MixturePrior.discrete(d["support"], d["masses"], **fit)
    if d["kind"] == EFRON:
        return EfronPrior(d["support"], d["alpha"], d["structure"], d["c0"], d["df"], fit)
    raise ValueError(f"unknown prior kind {d['kind']!r}")
