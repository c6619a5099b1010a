"""Lattice geometry, disorder, absorbers, initial states and the DANSE operator.

Sites are labelled ``n = -(N-1)/2 ... (N-1)/2`` on a grid of ``N = L + 2 L_a``
sites; the box is ``|n| <= (L-1)/2`` and the absorbing layers sit on either
side of it. Energies are in units of the hopping, times in units of
hbar / hopping.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GeometryError, ParameterError

__all__ = [
    "LatticeParams",
    "DisorderRealization",
    "WaveState",
    "Shape",
    "Phases",
    "InitialStateSpec",
    "sample_disorder",
    "absorber_potential",
    "absorber_rates",
    "make_initial_state",
    "apply_hamiltonian",
    "anderson_localization_length",
    "gaussian_sigma",
]


@dataclass(frozen=True)
class LatticeParams:
    """Box, absorber and interaction parameters.

    ``n_c`` defaults to ``L_a / 3`` when left as ``None``.
    """

    L: int = 101
    L_a: int = 10
    eta_a: float = 0.1
    n_c: float | None = None
    W: float = 2.0
    g: float = 0.0

    def __post_init__(self):
        if self.n_c is None:
            object.__setattr__(self, "n_c", self.L_a / 3.0)
        if not isinstance(self.L, (int, np.integer)) or self.L < 3 or self.L % 2 == 0:
            raise ParameterError(f"L must be an odd integer >= 3, got {self.L!r}")
        # L_a = 0 is a closed box (grid == box); used for stationarity checks
        if not isinstance(self.L_a, (int, np.integer)) or self.L_a < 0:
            raise ParameterError(f"L_a must be a non-negative integer, got {self.L_a!r}")
        if not self.eta_a >= 0:
            raise ParameterError(f"eta_a must be non-negative, got {self.eta_a!r}")
        if not self.n_c > 0:
            raise ParameterError(f"n_c must be positive, got {self.n_c!r}")
        if not self.W >= 0:
            raise ParameterError(f"W must be non-negative, got {self.W!r}")
        if not math.isfinite(self.g):
            raise ParameterError(f"g must be finite, got {self.g!r}")

    @property
    def n_sites(self) -> int:
        return self.L + 2 * self.L_a

    @property
    def half_box(self) -> int:
        return (self.L - 1) // 2

    @property
    def half_grid(self) -> int:
        return (self.n_sites - 1) // 2

    @property
    def box(self) -> slice:
        """Slice of grid indices belonging to the box."""
        return slice(self.L_a, self.L_a + self.L)

    def sites(self) -> np.ndarray:
        """Site labels n for every grid index."""
        return np.arange(self.n_sites) - self.half_grid

    def index_of(self, n: int) -> int:
        if abs(n) > self.half_grid:
            raise IndexError(f"site {n} outside grid |n| <= {self.half_grid}")
        return n + self.half_grid

    def replace(self, **changes) -> LatticeParams:
        d = asdict(self)
        d.update(changes)
        if "L_a" in changes and "n_c" not in changes:
            d["n_c"] = None
        return LatticeParams(**d)


@dataclass(frozen=True)
class DisorderRealization:
    """On-site energies over the whole grid; ``v`` is a pure function of ``seed``."""

    v: np.ndarray = field(repr=False)
    seed: int
    W: float

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "W": float(self.W), "n_sites": int(self.v.size)}

    @classmethod
    def from_dict(cls, d: dict) -> DisorderRealization:
        return cls(_disorder_values(d["W"], d["n_sites"], d["seed"]), int(d["seed"]), float(d["W"]))


def _disorder_values(W, n_sites, seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-0.5 * W, 0.5 * W, size=n_sites)
    v.setflags(write=False)
    return v


def sample_disorder(params: LatticeParams, seed: int) -> DisorderRealization:
    """Draw i.i.d. uniform on-site energies in ``[-W/2, W/2]`` for every grid site."""
    if not isinstance(params, LatticeParams):
        raise ParameterError("params must be a LatticeParams")
    if seed is None or int(seed) < 0:
        raise ParameterError(f"seed must be a non-negative integer, got {seed!r}")
    return DisorderRealization(_disorder_values(params.W, params.n_sites, int(seed)), int(seed), params.W)


def absorber_potential(n: int, params: LatticeParams) -> complex:
    """Imaginary absorbing potential at site ``n`` (zero inside the box)."""
    if abs(n) > params.half_grid:
        raise IndexError(f"site {n} outside grid |n| <= {params.half_grid}")
    depth = abs(n) - params.half_box
    if depth <= 0:
        return 0j
    return complex(0.0, -params.eta_a * math.exp(depth / params.n_c))


def absorber_rates(params: LatticeParams) -> np.ndarray:
    """Absorption rates ``-Im V_abs`` for every grid site (non-negative)."""
    depth = np.abs(params.sites()) - params.half_box
    gamma = np.where(depth > 0, params.eta_a * np.exp(np.maximum(depth, 0) / params.n_c), 0.0)
    return gamma.astype(float)


@dataclass
class WaveState:
    """Complex amplitudes over the full grid at time ``t``."""

    c: np.ndarray
    t: float = 0.0

    def copy(self) -> WaveState:
        return WaveState(self.c.copy(), self.t)

    @property
    def norm(self) -> float:
        return float(np.vdot(self.c, self.c).real)


class Shape(str, enum.Enum):
    SQUARE = "square"
    GAUSSIAN = "gaussian"


class Phases(str, enum.Enum):
    RANDOM = "random"
    COHERENT = "coherent"


@dataclass(frozen=True)
class InitialStateSpec:
    shape: Shape = Shape.SQUARE
    L0: int = 21
    phases: Phases = Phases.RANDOM
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        object.__setattr__(self, "phases", Phases(self.phases))
        if not isinstance(self.L0, (int, np.integer)) or self.L0 < 1 or self.L0 % 2 == 0:
            raise ParameterError(f"L0 must be an odd positive integer, got {self.L0!r}")

    def to_dict(self) -> dict:
        return {"shape": self.shape.value, "L0": int(self.L0), "phases": self.phases.value, "seed": int(self.seed)}


def gaussian_sigma(L0: int) -> float:
    """Width giving the same second moment as a square state of width L0."""
    return math.sqrt((L0 - 1) * (L0 + 1) / 12.0)


def make_initial_state(spec: InitialStateSpec, params: LatticeParams) -> WaveState:
    if spec.L0 > params.L:
        raise GeometryError(f"initial width L0={spec.L0} exceeds box L={params.L}")
    n = params.sites()
    if spec.shape is Shape.SQUARE:
        prob = np.where(np.abs(n) <= (spec.L0 - 1) // 2, 1.0 / spec.L0, 0.0)
    else:
        sigma = gaussian_sigma(spec.L0)
        if sigma == 0.0:
            prob = (n == 0).astype(float)
        else:
            prob = np.exp(-(n**2) / (2 * sigma**2)) / (math.sqrt(2 * math.pi) * sigma)
            prob /= prob.sum()
    amp = np.sqrt(prob)
    if spec.phases is Phases.RANDOM:
        phase = np.random.default_rng(spec.seed).uniform(0.0, 2 * math.pi, size=n.size)
        c = amp * np.exp(1j * phase)
    else:
        c = amp.astype(complex)
    return WaveState(c, 0.0)


def apply_hamiltonian(state: WaveState, dis: DisorderRealization, params: LatticeParams,
                      periodic: bool = False) -> np.ndarray:
    """Right-hand side of ``i dc/dt = H[c] c`` including absorbers and nonlinearity.

    Amplitudes beyond the grid are zero (hard wall) unless ``periodic``.
    """
    c = np.asarray(state.c)
    if c.shape != dis.v.shape or c.size != params.n_sites:
        raise GeometryError(f"state has {c.size} sites, disorder {dis.v.size}, grid {params.n_sites}")
    diag = dis.v - 1j * absorber_rates(params) + params.g * np.abs(c) ** 2
    h = diag * c
    h[1:] -= c[:-1]
    h[:-1] -= c[1:]
    if periodic:
        h[0] -= c[-1]
        h[-1] -= c[0]
    return h


def anderson_localization_length(W: float, nu: float = 0.0) -> float:
    """Weak-disorder localization length ``96 cos^2(nu) / W^2``; ``inf`` for W = 0."""
    if W < 0:
        raise ParameterError(f"W must be non-negative, got {W!r}")
    if W == 0:
        return math.inf
    return 96.0 * math.cos(nu) ** 2 / W**2
