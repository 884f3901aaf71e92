"""Components, stream state and esterification kinetics for HOAc/MeOH/MeOAc/H2O.

The reaction is ``HOAc + MeOH <=> MeOAc + H2O``. It is mole-neutral, so the
total molar flow of a stream never changes across a reactor.

Numeric kinetic and property constants shipped here are calibration
defaults for the surrogate simulators, not literature ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

R_GAS = 8.314462618  # J/(mol K)
P_ATM = 101325.0  # Pa

HOAC, MEOH, MEOAC, H2O = 0, 1, 2, 3
COMPONENT_IDS = ("HOAc", "MeOH", "MeOAc", "H2O")
N_COMPONENTS = 4

# stoichiometric coefficients of HOAc + MeOH -> MeOAc + H2O
NU = (-1.0, -1.0, 1.0, 1.0)


class InvalidArgument(ValueError):
    pass


@dataclass(frozen=True)
class Component:
    id: str
    molar_mass: float  # kg/mol
    normal_boiling_point: float  # K
    liquid_heat_capacity: float  # J/(mol K)
    relative_volatility: float  # vs. the heaviest component
    price: float  # EUR/kg


DEFAULT_COMPONENTS = (
    Component("HOAc", 0.06005, 391.10, 123.1, 1.0, 0.5),
    Component("MeOH", 0.03204, 337.80, 81.1, 4.5, 0.4),
    Component("MeOAc", 0.07408, 330.05, 155.0, 7.0, 0.9),
    Component("H2O", 0.018015, 373.15, 75.3, 2.2, 0.0),
)


@dataclass(frozen=True)
class KineticsParams:
    """Arrhenius forward rate constant and a van 't Hoff style equilibrium constant.

    ``k(T) = pre_exponential * exp(-activation_energy / (R T))`` in m3/(mol s),
    ``Keq(T) = exp(keq_a + keq_b / T)``.
    """

    pre_exponential: float = 163.0
    activation_energy: float = 60000.0
    keq_a: float = 17.9276
    keq_b: float = -5000.0

    def rate_constant(self, T: float) -> float:
        return self.pre_exponential * math.exp(-self.activation_energy / (R_GAS * T))

    def keq(self, T: float) -> float:
        return math.exp(self.keq_a + self.keq_b / T)

    def scaled(self, factor: float) -> "KineticsParams":
        return replace(self, pre_exponential=self.pre_exponential * factor)


@dataclass(frozen=True)
class ThermoConfig:
    components: tuple[Component, ...] = DEFAULT_COMPONENTS
    kinetics: KineticsParams = field(default_factory=KineticsParams)
    molar_density: float = 20000.0  # mol/m3, constant liquid density
    azeotrope_cap: float = 0.95  # max MeOAc mole fraction in any distillate
    pressure: float = P_ATM

    def __post_init__(self):
        if len(self.components) != N_COMPONENTS:
            raise InvalidArgument("exactly four components are required")
        if tuple(c.id for c in self.components) != COMPONENT_IDS:
            raise InvalidArgument(f"components must be ordered {COMPONENT_IDS}")
        order = sorted(self.components, key=lambda c: c.normal_boiling_point)
        alphas = [c.relative_volatility for c in order]
        if any(a <= b for a, b in zip(alphas, alphas[1:])):
            raise InvalidArgument("relative volatility must decrease with boiling point")
        if alphas[-1] != 1.0:
            raise InvalidArgument("heaviest component must have relative volatility 1")
        if any(c.price < 0 for c in self.components):
            raise InvalidArgument("component prices must be non-negative")

    @property
    def molar_masses(self) -> tuple[float, ...]:
        return tuple(c.molar_mass for c in self.components)

    @property
    def heat_capacities(self) -> tuple[float, ...]:
        return tuple(c.liquid_heat_capacity for c in self.components)

    @property
    def volatilities(self) -> tuple[float, ...]:
        return tuple(c.relative_volatility for c in self.components)


DEFAULT_THERMO = ThermoConfig()


@dataclass(frozen=True)
class Stream:
    temperature: float
    flows: tuple[float, float, float, float]
    pressure: float = P_ATM

    @property
    def total(self) -> float:
        f = self.flows
        return f[0] + f[1] + f[2] + f[3]

    def check(self) -> "Stream":
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise InvalidArgument(f"temperature must be positive, got {self.temperature!r}")
        if not (math.isfinite(self.pressure) and self.pressure > 0):
            raise InvalidArgument(f"pressure must be positive, got {self.pressure!r}")
        if len(self.flows) != N_COMPONENTS:
            raise InvalidArgument("a stream carries exactly four component flows")
        for f in self.flows:
            if not (math.isfinite(f) and f >= 0):
                raise InvalidArgument(f"molar flows must be finite and >= 0, got {self.flows!r}")
        return self

    def is_valid(self) -> bool:
        try:
            self.check()
        except InvalidArgument:
            return False
        return True


def make_stream(temperature: float, flows, pressure: float = P_ATM) -> Stream:
    return Stream(float(temperature), tuple(float(f) for f in flows), float(pressure)).check()


def zero_stream(temperature: float) -> Stream:
    return Stream(temperature, (0.0, 0.0, 0.0, 0.0))


def bubble_point_order(thermo: ThermoConfig = DEFAULT_THERMO) -> list[str]:
    """Component ids from most to least volatile."""
    return [c.id for c in sorted(thermo.components, key=lambda c: c.normal_boiling_point)]


def volatility_order(thermo: ThermoConfig = DEFAULT_THERMO) -> tuple[int, ...]:
    """Component indices from most to least volatile."""
    return tuple(sorted(range(N_COMPONENTS), key=lambda i: -thermo.components[i].relative_volatility))


def reaction_rate(c, T: float, p: KineticsParams) -> float:
    """Net forward rate in mol/(m3 s) for concentrations ``c`` in mol/m3."""
    if len(c) != N_COMPONENTS:
        raise InvalidArgument("expected four concentrations")
    if not all(math.isfinite(x) for x in c) or not math.isfinite(T):
        raise InvalidArgument("non-finite input to reaction_rate")
    if T <= 0 or any(x < 0 for x in c):
        raise InvalidArgument("concentrations must be >= 0 and T > 0")
    k = p.rate_constant(T)
    return k * (c[HOAC] * c[MEOH] - c[MEOAC] * c[H2O] / p.keq(T))


def extent_bounds(flows) -> tuple[float, float]:
    """Admissible extent interval keeping every outlet flow non-negative."""
    return -min(flows[MEOAC], flows[H2O]), min(flows[HOAC], flows[MEOH])


def equilibrium_extent_flows(flows, keq: float) -> float:
    """Extent solving ``(C+x)(D+x) = K (A-x)(B-x)`` inside the admissible interval."""
    a, b, c, d = flows[HOAC], flows[MEOH], flows[MEOAC], flows[H2O]
    lo, hi = extent_bounds(flows)
    if hi - lo <= 0.0:
        return lo
    # residual g(x) = K(A-x)(B-x) - (C+x)(D+x) is strictly decreasing on [lo, hi]
    qa = 1.0 - keq
    qb = c + d + keq * (a + b)
    qc = c * d - keq * a * b
    if abs(qa) < 1e-14 * max(1.0, keq):
        x = -qc / qb
    else:
        disc = max(qb * qb - 4.0 * qa * qc, 0.0)
        q = -0.5 * (qb + math.sqrt(disc))
        candidates = [q / qa]
        if q != 0.0:
            candidates.append(qc / q)
        span = hi - lo
        inside = [r for r in candidates if lo - 1e-9 * span <= r <= hi + 1e-9 * span]
        if inside:
            x = min(inside, key=lambda r: abs(_eq_residual(r, a, b, c, d, keq)))
        else:
            x = _bisect_extent(a, b, c, d, keq, lo, hi)
    return min(max(x, lo), hi)


def _eq_residual(x, a, b, c, d, keq):
    return keq * (a - x) * (b - x) - (c + x) * (d + x)


def _bisect_extent(a, b, c, d, keq, lo, hi):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _eq_residual(mid, a, b, c, d, keq) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def equilibrium_extent(feed: Stream, T: float, p: KineticsParams) -> float:
    """Equilibrium extent of reaction (mol/s) for ``feed`` held at temperature ``T``."""
    return equilibrium_extent_flows(feed.flows, p.keq(T))


def advance(flows, extent: float) -> tuple[float, float, float, float]:
    """Outlet flows after ``extent`` mol/s of forward reaction."""
    return (
        max(flows[HOAC] - extent, 0.0),
        max(flows[MEOH] - extent, 0.0),
        max(flows[MEOAC] + extent, 0.0),
        max(flows[H2O] + extent, 0.0),
    )
