"""Unit-operation models at two fidelity levels.

Every model maps an inlet :class:`~flowsynth.thermo.Stream` and a physical
design value to outlet streams plus a size metric used for costing. Models
never raise on bad numerics; they return ``feasible=False`` instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

from .thermo import (
    DEFAULT_THERMO,
    H2O,
    HOAC,
    MEOAC,
    MEOH,
    N_COMPONENTS,
    Stream,
    ThermoConfig,
    advance,
    equilibrium_extent_flows,
    extent_bounds,
    volatility_order,
)


class Fidelity(str, Enum):
    SHORTCUT = "shortcut"
    RIGOROUS = "rigorous"


PFR_LENGTH = (3.0, 10.0)  # m
COLUMN_DTF = (0.4, 0.6)
HEATER_T = (278.15, 330.05)  # K
SPLIT_RATIO = (0.1, 0.9)

_BOUND_TOL = 1e-9

# RK4 is stable on the negative real axis up to ~2.78; stay well inside.
_RK4_STABILITY = 2.0


def scale(raw: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return lo + (hi - lo) * raw


def unscale(value: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return (value - lo) / (hi - lo)


def _in_bounds(value: float, bounds: tuple[float, float]) -> bool:
    lo, hi = bounds
    tol = _BOUND_TOL * (hi - lo)
    return math.isfinite(value) and lo - tol <= value <= hi + tol


@dataclass(frozen=True)
class UnitConfig:
    rk4_steps: int = 200
    l_half: float = 3.0  # m, shortcut approach-to-equilibrium length
    column_stages: int = 35
    reflux_ratio: float = 1.5
    kremser_max_iter: int = 100


DEFAULT_UNITS = UnitConfig()


@dataclass(frozen=True)
class UnitResult:
    outlets: tuple[Stream, ...]
    size_metric: float = 0.0
    feasible: bool = True
    duty: float = 0.0  # W, heaters only

    @staticmethod
    def infeasible() -> "UnitResult":
        return UnitResult((), 0.0, False)


# --------------------------------------------------------------------------
# plug flow reactor


def pfr(inlet: Stream, length: float, fidelity: Fidelity,
        thermo: ThermoConfig = DEFAULT_THERMO, units: UnitConfig = DEFAULT_UNITS) -> UnitResult:
    """Isothermal PFR; cross-section in m2 is the inlet molar flow (mol/s) over 10."""
    if not _in_bounds(length, PFR_LENGTH):
        return UnitResult.infeasible()
    return _pfr_cached(inlet.flows, inlet.temperature, inlet.pressure, float(length),
                       Fidelity(fidelity), thermo, units)


@lru_cache(maxsize=65536)
def _pfr_cached(flows, T, P, length, fidelity, thermo, units):
    n_in = flows[0] + flows[1] + flows[2] + flows[3]
    if n_in <= 0.0:
        return UnitResult((Stream(T, flows, P),), 0.0, True)
    volume = n_in / 10.0 * length
    if fidelity is Fidelity.SHORTCUT:
        x_eq = equilibrium_extent_flows(flows, thermo.kinetics.keq(T))
        extent = x_eq * (1.0 - math.exp(-length / units.l_half))
    else:
        extent = integrate_extent(flows, T, volume, thermo, units.rk4_steps)
        if extent is None:
            return UnitResult.infeasible()
    out = advance(flows, extent)
    return UnitResult((Stream(T, out, P),), volume, True)


def integrate_extent(flows, T: float, volume: float, thermo: ThermoConfig, steps: int):
    """Integrate d(extent)/dV = r(c) with RK4 over ``volume``.

    Uses ``steps`` fixed steps unless a step exceeds the RK4 stability limit,
    in which case it is subdivided. Integration stops early once the extent
    no longer changes at working precision (the equilibrium fixed point).
    Returns ``None`` on a non-finite state.
    """
    a, b, c, d = flows
    n_in = a + b + c + d
    vdot = n_in / thermo.molar_density
    kin = thermo.kinetics
    kk = kin.rate_constant(T) / (vdot * vdot)
    inv_k = 1.0 / kin.keq(T)
    lo, hi = extent_bounds(flows)
    if not (math.isfinite(kk) and math.isfinite(inv_k)):
        return None

    def f(x):
        return kk * ((a - x) * (b - x) - (c + x) * (d + x) * inv_k)

    def jac(x):
        return kk * ((2.0 * x - a - b) - (c + d + 2.0 * x) * inv_k)

    scale_x = max(hi - lo, 1e-300)
    x = 0.0
    big_h = volume / steps
    substeps = 0
    max_substeps = 1000 * steps
    for i in range(steps):
        t = i * big_h
        t_end = (i + 1) * big_h
        while t < t_end:
            h = t_end - t
            j = abs(jac(x))
            if h * j > _RK4_STABILITY:
                h = _RK4_STABILITY / j
            k1 = f(x)
            k2 = f(x + 0.5 * h * k1)
            k3 = f(x + 0.5 * h * k2)
            k4 = f(x + h * k3)
            x_new = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not math.isfinite(x_new):
                return None
            x_new = min(max(x_new, lo), hi)
            if abs(x_new - x) <= 1e-15 * scale_x:
                return x_new
            x = x_new
            t += h
            substeps += 1
            if substeps > max_substeps:
                return None
    return x


# --------------------------------------------------------------------------
# distillation column


def kremser_recovery(s: float, n_stages: int) -> float:
    """Fraction of a component leaving with the top product for factor ``s``."""
    if s <= 0.0:
        return 0.0
    if abs(s - 1.0) < 1e-9:
        return n_stages / (n_stages + 1.0)
    if s > 1.0:
        inv = 1.0 / s
        return (1.0 - inv ** n_stages) / (1.0 - inv ** (n_stages + 1))
    return (s - s ** (n_stages + 1)) / (1.0 - s ** (n_stages + 1))


def _solve_recoveries(flows, alphas, target, units: UnitConfig, members):
    """Bisect the reference-component factor so recovered top flow hits ``target``.

    Only components in ``members`` take part. Returns per-component recoveries.
    """
    n = units.column_stages
    ratio = (units.reflux_ratio + 1.0) / units.reflux_ratio
    total = sum(flows[i] for i in members)
    rec = [0.0] * N_COMPONENTS
    if total <= 0.0 or target <= 0.0:
        return rec
    if target >= total:
        for i in members:
            rec[i] = 1.0
        return rec

    def top(u):
        kappa = math.exp(u)
        return sum(kremser_recovery(alphas[i] * kappa * ratio, n) * flows[i] for i in members)

    lo, hi = -60.0, 60.0
    tol = 1e-12 * total
    u = 0.0
    for _ in range(units.kremser_max_iter):
        u = 0.5 * (lo + hi)
        resid = top(u) - target
        if abs(resid) < tol:
            break
        if resid > 0:
            hi = u
        else:
            lo = u
    kappa = math.exp(u)
    for i in members:
        rec[i] = kremser_recovery(alphas[i] * kappa * ratio, n)
    return rec


def column(inlet: Stream, dtf: float, fidelity: Fidelity,
           thermo: ThermoConfig = DEFAULT_THERMO, units: UnitConfig = DEFAULT_UNITS) -> UnitResult:
    """Column with distillate-to-feed ratio ``dtf``; outlets are (distillate, bottoms)."""
    if not _in_bounds(dtf, COLUMN_DTF):
        return UnitResult.infeasible()
    return _column_cached(inlet.flows, inlet.temperature, inlet.pressure, float(dtf),
                          Fidelity(fidelity), thermo, units)


@lru_cache(maxsize=65536)
def _column_cached(flows, T, P, dtf, fidelity, thermo, units):
    total = flows[0] + flows[1] + flows[2] + flows[3]
    target = dtf * total
    if fidelity is Fidelity.SHORTCUT:
        order = volatility_order(thermo)
        dist = sorted_spill(flows, target, order)
        boundary = next((i for i in reversed(order) if dist[i] > 0.0), None)
        dist = _enforce_total(dist, flows, target, boundary)
    else:
        dist = _enforce_total(kremser_split(flows, target, thermo, units), flows, target)
    bott = tuple(max(f - x, 0.0) for f, x in zip(flows, dist))
    v = target * (units.reflux_ratio + 1.0)
    return UnitResult((Stream(T, dist, P), Stream(T, bott, P)), v, True)


def sorted_spill(flows, target: float, order) -> tuple[float, ...]:
    """Fill the distillate in volatility order until it holds ``target`` mol/s."""
    dist = [0.0] * N_COMPONENTS
    remaining = target
    for i in order:
        take = min(flows[i], remaining)
        dist[i] = take
        remaining -= take
        if remaining <= 0.0:
            break
    return tuple(dist)


def kremser_split(flows, target: float, thermo: ThermoConfig, units: UnitConfig) -> tuple[float, ...]:
    alphas = thermo.volatilities
    everyone = range(N_COMPONENTS)
    rec = _solve_recoveries(flows, alphas, target, units, everyone)
    dist = [r * f for r, f in zip(rec, flows)]
    cap = thermo.azeotrope_cap
    if target > 0.0 and dist[MEOAC] > cap * target:
        others = [i for i in everyone if i != MEOAC]
        other_total = sum(flows[i] for i in others)
        meoac_top = max(cap * target, target - other_total)
        rec = _solve_recoveries(flows, alphas, target - meoac_top, units, others)
        dist = [rec[i] * flows[i] for i in everyone]
        dist[MEOAC] = meoac_top
    return tuple(dist)


def _enforce_total(dist, flows, target, prefer=None):
    """Absorb bisection and rounding residue so the distillate sums to ``target``.

    The residue goes to ``prefer`` (the sorted-spill boundary component) when
    it has room, otherwise to the component with the most headroom.
    """
    if sum(dist) <= 0.0 or target <= 0.0:
        return tuple(0.0 for _ in dist)
    out = list(dist)
    for _ in range(8):
        resid = target - sum(out)
        if resid == 0.0:
            return tuple(out)
        if resid > 0:
            room = lambda i: flows[i] - out[i]
        else:
            room = lambda i: out[i]
        j = prefer if prefer is not None and room(prefer) >= abs(resid) else max(range(N_COMPONENTS), key=room)
        out[j] = min(max(out[j] + resid, 0.0), flows[j])
    _nudge(out, flows, target, prefer)
    return tuple(out)


def _nudge(out, flows, target, prefer):
    # last-ulp search; when the fixed part of the sum sits on a rounding tie
    # no single-component move hits target and we stay one ulp away
    if sum(out) == target:
        return
    step = math.ulp(target) / 4.0
    order = sorted((i for i in range(N_COMPONENTS) if out[i] > 0.0), key=lambda i: (i != prefer, -out[i]))
    for j in order:
        base = out[j]
        for k in range(1, 17):
            for cand in (base + k * step, base - k * step):
                if 0.0 <= cand <= flows[j]:
                    out[j] = cand
                    if sum(out) == target:
                        return
        out[j] = base


# --------------------------------------------------------------------------
# heater, splitter, mixer


def heater(inlet: Stream, t_out: float, thermo: ThermoConfig = DEFAULT_THERMO) -> UnitResult:
    """Set the outlet temperature; duty is signed (negative means cooling)."""
    if not _in_bounds(t_out, HEATER_T):
        return UnitResult.infeasible()
    cps = thermo.heat_capacities
    q = sum(f * cp for f, cp in zip(inlet.flows, cps)) * (t_out - inlet.temperature)
    return UnitResult((Stream(t_out, inlet.flows, inlet.pressure),), abs(q), True, q)


def split(inlet: Stream, ratio: float) -> UnitResult:
    """Outlets are (recycle, purge) with ``ratio`` of the inlet sent to recycle."""
    if not _in_bounds(ratio, SPLIT_RATIO):
        return UnitResult.infeasible()
    rec = tuple(ratio * f for f in inlet.flows)
    purge = tuple(f - r for f, r in zip(inlet.flows, rec))
    T, P = inlet.temperature, inlet.pressure
    return UnitResult((Stream(T, rec, P), Stream(T, purge, P)), 0.0, True)


def split_mix(inlet: Stream, ratio: float) -> tuple[Stream, Stream]:
    res = split(inlet, ratio)
    if not res.feasible:
        raise ValueError(f"split ratio {ratio} outside {SPLIT_RATIO}")
    return res.outlets[0], res.outlets[1]


def mix(*streams: Stream) -> Stream:
    """Add component flows; temperature is the flow-weighted mean."""
    flows = [0.0] * N_COMPONENTS
    weighted_t = 0.0
    total = 0.0
    for s in streams:
        n = s.total
        for i, f in enumerate(s.flows):
            flows[i] += f
        weighted_t += n * s.temperature
        total += n
    T = weighted_t / total if total > 0 else streams[0].temperature
    return Stream(T, tuple(flows), streams[0].pressure)


def clear_caches():
    _pfr_cached.cache_clear()
    _column_cached.cache_clear()


__all__ = [
    "COLUMN_DTF", "Fidelity", "HEATER_T", "PFR_LENGTH", "SPLIT_RATIO", "UnitConfig",
    "UnitResult", "column", "heater", "kremser_recovery", "mix", "pfr", "scale",
    "sorted_spill", "split", "split_mix", "unscale", "HOAC", "MEOH", "MEOAC", "H2O",
]
