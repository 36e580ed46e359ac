"""Benchmark coefficients, sources, and potentials.

All randomness is counter-based: each epsilon-cell value is a pure hash
of (seed, row, column), so fields are bitwise reproducible across runs,
platforms, and any evaluation order.
"""
from __future__ import annotations

import numpy as np

from .fem import CoefficientField
from .grid import Domain

__all__ = [
    "coefficient_a1",
    "coefficient_a2",
    "source",
    "gpe_potential",
    "save_grid",
    "load_grid",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(x: np.ndarray) -> np.ndarray:
    """Finalizer of the splitmix64 sequence (vectorized, modulo 2^64)."""
    with np.errstate(over="ignore"):
        x = (x + _GOLDEN).astype(np.uint64)
        x = ((x ^ (x >> np.uint64(30))) * _MIX1).astype(np.uint64)
        x = ((x ^ (x >> np.uint64(27))) * _MIX2).astype(np.uint64)
        return x ^ (x >> np.uint64(31))


def _cell_uniform(seed: int, m: int) -> np.ndarray:
    """(m, m) array of uniforms on [0, 1), keyed cell-by-cell."""
    i, j = np.meshgrid(np.arange(m, dtype=np.uint64),
                       np.arange(m, dtype=np.uint64), indexing="ij")
    h = _mix(_mix(_mix(np.uint64(seed)) + i) + j)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


_PARABOLA_SAMPLES = 4097


def _parabola_distance(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Distance from points to the curve y = (2x-1)^2, x in [0, 1].

    Evaluated against a fixed dense sampling of the curve; the sampling
    is part of the field definition, keeping inclusion masks bitwise
    stable.
    """
    t = np.linspace(0.0, 1.0, _PARABOLA_SAMPLES)
    cx, cy = t, (2.0 * t - 1.0) ** 2
    out = np.empty(px.shape)
    flat_x, flat_y = px.ravel(), py.ravel()
    chunk = 2048
    res = np.empty(flat_x.shape)
    for lo in range(0, len(flat_x), chunk):
        hi = min(lo + chunk, len(flat_x))
        d2 = (flat_x[lo:hi, None] - cx) ** 2 + (flat_y[lo:hi, None] - cy) ** 2
        res[lo:hi] = np.sqrt(d2.min(axis=1))
    return res.reshape(px.shape)


def coefficient_a1(
    m: int, seed: int = 0, inclusion_value: float = 2.0
) -> CoefficientField:
    """Random checkerboard on the unit square with a parabola inclusion.

    Cells whose midpoint lies within 4 eps (eps = 1/m) of the curve
    y = (2x-1)^2 take inclusion_value; all others draw independently
    from the uniform distribution on [0.1, 1).
    """
    if m < 4:
        raise ValueError(f"checkerboard needs at least 4 cells per side, got m={m}")
    eps = 1.0 / m
    u = _cell_uniform(seed, m)
    values = 0.1 + 0.9 * u  # [0.1, 1)
    mid = (np.arange(m) + 0.5) * eps
    px, py = np.meshgrid(mid, mid)  # values[iy, ix] convention
    dist = _parabola_distance(px, py)
    values = np.asarray(values)
    # _cell_uniform used (i=row, j=col) = (iy, ix) indexing already
    values[dist <= 4.0 * eps] = inclusion_value
    return CoefficientField(Domain(), values)


def coefficient_a2(m: int = 64, seed: int = 1) -> CoefficientField:
    """Random checkerboard on the unit square without inclusion."""
    if m < 1:
        raise ValueError(f"checkerboard needs at least one cell, got m={m}")
    values = 0.1 + 0.9 * _cell_uniform(seed, m)
    return CoefficientField(Domain(), values)


def inclusion_mask(m: int) -> np.ndarray:
    """Boolean (m, m) mask of the parabola inclusion cells of A1."""
    eps = 1.0 / m
    mid = (np.arange(m) + 0.5) * eps
    px, py = np.meshgrid(mid, mid)
    return _parabola_distance(px, py) <= 4.0 * eps


def source(name: str):
    """Named right-hand sides; callables of (x, y) arrays."""
    if name == "f1":
        return lambda x, y: 2.0 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
    if name == "f2":
        return lambda x, y: np.ones_like(np.asarray(x, dtype=float))
    if name == "f3":

        def bump(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            rho2 = ((x - 0.125) ** 2 + (y - 0.125) ** 2) / 0.05**2
            out = np.zeros_like(rho2)
            inside = rho2 < 1.0
            out[inside] = 1e4 * np.exp(-1.0 / (1.0 - rho2[inside]))
            return out

        return bump
    raise ValueError(f"unknown source {name!r}; expected f1, f2, or f3")


def tent(t: np.ndarray) -> np.ndarray:
    """Periodic unit tent: 0 at integers, 1 at half-integers."""
    frac = np.asarray(t, dtype=float) % 1.0
    return 1.0 - np.abs(2.0 * frac - 1.0)


def gpe_potential(m: int, amplitude: float = 40.0) -> CoefficientField:
    """Harmonic trap plus tent lattice on (-6, 6)^2, cellwise midpoints."""
    dom = Domain(-6.0, -6.0, 12.0)
    mid = dom.x0 + (np.arange(m) + 0.5) * (dom.side / m)
    px, py = np.meshgrid(mid, mid)
    values = 0.5 * (px**2 + py**2) + amplitude * tent(px) * tent(py)
    return CoefficientField(dom, values)


def save_grid(path, field: CoefficientField) -> None:
    """Plain-text grid: line 1 m, line 2 domain, then m rows of m values."""
    with open(path, "w") as fh:
        fh.write(f"{field.m}\n")
        fh.write(f"{field.domain.x0:.17g} {field.domain.y0:.17g} "
                 f"{field.domain.side:.17g}\n")
        for row in field.values:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_grid(path) -> CoefficientField:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 4:
        raise ValueError(f"{path}: truncated grid file")
    m = int(tokens[0])
    x0, y0, side = (float(t) for t in tokens[1:4])
    vals = np.array([float(t) for t in tokens[4:]])
    if vals.size != m * m:
        raise ValueError(
            f"{path}: expected {m * m} values for m={m}, found {vals.size}"
        )
    return CoefficientField(Domain(x0, y0, side), vals.reshape(m, m))
