"""Experiment runner: mesh-size sweeps, patch-radius decay studies, and
wave/ground-state demos, with deterministic CSV emission and EOC fitting.

Records never carry timings: a re-run of the same configuration must
reproduce its CSV bitwise, so wall-clock diagnostics go to stderr only.
"""
from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .constraints import ConstraintSpace, span_residual
from .corrector import LodBasis, assemble_basis, build_bundle
from .fem import (
    CoefficientField,
    FeSpace,
    assemble_mass,
    assemble_stiffness,
    interpolate,
    solve_reference,
)
from .gpe import GpeProblem, gpe_bundle, gpe_errors, ground_state, reference_ground_state
from .grid import build_mesh, refine
from .helmholtz import (
    HelmholtzProblem,
    assemble_helmholtz,
    helmholtz_bundle,
    kappa_norm_matrix,
    solve_fine,
)
from .interp import build_interpolator
from .linalg import solve_general
from .lodsolve import assemble_coarse, coarse_load, global_basis, relative_errors, solve_lod
from .problems import coefficient_a1, coefficient_a2, gpe_potential, load_grid, source

__all__ = [
    "FLOOR",
    "ELLIPTIC_COLUMNS",
    "HELMHOLTZ_COLUMNS",
    "GPE_COLUMNS",
    "ExperimentConfig",
    "ExperimentRecord",
    "build_coefficient",
    "fit_eoc",
    "decay_factor",
    "run_convergence",
    "run_decay",
    "run_helmholtz",
    "run_gpe",
    "write_csv",
]

FLOOR = 1e-9  # direct-solver noise level for relative errors

ELLIPTIC_COLUMNS = [
    "problem", "mode", "p", "H", "ell", "fine_h", "fine_q", "coeff", "source",
    "seed", "coarse_dofs", "fine_dofs", "err_energy_rel", "err_l2_rel", "floor",
]
HELMHOLTZ_COLUMNS = [
    "problem", "mode", "p", "H", "ell", "fine_h", "fine_q", "coeff", "vcoeff",
    "source", "seed", "kappa", "sigma", "coarse_dofs", "fine_dofs",
    "err_kappa_rel", "floor",
]
GPE_COLUMNS = [
    "problem", "mode", "p", "H", "ell", "fine_h", "fine_q", "coeff", "seed",
    "kappa_g", "coarse_dofs", "fine_dofs", "E", "lam", "err_h1", "err_l2",
    "err_E", "err_lambda", "iterations", "floor",
]


@dataclass
class ExperimentConfig:
    """Flat description of one study; lists sweep the coarse scale and patch radius."""

    problem: str
    mode: str = "dg"
    p: int = 1
    hs: list = field(default_factory=list)  # Fractions, coarse mesh sizes
    ells: list = field(default_factory=list)  # ints or the string "global"
    fine_h: Fraction = Fraction(1, 128)
    fine_q: int = 1
    coeff: str = "a1:m=32"
    vcoeff: str = "const:value=1"
    source: str = "f1"
    seed: int = 0
    kappa: float = 16.0
    sigma: float = 1.0
    kappa_g: float = 100.0
    out: str | None = None
    threads: int = 1
    drop_tol: float | None = None


@dataclass
class ExperimentRecord:
    """One cell of a sweep: a complete row, or an error tag for the CSV."""

    row: dict
    tag: str
    error: str | None = None
    wall_ms: float = 0.0  # diagnostic only, never serialized


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _parse_kv(rest: str) -> dict:
    out = {}
    for part in rest.split(","):
        if not part:
            continue
        key, sep, val = part.partition("=")
        if not sep:
            raise ValueError(f"malformed coefficient option {part!r}")
        out[key.strip()] = val.strip()
    return out


def build_coefficient(spec: str, seed: int = 0, domain=None):
    """Coefficient fields from compact specs like ``a1:m=32,seed=7``.

    Returns (field, effective_seed).  An explicit ``seed=`` inside the
    spec wins over the seed argument.
    """
    name, _, rest = spec.partition(":")
    kv = _parse_kv(rest)
    if name == "a1":
        s = int(kv.get("seed", seed))
        return (
            coefficient_a1(
                int(kv.get("m", 32)), seed=s,
                inclusion_value=float(kv.get("inclusion", 2.0)),
            ),
            s,
        )
    if name == "a2":
        s = int(kv.get("seed", seed))
        return coefficient_a2(int(kv.get("m", 64)), seed=s), s
    if name == "const":
        dom = domain
        if "side" in kv:
            from .grid import Domain

            dom = Domain(
                float(kv.get("x0", 0.0)), float(kv.get("y0", 0.0)), float(kv["side"])
            )
        return CoefficientField.constant(float(kv.get("value", 1.0)), dom), seed
    if name == "trap":
        return (
            gpe_potential(int(kv.get("m", 96)), amplitude=float(kv.get("amplitude", 40.0))),
            seed,
        )
    if name == "file":
        if "path" not in kv:
            raise ValueError("file coefficient spec needs path=...")
        return load_grid(kv["path"]), seed
    raise ValueError(f"unknown coefficient spec {spec!r}")


def _as_count(value: Fraction, what: str) -> int:
    if value.denominator != 1 or value < 1:
        raise ValueError(f"{what} must give a whole positive cell count, got {value}")
    return int(value)


def _cell_geometry(domain, h_coarse: Fraction, fine_h: Fraction) -> tuple[int, int]:
    side = Fraction(domain.side)
    n = _as_count(side / h_coarse, f"coarse size {h_coarse}")
    r = _as_count(h_coarse / fine_h, f"refinement {h_coarse}/{fine_h}")
    return n, r


def _build_basis(bundle, space, ih, ell, n, threads, drop_tol) -> LodBasis:
    if ell == "global" or (isinstance(ell, int) and ell >= n - 1):
        return global_basis(bundle, space)
    return assemble_basis(
        bundle, space, ih, ell=ell, workers=threads, drop_tol=drop_tol
    )


def fit_eoc(hs, errs) -> float | None:
    """Least-squares slope of log error against log H, pre-plateau window.

    The window keeps records whose error exceeds 10x the smallest observed
    error, discarding the solver-floor plateau; fewer than two surviving
    points mean no rate can be fitted.
    """
    hs = np.asarray([float(h) for h in hs], dtype=float)
    errs = np.asarray(errs, dtype=float)
    good = np.isfinite(errs) & (errs > 0)
    hs, errs = hs[good], errs[good]
    if len(errs) < 2:
        return None
    keep = errs > 10.0 * errs.min()
    if keep.sum() < 2:
        return None
    slope = np.polyfit(np.log(hs[keep]), np.log(errs[keep]), 1)[0]
    return float(slope)


def decay_factor(errs, floor: float = FLOOR) -> float | None:
    """Geometric mean of successive error ratios above the solver floor."""
    vals = [float(e) for e in errs if np.isfinite(e) and e > floor]
    if len(vals) < 2:
        return None
    return float((vals[-1] / vals[0]) ** (1.0 / (len(vals) - 1)))


def _fmt(value) -> str:
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return format(value, ".16g")
    return str(value)


def write_csv(path: str | None, columns, records, comments=()) -> None:
    """Header row, one line per record (error tags as comments), then notes.

    Values use 16 significant digits; mesh sizes stay exact rationals.
    A path of None or "-" writes to stdout.
    """
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        if rec.error is not None:
            buf.write(f"# error {rec.tag}: {rec.error}\n")
        else:
            writer.writerow([_fmt(rec.row[c]) for c in columns])
    for line in comments:
        buf.write(f"# {line}\n")
    text = buf.getvalue()
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _fine_space(domain, fine_h: Fraction, q: int, bc: str) -> FeSpace:
    n_fine = _as_count(Fraction(domain.side) / fine_h, "fine grid")
    return FeSpace(refine(build_mesh(n_fine, domain), 1), q=q, bc=bc)


def _scalar_params(cfg: ExperimentConfig, h, ell, seed_eff: int) -> dict:
    return {
        "problem": cfg.problem,
        "mode": cfg.mode,
        "p": cfg.p,
        "H": h,
        "ell": ell,
        "fine_h": cfg.fine_h,
        "fine_q": cfg.fine_q,
        "coeff": cfg.coeff,
        "source": cfg.source,
        "seed": seed_eff,
    }


def _sweep(cfg: ExperimentConfig, domain, cell):
    """Run cell(h, n, r, ell) over the (H, ell) grid, catching per-cell failures."""
    records = []
    for h in cfg.hs:
        try:
            n, r = _cell_geometry(domain, h, cfg.fine_h)
        except Exception as err:
            for ell in cfg.ells:
                records.append(ExperimentRecord({}, f"H={h} ell={ell}", error=str(err)))
            continue
        for ell in cfg.ells:
            tag = f"H={h} ell={ell}"
            t0 = time.perf_counter()
            try:
                row = cell(h, n, r, ell)
            except Exception as err:
                records.append(ExperimentRecord({}, tag, error=str(err)))
                _log(f"cell {tag} failed: {err}")
                continue
            wall = (time.perf_counter() - t0) * 1000.0
            records.append(ExperimentRecord(row, tag, wall_ms=wall))
            _log(f"cell {tag}: {wall:.0f} ms")
    return records


def _eoc_comments(records, metric: str, ells) -> list[str]:
    comments = []
    for ell in ells:
        cells = [
            r for r in records if r.error is None and r.row["ell"] == ell
        ]
        if len(cells) < 2:
            continue  # single mesh size: records only, no rate
        rate = fit_eoc([r.row["H"] for r in cells], [r.row[metric] for r in cells])
        shown = "nan" if rate is None else format(rate, ".16g")
        comments.append(f"eoc {metric} ell={ell}: {shown}")
    return comments


def run_convergence(cfg: ExperimentConfig):
    """Coarse-mesh sweep against one shared fine reference."""
    coeff, seed_eff = build_coefficient(cfg.coeff, cfg.seed)
    if coeff.bounds[0] <= 0:
        raise ValueError("elliptic studies need a uniformly positive coefficient")
    dom = coeff.domain
    f = source(cfg.source)
    fe_fine = _fine_space(dom, cfg.fine_h, cfg.fine_q, "dirichlet-zero")
    t0 = time.perf_counter()
    u_ref = solve_reference(fe_fine, coeff, f)
    mats = {
        "energy": assemble_stiffness(fe_fine, coeff),
        "l2": assemble_mass(fe_fine),
    }
    _log(f"fine reference ({fe_fine.n_dofs} dofs): {time.perf_counter() - t0:.1f} s")

    def cell(h, n, r, ell):
        ref = refine(build_mesh(n, dom), r)
        fe = FeSpace(ref, q=cfg.fine_q, bc="dirichlet-zero")
        space = ConstraintSpace(cfg.mode, cfg.p, ref)
        ih = build_interpolator(space, fe)
        bundle = build_bundle(fe, coeff)
        basis = _build_basis(bundle, space, ih, ell, n, cfg.threads, cfg.drop_tol)
        sol = solve_lod(bundle, basis, f)
        errs = relative_errors(sol.function.values, u_ref.values, mats)
        row = _scalar_params(cfg, h, ell, seed_eff)
        row.update(
            coarse_dofs=space.J,
            fine_dofs=fe.n_dofs,
            err_energy_rel=errs["energy"],
            err_l2_rel=errs["l2"],
            floor=errs["energy"] <= FLOOR,
        )
        return row

    records = _sweep(cfg, dom, cell)
    comments = _eoc_comments(records, "err_energy_rel", cfg.ells)
    return records, comments


def run_decay(cfg: ExperimentConfig):
    """Patch-radius sweep at one coarse scale; source must lie in the
    constraint span so that only the localization error remains."""
    if len(cfg.hs) != 1:
        raise ValueError("decay studies use exactly one coarse mesh size")
    coeff, seed_eff = build_coefficient(cfg.coeff, cfg.seed)
    if coeff.bounds[0] <= 0:
        raise ValueError("elliptic studies need a uniformly positive coefficient")
    dom = coeff.domain
    f = source(cfg.source)
    h = cfg.hs[0]
    n, r = _cell_geometry(dom, h, cfg.fine_h)
    ref = refine(build_mesh(n, dom), r)
    fe = FeSpace(ref, q=cfg.fine_q, bc="dirichlet-zero")
    space = ConstraintSpace(cfg.mode, cfg.p, ref)
    f_vals = interpolate(fe, f).values
    mass = assemble_mass(fe)
    res = span_residual(space, fe, f_vals)
    scale = float(np.sqrt(f_vals @ (mass @ f_vals)))
    if res > 1e-8 * max(scale, 1e-300):
        raise ValueError(
            "decay studies need a source inside the constraint span "
            f"(relative distance {res / max(scale, 1e-300):.2e})"
        )
    fe_fine = _fine_space(dom, cfg.fine_h, cfg.fine_q, "dirichlet-zero")
    u_ref = solve_reference(fe_fine, coeff, f)
    mats = {
        "energy": assemble_stiffness(fe_fine, coeff),
        "l2": assemble_mass(fe_fine),
    }
    ih = build_interpolator(space, fe)
    bundle = build_bundle(fe, coeff)

    def cell(h_, n_, r_, ell):
        basis = _build_basis(bundle, space, ih, ell, n_, cfg.threads, cfg.drop_tol)
        sol = solve_lod(bundle, basis, f)
        errs = relative_errors(sol.function.values, u_ref.values, mats)
        row = _scalar_params(cfg, h_, ell, seed_eff)
        row.update(
            coarse_dofs=space.J,
            fine_dofs=fe.n_dofs,
            err_energy_rel=errs["energy"],
            err_l2_rel=errs["l2"],
            floor=errs["energy"] <= FLOOR,
        )
        return row

    records = _sweep(cfg, dom, cell)
    good = [r for r in records if r.error is None]
    comments = []
    factor = decay_factor([r.row["err_energy_rel"] for r in good])
    if factor is not None:
        comments.append(f"decay-factor err_energy_rel: {factor:.16g}")
    return records, comments


def run_helmholtz(cfg: ExperimentConfig):
    """Wave study: coarse Petrov-Galerkin solves against one fine solve."""
    coeff, seed_eff = build_coefficient(cfg.coeff, cfg.seed)
    dom = coeff.domain
    vfield, _ = build_coefficient(cfg.vcoeff, cfg.seed, domain=dom)
    f = source(cfg.source)
    prob = HelmholtzProblem(coeff, vfield, cfg.sigma, cfg.kappa, f)
    fe_fine = _fine_space(dom, cfg.fine_h, cfg.fine_q, "robin")
    t0 = time.perf_counter()
    system_fine = assemble_helmholtz(fe_fine, prob)
    u_ref = solve_fine(system_fine, prob)
    knorm = kappa_norm_matrix(system_fine)
    denom = float(np.sqrt(np.real(np.vdot(u_ref, knorm @ u_ref))))
    load = assemble_mass(fe_fine) @ interpolate(fe_fine, f).values.astype(complex)
    _log(f"fine wave reference ({fe_fine.n_dofs} dofs): {time.perf_counter() - t0:.1f} s")

    def cell(h, n, r, ell):
        ref = refine(build_mesh(n, dom), r)
        fe = FeSpace(ref, q=cfg.fine_q, bc="robin")
        space = ConstraintSpace(cfg.mode, cfg.p, ref)
        ih = build_interpolator(space, fe)
        bundle = helmholtz_bundle(fe, prob)
        basis = _build_basis(bundle, space, ih, ell, n, cfg.threads, cfg.drop_tol)
        coarse = assemble_coarse(basis, bundle.matrix)
        coeffs = solve_general(coarse, coarse_load(basis, load))
        values = np.asarray(basis.phi @ coeffs).ravel()
        diff = values - u_ref
        err = float(np.sqrt(max(np.real(np.vdot(diff, knorm @ diff)), 0.0)) / denom)
        row = _scalar_params(cfg, h, ell, seed_eff)
        row.update(
            vcoeff=cfg.vcoeff,
            kappa=cfg.kappa,
            sigma=cfg.sigma,
            coarse_dofs=space.J,
            fine_dofs=fe.n_dofs,
            err_kappa_rel=err,
            floor=err <= FLOOR,
        )
        return row

    records = _sweep(cfg, dom, cell)
    comments = _eoc_comments(records, "err_kappa_rel", cfg.ells)
    return records, comments


def run_gpe(cfg: ExperimentConfig):
    """Ground-state study: coarse flows against one fine reference flow.

    Cells are warm-started from the previous cell's state in sweep order,
    which keeps the run deterministic for a fixed configuration.
    """
    pot, seed_eff = build_coefficient(cfg.coeff, cfg.seed)
    dom = pot.domain
    prob = GpeProblem(pot, cfg.kappa_g)
    fe_fine = _fine_space(dom, cfg.fine_h, cfg.fine_q, "dirichlet-zero")
    t0 = time.perf_counter()
    reference = reference_ground_state(fe_fine, prob)
    _log(
        f"fine ground state ({fe_fine.n_dofs} dofs): {reference.iterations} "
        f"iterations, {time.perf_counter() - t0:.1f} s"
    )
    warm: dict = {"u": None}

    def cell(h, n, r, ell):
        ref = refine(build_mesh(n, dom), r)
        fe = FeSpace(ref, q=cfg.fine_q, bc="dirichlet-zero")
        space = ConstraintSpace(cfg.mode, cfg.p, ref)
        ih = build_interpolator(space, fe)
        bundle = gpe_bundle(fe, prob)
        basis = _build_basis(bundle, space, ih, ell, n, cfg.threads, cfg.drop_tol)
        gs = ground_state(bundle, basis, prob, initial=warm["u"])
        errs = gpe_errors(gs, reference)
        warm["u"] = gs.function.values
        row = _scalar_params(cfg, h, ell, seed_eff)
        row.pop("source")
        row.update(
            kappa_g=cfg.kappa_g,
            coarse_dofs=space.J,
            fine_dofs=fe.n_dofs,
            E=gs.energy,
            lam=gs.eigenvalue,
            err_h1=errs["err_h1"],
            err_l2=errs["err_l2"],
            err_E=errs["err_E"],
            err_lambda=errs["err_lambda"],
            iterations=gs.iterations,
            floor=errs["err_h1"] <= FLOOR,
        )
        return row

    records = _sweep(cfg, dom, cell)
    comments = []
    for metric in ("err_h1", "err_l2", "err_E", "err_lambda"):
        comments.extend(_eoc_comments(records, metric, cfg.ells))
    return records, comments
