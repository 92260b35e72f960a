"""Experiment runner: scalability, optimality and robustness studies.

Each study assembles the time-step interface system, solves it with the
preconditioned CG solver and emits one CSV row per solve with the fixed
column set ``CSV_HEADER``.  Conditioning studies draw right-hand sides
uniformly from (-1, 1) (projected onto the compatible subspace) so that
the Lanczos estimates probe the full excited spectrum; the time-stepping
route (previous potential + ionic state) remains available through
:func:`imex_rhs`.
"""

import csv
import dataclasses
import io
import math
import time

import numpy as np

from .assembly import (
    MembraneState,
    ModelParams,
    assemble_rhs,
    assemble_system,
    project_compatible,
)
from .bddc import BddcPreconditioner
from .errors import ConfigError, ConstraintError, VerificationError
from .femspace import PrimalVariant, build_composite_space, build_primal_constraints
from .geometry import MeshConfig, build_mesh, extract_interfaces
from .krylov import pcg
from .schur import condense
from . import denseref

__all__ = [
    "CSV_HEADER",
    "ExperimentConfig",
    "ResultRow",
    "Problem",
    "build_problem",
    "make_preconditioner",
    "imex_rhs",
    "solve_interface",
    "run_solve",
    "run_weak_scaling",
    "run_refinement",
    "run_random_rhs",
    "run_random_sigma",
    "run_verify",
    "run_experiment",
    "write_csv",
]

CSV_HEADER = (
    "cells",
    "subdomains",
    "global_dofs",
    "primal_space",
    "iterations",
    "kappa_est",
    "coarse_dim",
    "solve_ms",
    "seed",
    "sigma_summary",
)

WEAK_SCALING_GRIDS = ((2, 2, 1), (2, 2, 2), (3, 3, 2), (3, 3, 3))
REFINEMENT_LEVELS = (0, 1, 2, 3)

_EXPERIMENTS = (
    "solve",
    "weak_scaling",
    "refinement",
    "random_rhs",
    "random_sigma",
    "verify",
)


def _strict_kwargs(cls, data, where):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) under '{where}': {', '.join(unknown)}")
    return data


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one harness run."""

    experiment: str = "solve"
    mesh: MeshConfig = MeshConfig()
    params: ModelParams = ModelParams()
    variants: tuple = ("vef", "ve")
    tol: float = 1e-6
    stop: str = "rel"
    maxiter: int = 500
    sample_count: int = 100
    seed: int = 2026
    rhs: str = "random"
    grids: tuple = WEAK_SCALING_GRIDS
    levels: tuple = REFINEMENT_LEVELS
    out: str = ""

    def __post_init__(self):
        if self.experiment not in _EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment '{self.experiment}'; "
                f"expected one of {', '.join(_EXPERIMENTS)}"
            )
        if self.sample_count < 1:
            raise ConfigError("sample_count must be >= 1")
        if self.rhs not in ("random", "imex"):
            raise ConfigError(f"unknown rhs kind '{self.rhs}'")
        if not self.variants:
            raise ConfigError("at least one primal variant is required")
        for v in self.variants:
            try:
                PrimalVariant.parse(v)
            except ConstraintError as exc:
                raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        """Build a config from nested plain dictionaries, rejecting unknown keys."""
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a mapping")
        data = dict(data)
        mesh = data.pop("mesh", {})
        params = data.pop("params", {})
        if not isinstance(mesh, dict) or not isinstance(params, dict):
            raise ConfigError("'mesh' and 'params' must be mappings")
        mesh_cfg = MeshConfig(**_strict_kwargs(MeshConfig, mesh, "mesh"))
        if "sigma" in params and params["sigma"] is not None:
            params["sigma"] = tuple(params["sigma"])
        params_cfg = ModelParams(**_strict_kwargs(ModelParams, params, "params"))
        for key in ("variants", "grids", "levels"):
            if key in data:
                seq = data[key]
                if key == "grids":
                    seq = tuple(tuple(g) for g in seq)
                elif isinstance(seq, (list, tuple)):
                    seq = tuple(seq)
                else:
                    seq = (seq,)
                data[key] = seq
        kwargs = _strict_kwargs(cls, data, "config")
        return cls(mesh=mesh_cfg, params=params_cfg, **kwargs)


@dataclasses.dataclass(frozen=True)
class ResultRow:
    cells: str
    subdomains: int
    global_dofs: int
    primal_space: str
    iterations: int
    kappa_est: float
    coarse_dim: int
    solve_ms: float
    seed: int
    sigma_summary: str

    def as_csv(self) -> tuple:
        return (
            self.cells,
            str(self.subdomains),
            str(self.global_dofs),
            self.primal_space,
            str(self.iterations),
            f"{self.kappa_est:.10g}",
            str(self.coarse_dim),
            f"{self.solve_ms:.3f}",
            str(self.seed),
            self.sigma_summary,
        )


@dataclasses.dataclass
class Problem:
    """Assembled and condensed system, ready for preconditioning."""

    config: MeshConfig
    params: ModelParams
    mesh: object
    topo: object
    dofmap: object
    operators: object
    schur: object

    @property
    def cells_label(self) -> str:
        c = self.config
        return f"{c.cells_x}x{c.cells_y}x{c.cells_z}"

    def kernel_vector(self) -> np.ndarray:
        g = np.ones(self.dofmap.n_gamma)
        return g / np.linalg.norm(g)

    def sigma_summary(self) -> str:
        sig = self.operators.sigma
        intra = sig[1:]
        return (
            f"extra={sig[0]:.6g}"
            f"|intra_min={intra.min():.6g}"
            f"|intra_max={intra.max():.6g}"
        )


def build_problem(mesh_cfg: MeshConfig, params: ModelParams) -> Problem:
    mesh = build_mesh(mesh_cfg)
    topo = extract_interfaces(mesh)
    dofmap = build_composite_space(mesh, topo)
    operators = assemble_system(mesh, topo, dofmap, params)
    schur = condense(dofmap, operators.local_ops)
    return Problem(mesh_cfg, params, mesh, topo, dofmap, operators, schur)


def make_preconditioner(problem: Problem, variant) -> BddcPreconditioner:
    cset = build_primal_constraints(problem.dofmap, problem.topo, variant)
    return BddcPreconditioner(
        problem.dofmap, cset, problem.operators.local_ops, problem.operators.sigma
    )


def imex_rhs(problem: Problem, u_prev=None, state=None) -> np.ndarray:
    """Right-hand side of one implicit-explicit time step.

    Defaults to the documented resting start: zero previous potential and
    resting ionic state, which yields an identically zero (and compatible)
    load vector.
    """
    if u_prev is None:
        u_prev = np.zeros(problem.dofmap.n_global)
    if state is None:
        state = MembraneState.zeros(problem.topo)
    f = assemble_rhs(
        problem.mesh, problem.topo, problem.dofmap, problem.params, u_prev, state
    )
    return project_compatible(f)


def random_rhs(problem: Problem, rng) -> np.ndarray:
    return project_compatible(rng.uniform(-1.0, 1.0, problem.dofmap.n_global))


def solve_interface(problem, precond, f, *, tol, stop, maxiter):
    """Reduce, run preconditioned CG on the interface, recover interiors."""
    f_gamma = problem.schur.reduce_rhs(f)
    g = problem.kernel_vector()

    def proj(v):
        return v - g * (g @ v)

    x_gamma, report = pcg(
        problem.schur.apply,
        proj(f_gamma),
        precond.apply,
        tol=tol,
        stop=stop,
        maxiter=maxiter,
        project=proj,
    )
    u = problem.schur.recover_interior(x_gamma, f)
    return u, report


def _solve_row(problem, precond, f, config, variant, seed) -> ResultRow:
    t0 = time.perf_counter()
    _, report = solve_interface(
        problem, precond, f, tol=config.tol, stop=config.stop, maxiter=config.maxiter
    )
    ms = (time.perf_counter() - t0) * 1e3
    return ResultRow(
        cells=problem.cells_label,
        subdomains=problem.dofmap.n_substructures,
        global_dofs=problem.dofmap.n_global,
        primal_space=str(PrimalVariant.parse(variant).value),
        iterations=report.iterations,
        kappa_est=report.kappa_est,
        coarse_dim=precond.coarse_dim,
        solve_ms=ms,
        seed=seed,
        sigma_summary=problem.sigma_summary(),
    )


def _make_rhs(problem, config, rng):
    if config.rhs == "imex":
        return imex_rhs(problem)
    return random_rhs(problem, rng)


def run_solve(config: ExperimentConfig):
    problem = build_problem(config.mesh, config.params)
    rng = np.random.default_rng(config.seed)
    f = _make_rhs(problem, config, rng)
    rows = []
    for variant in config.variants:
        precond = make_preconditioner(problem, variant)
        rows.append(_solve_row(problem, precond, f, config, variant, config.seed))
    return rows


def run_weak_scaling(config: ExperimentConfig):
    """Fixed H/h, growing cell grid; one row per (grid, variant)."""
    rows = []
    for nx, ny, nz in config.grids:
        mesh_cfg = dataclasses.replace(
            config.mesh, cells_x=int(nx), cells_y=int(ny), cells_z=int(nz)
        )
        problem = build_problem(mesh_cfg, config.params)
        rng = np.random.default_rng(config.seed)
        f = _make_rhs(problem, config, rng)
        for variant in config.variants:
            precond = make_preconditioner(problem, variant)
            rows.append(_solve_row(problem, precond, f, config, variant, config.seed))
    return rows


def polylog_model(kappa0: float, hh0: float, hh: float) -> float:
    """(1 + log(H/h))^2 growth curve pinned to the first measurement."""
    c = kappa0 / (1.0 + math.log(hh0)) ** 2
    return c * (1.0 + math.log(hh)) ** 2


def run_refinement(config: ExperimentConfig):
    """Increasing H/h on a fixed grid; returns (rows, model_table).

    The model table carries the measured estimate next to the calibrated
    poly-logarithmic reference curve, one entry per (level, variant).
    """
    rows = []
    model = []
    first = {}
    for lev in config.levels:
        mesh_cfg = dataclasses.replace(config.mesh, refinement=int(lev))
        hh = mesh_cfg.base_resolution * 2 ** int(lev)
        problem = build_problem(mesh_cfg, config.params)
        rng = np.random.default_rng(config.seed)
        f = _make_rhs(problem, config, rng)
        for variant in config.variants:
            precond = make_preconditioner(problem, variant)
            row = _solve_row(problem, precond, f, config, variant, config.seed)
            rows.append(row)
            key = str(PrimalVariant.parse(variant).value)
            first.setdefault(key, (hh, row.kappa_est))
            hh0, k0 = first[key]
            model.append(
                {
                    "refinement": int(lev),
                    "hh": hh,
                    "primal_space": key,
                    "kappa_est": row.kappa_est,
                    "polylog_model": polylog_model(k0, hh0, hh),
                }
            )
    return rows, model


def run_random_rhs(config: ExperimentConfig):
    """Fixed operator, freshly drawn load vectors; returns (rows, summary).

    The same sample sequence is reused across primal variants so per-draw
    comparisons are meaningful.
    """
    problem = build_problem(config.mesh, config.params)
    rng = np.random.default_rng(config.seed)
    loads = [random_rhs(problem, rng) for _ in range(config.sample_count)]
    rows = []
    for variant in config.variants:
        precond = make_preconditioner(problem, variant)
        for f in loads:
            rows.append(_solve_row(problem, precond, f, config, variant, config.seed))
    summary = _summarize(rows)
    return rows, summary


def run_random_sigma(config: ExperimentConfig):
    """Conductivity robustness: every cell draws its conductivity from
    (1, 20) mS/cm while the extracellular bath keeps the configured value;
    operator and preconditioner are rebuilt per sample.  Returns
    (rows, summary)."""
    rng = np.random.default_rng(config.seed)
    n_cells = build_mesh(config.mesh).n_substructures - 1
    rows = []
    for _ in range(config.sample_count):
        draw = (config.params.sigma_extra,) + tuple(rng.uniform(1.0, 20.0, n_cells))
        params = dataclasses.replace(config.params, sigma=draw)
        problem = build_problem(config.mesh, params)
        f = random_rhs(problem, rng)
        for variant in config.variants:
            precond = make_preconditioner(problem, variant)
            rows.append(_solve_row(problem, precond, f, config, variant, config.seed))
    summary = _summarize(rows)
    return rows, summary


def _summarize(rows):
    its = np.array([r.iterations for r in rows], dtype=float)
    kap = np.array([r.kappa_est for r in rows], dtype=float)
    return {
        "samples": len(rows),
        "iter_min": float(its.min()),
        "iter_mean": float(its.mean()),
        "iter_max": float(its.max()),
        "kappa_min": float(kap.min()),
        "kappa_mean": float(kap.mean()),
        "kappa_max": float(kap.max()),
    }


def run_verify(config: ExperimentConfig):
    """Dense cross-checks of the full stack on a small mesh.

    Checks, in order: (a) the preconditioner application matches its dense
    realization, (b) the dense preconditioned spectrum stays above 1 on the
    kernel complement, (c) the Lanczos condition estimate agrees with the
    dense one within 15 percent, (d) the CG solution matches a dense direct
    solve.  Raises :class:`VerificationError` naming the first failed check.
    """
    problem = build_problem(config.mesh, config.params)
    dm = problem.dofmap
    if dm.n_global > 2500:
        raise ConfigError(
            f"verify needs a small mesh (<= 2500 global dofs), got {dm.n_global}"
        )
    rng = np.random.default_rng(config.seed)
    report = {}
    s_hat = denseref.dense_assembled_schur(dm, problem.operators.local_ops)
    for variant in config.variants:
        key = str(PrimalVariant.parse(variant).value)
        precond = make_preconditioner(problem, variant)
        cset = precond.constraints
        m_dense = denseref.dense_bddc_matrix(
            dm, cset, problem.operators.local_ops, problem.operators.sigma
        )
        g = problem.kernel_vector()

        def proj(v):
            return v - g * (g @ v)

        # (a) operator application vs dense matrix
        r = proj(rng.standard_normal(dm.n_gamma))
        za = proj(precond.apply(r))
        zb = proj(m_dense @ r)
        rel_a = np.linalg.norm(za - zb) / np.linalg.norm(zb)
        if not rel_a <= 1e-9:
            raise VerificationError(
                f"check (a) apply-vs-dense failed for {key}: rel err {rel_a:.3e}"
            )
        # (b) dense spectrum floor
        lams = denseref.preconditioned_spectrum(m_dense, s_hat)
        lam_min, lam_max = float(lams[0]), float(lams[-1])
        if not lam_min >= 1.0 - 1e-6:
            raise VerificationError(
                f"check (b) spectrum floor failed for {key}: lambda_min {lam_min:.9f}"
            )
        # (c) Lanczos estimate vs dense condition number
        f = random_rhs(problem, rng)
        u, rep = solve_interface(
            problem, precond, f, tol=1e-10, stop="rel", maxiter=config.maxiter
        )
        dense_kappa = lam_max / lam_min
        if not abs(rep.kappa_est - dense_kappa) <= 0.15 * dense_kappa:
            raise VerificationError(
                f"check (c) lanczos-vs-dense failed for {key}: "
                f"{rep.kappa_est:.4f} vs {dense_kappa:.4f}"
            )
        # (d) solved interface values vs dense direct solve
        f_gamma = problem.schur.reduce_rhs(f)
        x_dense = denseref.projected_solve(s_hat, f_gamma)
        x_pcg = u[dm.gamma_global]
        x_pcg = x_pcg - x_pcg.mean()
        rel_d = np.linalg.norm(x_pcg - x_dense) / np.linalg.norm(x_dense)
        if not rel_d <= 1e-8:
            raise VerificationError(
                f"check (d) pcg-vs-direct failed for {key}: rel err {rel_d:.3e}"
            )
        report[key] = {
            "apply_rel_err": float(rel_a),
            "lambda_min": lam_min,
            "lambda_max": lam_max,
            "dense_kappa": float(dense_kappa),
            "lanczos_kappa": float(rep.kappa_est),
            "solve_rel_err": float(rel_d),
            "iterations": rep.iterations,
        }
    return report


def run_experiment(config: ExperimentConfig):
    """Dispatch; returns (rows, extra) where extra depends on the study."""
    if config.experiment == "solve":
        return run_solve(config), None
    if config.experiment == "weak_scaling":
        return run_weak_scaling(config), None
    if config.experiment == "refinement":
        return run_refinement(config)
    if config.experiment == "random_rhs":
        return run_random_rhs(config)
    if config.experiment == "random_sigma":
        return run_random_sigma(config)
    if config.experiment == "verify":
        return [], run_verify(config)
    raise ConfigError(f"unknown experiment '{config.experiment}'")


def write_csv(rows, path_or_buf) -> None:
    """Emit result rows under the fixed header (contract: exact column set)."""

    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow(row.as_csv())

    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, "w", newline="") as fh:
            _write(fh)
    else:
        _write(path_or_buf)


def write_model_csv(model, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("refinement", "hh", "primal_space", "kappa_est", "polylog_model"))
        for m in model:
            w.writerow(
                (
                    m["refinement"],
                    m["hh"],
                    m["primal_space"],
                    f"{m['kappa_est']:.10g}",
                    f"{m['polylog_model']:.10g}",
                )
            )


def rows_to_string(rows) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()
