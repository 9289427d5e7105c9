"""Time integration: CFL step selection, the space-time pressure-correction
Picard loop, and the theta-blended variant for piecewise-constant-in-time
bases.

A solution state carries the space-time coefficients of the most recently
completed slab; its end-of-slab traces feed the upwind mass coupling of the
next slab.  Each Picard pass averages the dual velocity onto the tets, builds
the convective residual there, solves the implicit viscous system, projects
back to the dual grid, solves the pressure-correction system and updates the
dual velocity.  The pressure correction starts from zero every slab.
"""

from dataclasses import dataclass, field

import numpy as np

from . import operators as ops_mod
from .assembly import ElementOperators
from .krylov import SolveStats, SolverConfig, cg, gmres, resolve_kind
from .meshing import PrimalMesh, build_dual
from .operators import (
    BoundaryHandler,
    viscous_apply_component,
    viscous_apply_stacked,
    SolutionState,
    apply_boundary_velocity,
    boundary_dual_coeffs,
    constant_in_time,
    convective_residual,
    divergence,
    dual_to_primal,
    end_trace,
    face_kinds_from_spec,
    outlet_pressure_moment,
    pressure_apply,
    pressure_gradient_dual,
    pressure_gradient_primal,
    primal_to_dual,
    slip_dual_coeffs,
    velocity_update,
    viscous_apply,
    viscous_boundary_rhs,
)


class StepFailure(RuntimeError):
    """A linear solve did not converge; carries the offending statistics."""

    def __init__(self, message, stats: SolveStats):
        super().__init__(message)
        self.stats = stats


def _zero_velocity(x):
    return np.zeros_like(np.atleast_2d(x))


def _zero_scalar(x):
    return np.zeros(len(np.atleast_2d(x)))


@dataclass
class CaseConfig:
    """Everything a run needs besides the mesh itself."""

    p: int = 1
    p_gamma: int = 0
    nu: float = 0.0
    theta: float = 1.0
    cfl: float = 0.5
    t_end: float = 1.0
    source: object = None                # fn(points, t) -> (n, 3)
    initial_velocity: object = _zero_velocity
    initial_pressure: object = _zero_scalar
    boundary: dict = field(default_factory=dict)
    periodic: tuple = ()
    domain: tuple = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    exact_velocity: object = None        # fn(points, t) -> (n, 3)
    exact_pressure: object = None        # fn(points, t) -> (n,)
    pressure_solver: SolverConfig = field(default_factory=SolverConfig)
    viscous_solver: SolverConfig = field(default_factory=SolverConfig)
    output_interval: float = None
    steady_tol: float = None
    label: str = "custom"

    def __post_init__(self):
        if not (0.5 <= self.theta <= 1.0):
            raise ValueError("theta must lie in [1/2, 1]")
        if self.cfl <= 0:
            raise ValueError("CFL number must be positive")
        if self.p < 0 or self.p_gamma < 0:
            raise ValueError("polynomial degrees must be >= 0")

    @property
    def n_picard(self) -> int:
        return self.p_gamma + 1


@dataclass
class StepStats:
    pressure: list = field(default_factory=list)
    viscous: list = field(default_factory=list)
    dp_norms: list = field(default_factory=list)

    @property
    def pressure_iterations(self) -> int:
        return sum(s.iterations for s in self.pressure)

    @property
    def viscous_iterations(self) -> int:
        return sum(s.iterations for group in self.viscous for s in group)


@dataclass
class StepRecord:
    t: float
    dt: float
    pressure_iterations: int
    viscous_iterations: int
    energy: float
    dissipation: float


@dataclass
class RunResult:
    state: SolutionState
    records: list
    reached_steady: bool
    outputs: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# step size

def insphere_diameters(mesh: PrimalMesh) -> np.ndarray:
    """Insphere diameter 6 V / (sum of face areas) per tet."""
    areas = mesh.face_area[mesh.tet_faces].sum(axis=1)
    return 6.0 * mesh.volumes / areas


def cfl_dt(ops: ElementOperators, state: SolutionState, config: CaseConfig) -> float:
    """Convective CFL step bound, clipped to land exactly on t_end.

    The remaining time is split into equal CFL-respecting steps so the run
    never ends on a sliver step (tiny slabs amplify projection noise in the
    pressure correction by 1/dt).
    """
    hmin = float(insphere_diameters(ops.mesh).min())
    vmax = velocity_sup(ops, end_trace(ops, state.v_dual))
    dt = config.cfl * hmin / ((2 * config.p + 1) * (vmax + 1e-14))
    remaining = config.t_end - state.t
    if dt >= remaining:
        return remaining
    return remaining / int(np.ceil(remaining / dt))


def velocity_sup(ops: ElementOperators, vend: np.ndarray) -> float:
    """Largest velocity magnitude of the dual field, sampled at the face
    quadrature points (a tight stand-in for the sup norm)."""
    vals = np.einsum("fqk,fkc->fqc", ops.face_psi, vend)
    return float(np.sqrt(np.einsum("fqc,fqc->fq", vals, vals).max()))


# ---------------------------------------------------------------------------
# helper solves

def _mass_solve(ops, rhs):
    """Apply the inverse slab mass (time coupling x tet Gram) block-wise."""
    out = np.einsum("ekl,etl...->etk...", ops.tet_gram_inv, rhs)
    return np.einsum("at,etk...->eak...", ops.t_mass_inv, out)


def _solve_viscous(ops, rhs, nu, dt, guess, config: SolverConfig, p_gamma: int):
    """Krylov solve of the implicit viscous system.

    The three velocity components share one operator, so they are solved as a
    single stacked system: the block arrays stream through memory once per
    iteration and the iteration count matches the scalar case.
    """
    if nu == 0.0:
        return _mass_solve(ops, rhs), []
    shape = rhs.shape
    kind = resolve_kind(config, p_gamma)
    solver = cg if kind == "cg" else gmres

    def apply(x):
        return viscous_apply_stacked(ops, x.reshape(shape), nu, dt).ravel()

    x, st = solver(apply, rhs.ravel(), x0=guess.ravel(), config=config)
    if not st.converged:
        raise StepFailure(f"viscous solve did not converge (residual {st.residual:.3e})", st)
    return x.reshape(shape), [st]


def _solve_pressure(ops, rhs, dt, x0, config: SolverConfig, p_gamma: int,
                    remove_null: bool = False):
    shape = rhs.shape
    if remove_null:
        # fields constant in space (per time mode) span the null space on
        # gauge-free meshes; drop the matching rhs component (roundoff noise)
        rhs = rhs - rhs.mean(axis=(0, 2), keepdims=True)
    kind = resolve_kind(config, p_gamma)
    solver = cg if kind == "cg" else gmres

    def apply(x):
        return pressure_apply(ops, x.reshape(shape), dt).ravel()

    x, st = solver(apply, rhs.ravel(), x0=None if x0 is None else x0.ravel(), config=config)
    if not st.converged:
        raise StepFailure(f"pressure solve did not converge (residual {st.residual:.3e})", st)
    return x.reshape(shape), st


# ---------------------------------------------------------------------------
# diagnostics

def kinetic_energy(ops: ElementOperators, state: SolutionState) -> float:
    """Half the squared L2 norm of the end-of-slab dual velocity."""
    v = end_trace(ops, state.v_dual)
    return 0.5 * float(np.einsum("fkc,fkl,flc->", v, ops.taylor_gram, v))


def continuity_residual(ops: ElementOperators, state: SolutionState) -> float:
    dt = state.dt if state.dt > 0 else 1.0
    return float(np.abs(divergence(ops, state.v_dual, dt)).max())


def pressure_mean(ops: ElementOperators, p_hat: np.ndarray) -> float:
    """Mass-weighted mean of the slab pressure over the domain."""
    tw = ops.t_gram.sum(axis=1)
    total = float(np.einsum("t,ek,etk->", tw, ops.phi_moment, p_hat))
    return total / float(ops.mesh.volumes.sum())


def subtract_pressure_mean(ops: ElementOperators, p_hat: np.ndarray) -> np.ndarray:
    """Remove the additive pressure constant (free gauge)."""
    return p_hat - pressure_mean(ops, p_hat)


# ---------------------------------------------------------------------------
# the Picard step

def _slab_rhs_base(ops, bh, config, vend_primal, t_n, dt):
    """Right-side pieces that do not change across Picard iterations."""
    mass = np.einsum("ekl,elc->ekc", ops.tet_gram, vend_primal)
    rhs = np.einsum("a,ekc->eakc", ops.g0, mass)
    if config.nu > 0 and bh.has_velocity:
        rhs = rhs + viscous_boundary_rhs(ops, bh, t_n, dt, config.nu)
    if config.source is not None:
        rhs = rhs + ops.source_moments_primal(config.source, t_n, dt)
    return rhs


def picard_step(ops: ElementOperators, bh: BoundaryHandler, state: SolutionState,
                dt: float, config: CaseConfig):
    """Advance one slab with p_gamma + 1 pressure-correction passes."""
    t_n = state.t
    vend_dual = end_trace(ops, state.v_dual)
    vend_primal = end_trace(ops, state.v_primal)

    p_new = np.zeros((ops.mesh.n_tets, ops.ngamma, ops.nphi))
    v_new = constant_in_time(ops, vend_dual)
    bgroups = boundary_dual_coeffs(ops, bh, t_n, dt)
    outlet_mom = outlet_pressure_moment(ops, bh, t_n, dt)
    apply_boundary_velocity(ops, v_new, bgroups)
    rhs_base = _slab_rhs_base(ops, bh, config, vend_primal, t_n, dt)

    stats = StepStats()
    for _ in range(config.n_picard):
        if bh.has_slip:
            vbar = dual_to_primal(ops, v_new)
            apply_boundary_velocity(ops, v_new, (), slip=slip_dual_coeffs(ops, bh, vbar))
        vbar = dual_to_primal(ops, v_new)
        lam = pressure_gradient_primal(ops, p_new, dt, outlet_mom)
        conv = convective_residual(ops, vbar, dt, t_n, bh)
        rhs = rhs_base - conv
        rhs -= np.einsum("at,ekl,etlc->eakc", ops.t_mass, ops.tet_gram, lam)
        vhalf, vstats = _solve_viscous(ops, rhs, config.nu, dt, vbar,
                                       config.viscous_solver, config.p_gamma)
        stats.viscous.append(vstats)

        fv = primal_to_dual(ops, vhalf)
        apply_boundary_velocity(ops, fv, bgroups,
                                slip=slip_dual_coeffs(ops, bh, vhalf) if bh.has_slip else None)
        rhs_p = -divergence(ops, fv, dt)
        dp, pst = _solve_pressure(ops, rhs_p, dt, None, config.pressure_solver,
                                  config.p_gamma, remove_null=not bh.pins_pressure)
        stats.pressure.append(pst)
        stats.dp_norms.append(float(np.linalg.norm(dp)))

        v_new = velocity_update(ops, fv, dp, dt)
        apply_boundary_velocity(ops, v_new, bgroups)
        p_new = p_new + dp

    new_state = SolutionState(p_new, v_new, dual_to_primal(ops, v_new), t_n + dt, dt)
    new_state.check_finite()
    return new_state, stats


def advance_theta(ops: ElementOperators, bh: BoundaryHandler, state: SolutionState,
                  dt: float, config: CaseConfig, workspace: dict | None = None):
    """One step of the pressure-blended scheme for p_gamma = 0.

    The previous pressure's gradient travels through the grid-average path
    (like the transported velocity), and only the blended increment
    theta * (p_new - p_old) is applied directly on the dual grid.  This keeps
    the accumulated pressure free of the projection round-trip noise and
    makes corrections vanish at a discrete steady state.
    """
    if config.p_gamma != 0 or ops.ngamma != 1:
        raise ValueError("the theta scheme requires piecewise-constant time bases")
    t_n = state.t
    vend_primal = end_trace(ops, state.v_primal)
    p_old = state.p

    bgroups = boundary_dual_coeffs(ops, bh, t_n, dt)
    outlet_mom = outlet_pressure_moment(ops, bh, t_n, dt)
    vbar_old = constant_in_time(ops, vend_primal)

    stats = StepStats()
    rhs = _slab_rhs_base(ops, bh, config, vend_primal, t_n, dt)
    rhs -= convective_residual(ops, vbar_old, dt, t_n, bh)
    lam = pressure_gradient_primal(ops, p_old, dt, outlet_mom)
    rhs -= np.einsum("at,ekl,etlc->eakc", ops.t_mass, ops.tet_gram, lam)
    guess = vbar_old if workspace is None else workspace.get("vhalf", vbar_old)
    vhalf, vstats = _solve_viscous(ops, rhs, config.nu, dt, guess,
                                   config.viscous_solver, config.p_gamma)
    stats.viscous.append(vstats)

    fv = primal_to_dual(ops, vhalf)
    apply_boundary_velocity(ops, fv, bgroups,
                            slip=slip_dual_coeffs(ops, bh, vhalf) if bh.has_slip else None)
    rhs_p = -divergence(ops, fv, dt) / config.theta
    dp_guess = None if workspace is None else workspace.get("dp")
    dp, pst = _solve_pressure(ops, rhs_p, dt, dp_guess, config.pressure_solver,
                              config.p_gamma, remove_null=not bh.pins_pressure)
    stats.pressure.append(pst)
    stats.dp_norms.append(float(np.linalg.norm(dp)))

    v_new = velocity_update(ops, fv, config.theta * dp, dt)
    apply_boundary_velocity(ops, v_new, bgroups)
    p_new = p_old + dp
    if workspace is not None:
        workspace["vhalf"] = vhalf
        workspace["dp"] = dp

    new_state = SolutionState(p_new, v_new, dual_to_primal(ops, v_new), t_n + dt, dt)
    new_state.check_finite()
    return new_state, stats


# ---------------------------------------------------------------------------
# driver

def initial_state(ops: ElementOperators, config: CaseConfig,
                  bh: BoundaryHandler | None = None) -> SolutionState:
    """Spatial L2 projection of the initial data, constant in time.

    When a boundary handler is given, prescribed-velocity rows are replaced
    by the projection of the boundary data at t = 0 so impulsively started
    walls are seen by the first CFL estimate.
    """
    v0 = ops.project_dual(config.initial_velocity)
    p0 = ops.project_primal(config.initial_pressure, vector=False)
    if bh is not None:
        from .operators import boundary_dual_coeffs_spatial
        for faces, coeffs in boundary_dual_coeffs_spatial(ops, bh, 0.0):
            v0[faces] = coeffs
    v_dual = constant_in_time(ops, v0)
    state = SolutionState(
        p=constant_in_time(ops, p0),
        v_dual=v_dual,
        v_primal=dual_to_primal(ops, v_dual),
        t=0.0,
        dt=0.0,
    )
    return state


def prepare(mesh: PrimalMesh, config: CaseConfig):
    """Build the dual mesh, block store and boundary handler for a case."""
    dual = build_dual(mesh)
    kinds = face_kinds_from_spec(mesh, config.boundary)
    ops = ElementOperators(mesh, dual, config.p, config.p_gamma, face_kinds=kinds)
    bh = BoundaryHandler(ops, config.boundary)
    return ops, bh


def run(config: CaseConfig, mesh: PrimalMesh, out_dir=None, on_step=None) -> RunResult:
    """Integrate a case from its initial data to t_end.

    Per-step diagnostics are recorded; VTK snapshots and a diagnostics table
    are written under ``out_dir`` when given.  When ``steady_tol`` is set the
    loop stops early once the per-step velocity change rate drops below it.
    """
    from . import fileio

    ops, bh = prepare(mesh, config)
    state = initial_state(ops, config, bh)
    records = []
    outputs = []
    reached_steady = False
    workspace = {}

    writer = None
    if out_dir is not None:
        writer = fileio.RunWriter(out_dir, mesh, ops, label=config.label)
        outputs.append(writer.write_snapshot(state))
    next_output = (config.output_interval if config.output_interval else np.inf)

    energy = kinetic_energy(ops, state)
    step = 0
    while state.t < config.t_end - 1e-12 * max(config.t_end, 1.0):
        dt = cfl_dt(ops, state, config)
        prev_vend = end_trace(ops, state.v_dual)
        try:
            if config.p_gamma == 0:
                state, stats = advance_theta(ops, bh, state, dt, config, workspace=workspace)
            else:
                state, stats = picard_step(ops, bh, state, dt, config)
        except StepFailure as exc:
            raise StepFailure(f"step {step} at t={state.t:.6g}: {exc}", exc.stats) from exc
        if not bh.pins_pressure:
            state.p = subtract_pressure_mean(ops, state.p)
        step += 1

        new_energy = kinetic_energy(ops, state)
        rec = StepRecord(
            t=state.t,
            dt=dt,
            pressure_iterations=stats.pressure_iterations,
            viscous_iterations=stats.viscous_iterations,
            energy=new_energy,
            dissipation=-(new_energy - energy) / dt,
        )
        records.append(rec)
        energy = new_energy
        if on_step is not None:
            on_step(state, rec)

        if writer is not None and state.t + 1e-12 >= next_output:
            outputs.append(writer.write_snapshot(state))
            next_output += config.output_interval

        if config.steady_tol is not None:
            change = float(np.abs(end_trace(ops, state.v_dual) - prev_vend).max()) / dt
            if change < config.steady_tol:
                reached_steady = True
                break

    if writer is not None:
        if records:
            outputs.append(writer.write_snapshot(state))
        writer.write_diagnostics(records)
    return RunResult(state=state, records=records, reached_steady=reached_steady,
                     outputs=outputs)
