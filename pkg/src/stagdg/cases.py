"""Built-in benchmark cases and their exact solutions.

Available cases: ``abc-steady`` and ``abc-unsteady`` (a fully periodic
Beltrami flow with closed-form velocity and pressure), ``taylor-green``
(periodic vortex decay), ``cavity`` (unit box driven by a moving top wall)
and ``custom`` (everything supplied by the caller or a config file).
"""

import numpy as np

from .meshing import PrimalMesh, cube_mesh, pair_periodic_faces
from .operators import no_slip, pressure_outlet, slip_bc, velocity_bc
from .stepping import CaseConfig

CASE_NAMES = ("abc-steady", "abc-unsteady", "taylor-green", "cavity", "custom")


def abc_velocity(nu):
    def fn(x, t=0.0):
        x = np.atleast_2d(x)
        decay = np.exp(-nu * t)
        return decay * np.stack([
            np.sin(x[:, 2]) + np.cos(x[:, 1]),
            np.sin(x[:, 0]) + np.cos(x[:, 2]),
            np.sin(x[:, 1]) + np.cos(x[:, 0]),
        ], axis=1)
    return fn


def abc_pressure(nu):
    def fn(x, t=0.0):
        x = np.atleast_2d(x)
        decay = np.exp(-2.0 * nu * t)
        return -decay * (np.cos(x[:, 0]) * np.sin(x[:, 1])
                         + np.sin(x[:, 0]) * np.cos(x[:, 2])
                         + np.sin(x[:, 2]) * np.cos(x[:, 1]))
    return fn


def taylor_green_velocity():
    def fn(x, t=0.0):
        x = np.atleast_2d(x)
        return np.stack([
            np.sin(x[:, 0]) * np.cos(x[:, 1]) * np.cos(x[:, 2]),
            -np.cos(x[:, 0]) * np.sin(x[:, 1]) * np.cos(x[:, 2]),
            np.zeros(len(x)),
        ], axis=1)
    return fn


def taylor_green_pressure(p0=0.0):
    def fn(x, t=0.0):
        x = np.atleast_2d(x)
        return p0 + (np.cos(2 * x[:, 0]) + np.cos(2 * x[:, 1])) * (np.cos(2 * x[:, 2]) + 2.0) / 16.0
    return fn


def make_case(name: str, **overrides) -> CaseConfig:
    """Construct a case configuration by name; keyword overrides win."""
    if name not in CASE_NAMES:
        raise ValueError(f"unknown case {name!r}; available: {', '.join(CASE_NAMES)}")
    params = dict(label=name)

    if name in ("abc-steady", "abc-unsteady"):
        nu = overrides.pop("nu", 0.0 if name == "abc-steady" else 1.0)
        params.update(
            nu=nu,
            p=overrides.pop("p", 1),
            p_gamma=overrides.pop("p_gamma", 0 if name == "abc-steady" else 1),
            t_end=overrides.pop("t_end", 0.1),
            domain=((-np.pi, -np.pi, -np.pi), (np.pi, np.pi, np.pi)),
            periodic=("x", "y", "z"),
            initial_velocity=abc_velocity(nu),
            initial_pressure=lambda x: abc_pressure(nu)(x, 0.0),
            exact_velocity=abc_velocity(nu),
            exact_pressure=abc_pressure(nu),
        )
    elif name == "taylor-green":
        nu = overrides.pop("nu", 0.01)
        params.update(
            nu=nu,
            p=overrides.pop("p", 2),
            p_gamma=overrides.pop("p_gamma", 0),
            t_end=overrides.pop("t_end", 1.0),
            domain=((-np.pi, -np.pi, -np.pi), (np.pi, np.pi, np.pi)),
            periodic=("x", "y", "z"),
            initial_velocity=lambda x: taylor_green_velocity()(x),
            initial_pressure=lambda x: taylor_green_pressure()(x),
        )
    elif name == "cavity":
        nu = overrides.pop("nu", 0.01)
        lid = velocity_bc(lambda x, t: np.column_stack(
            [np.ones(len(x)), np.zeros(len(x)), np.zeros(len(x))]))
        walls = {tag: no_slip() for tag in (1, 2, 3, 5, 6)}
        walls[4] = lid  # moving wall at the top of the y axis
        params.update(
            nu=nu,
            p=overrides.pop("p", 2),
            p_gamma=overrides.pop("p_gamma", 0),
            t_end=overrides.pop("t_end", 30.0),
            theta=overrides.pop("theta", 1.0),
            domain=((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)),
            boundary=walls,
            initial_velocity=lambda x: np.zeros_like(np.atleast_2d(x)),
            initial_pressure=lambda x: np.ones(len(np.atleast_2d(x))),
            steady_tol=overrides.pop("steady_tol", None),
        )
    params.update(overrides)
    return CaseConfig(**params)


def case_mesh(config: CaseConfig, spec: str) -> PrimalMesh:
    """Build the mesh for a case: ``cube:n`` or a mesh file path.

    Generated cubes span the case domain; periodic directions declared by the
    case are paired here.
    """
    if spec.startswith("cube:"):
        n = int(spec.split(":", 1)[1])
        mesh = cube_mesh(n, lo=config.domain[0], hi=config.domain[1])
    else:
        from .fileio import load_mesh
        mesh = load_mesh(spec)
    if config.periodic:
        mesh = pair_periodic_faces(mesh, config.periodic)
    return mesh


_BC_BUILDERS = {
    "no-slip": lambda args: no_slip(),
    "slip": lambda args: slip_bc(),
    "velocity": lambda args: velocity_bc(_constant_velocity([float(a) for a in args])),
    "pressure": lambda args: pressure_outlet(float(args[0])),
}


def _constant_velocity(vec):
    vec = np.asarray(vec, dtype=float)

    def fn(x, t):
        return np.tile(vec, (len(np.atleast_2d(x)), 1))
    return fn


def boundary_from_strings(bindings: dict) -> dict:
    """Turn ``{tag: "no-slip" | "velocity 1 0 0" | ...}`` into conditions."""
    out = {}
    for tag, text in bindings.items():
        tok = str(text).split()
        kind, args = tok[0], tok[1:]
        if kind not in _BC_BUILDERS:
            raise ValueError(f"unknown boundary kind {kind!r} for tag {tag}")
        out[int(tag)] = _BC_BUILDERS[kind](args)
    return out
