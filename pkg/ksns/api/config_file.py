"""
Run configuration files

Line-oriented grammar, one assignment per line::

    # comment
    grid.dim = 2
    grid.cells = 64, 64
    initial.n.preset = gaussian_blob

The section is everything before the last dot. Values are validated by the
pydantic blocks below; unknown sections or keys are rejected.
"""

import logging
import math
import re
from pathlib import Path
from typing import Dict, Literal, Optional, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError as PydanticValidationError, model_validator

from ksns.core.dynamics import LinearPotential, ModelParams, SampledPotential, State, StepControl
from ksns.core.elliptic import SolverSettings, project_divergence_free
from ksns.core.errors import IoFailure, KsnsError, ParseError, UnknownKey, ValidationError
from ksns.core.mesh import Boundary, Grid, ScalarField, VectorField, make_grid
from ksns.core.operators import divergence_defect

logger = logging.getLogger(__name__)

KEY_PATTERN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)+")
LIST_KEYS = {"cells", "lengths", "phi_g", "center", "modes"}


# ============================================================================
# BLOCKS
# ============================================================================

class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridBlock(_Block):
    dim: int
    cells: Tuple[int, ...]
    lengths: Tuple[float, ...]
    boundary: Boundary


class ParamsBlock(_Block):
    m: float
    kappa: float
    eps: float
    phi: Literal["linear", "sampled"]
    phi_g: Optional[Tuple[float, ...]] = None
    phi_file: Optional[str] = None
    n_ceiling: float = 1e8
    chemotaxis: bool = True

    @model_validator(mode="after")
    def check_ranges(self):
        if not (math.isfinite(self.m) and self.m > 1.0):
            raise ValidationError("params.m", "must exceed 1")
        if not 0.0 < self.eps <= 1.0:
            raise ValidationError("params.eps", "must lie in (0, 1]")
        if not math.isfinite(self.kappa):
            raise ValidationError("params.kappa", "must be finite")
        if not self.n_ceiling > 0.0:
            raise ValidationError("params.n_ceiling", "must be positive")
        if self.phi == "linear" and self.phi_g is None:
            raise ValidationError("params.phi_g", "required when phi = linear")
        if self.phi == "sampled" and self.phi_file is None:
            raise ValidationError("params.phi_file", "required when phi = sampled")
        return self


class FieldInit(_Block):
    preset: Literal["rest", "gaussian_blob", "custom_file", "cosine", "taylor_green"]
    center: Optional[Tuple[float, ...]] = None
    width: Optional[float] = None
    amplitude: Optional[float] = None
    offset: float = 0.0
    modes: Optional[Tuple[int, ...]] = None
    file: Optional[str] = None


class SteppingBlock(_Block):
    cfl_advect: float = 0.4
    cfl_diffuse: float = 0.25
    dt_max: float = 1e-2
    dt_min: float = 1e-10
    dt: Optional[float] = None
    t_end: float = 1.0

    @model_validator(mode="after")
    def check_horizon(self):
        if not self.t_end >= 0.0:
            raise ValidationError("stepping.t_end", "must be >= 0")
        return self


class OutputBlock(_Block):
    snapshot_every: float
    diagnostics_every: float
    out_dir: str

    @model_validator(mode="after")
    def check_cadence(self):
        if not self.snapshot_every > 0.0:
            raise ValidationError("output.snapshot_every", "must be positive")
        if not self.diagnostics_every > 0.0:
            raise ValidationError("output.diagnostics_every", "must be positive")
        return self


class SolverBlock(_Block):
    tol_rel: float = 1e-8
    tol_abs: float = 1e-12
    max_iter: Optional[int] = None


SECTIONS: Dict[str, Tuple[str, Type[_Block]]] = {
    "grid": ("grid", GridBlock),
    "params": ("params", ParamsBlock),
    "initial.n": ("initial_n", FieldInit),
    "initial.c": ("initial_c", FieldInit),
    "initial.u": ("initial_u", FieldInit),
    "stepping": ("stepping", SteppingBlock),
    "output": ("output", OutputBlock),
    "solver": ("solver", SolverBlock),
}
OPTIONAL_SECTIONS = {"stepping", "solver"}


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    grid: GridBlock
    params: ParamsBlock
    initial_n: FieldInit
    initial_c: FieldInit
    initial_u: FieldInit
    stepping: SteppingBlock = SteppingBlock()
    output: OutputBlock
    solver: SolverBlock = SolverBlock()
    base_dir: str = "."
    warnings: Tuple[str, ...] = ()

    def make_grid(self) -> Grid:
        return make_grid(self.grid.dim, self.grid.cells, self.grid.lengths, self.grid.boundary)

    def resolve(self, name: str) -> Path:
        path = Path(name)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def model_params(self, grid: Optional[Grid] = None, **overrides) -> ModelParams:
        grid = grid or self.make_grid()
        block = self.params
        if block.phi == "linear":
            phi = LinearPotential(g=block.phi_g)
        else:
            phi = SampledPotential(sample=ScalarField(grid, _load_array(self.resolve(block.phi_file), grid.shape,
                                                                        "params.phi_file")))
        values = dict(m=block.m, kappa=block.kappa, eps=block.eps, phi=phi,
                      n_ceiling=block.n_ceiling, chemotaxis=block.chemotaxis)
        values.update(overrides)
        return ModelParams(**values)

    def step_control(self, **overrides) -> StepControl:
        values = self.stepping.model_dump(exclude={"t_end"})
        values.update(overrides)
        return StepControl(**values)

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(**self.solver.model_dump())

    def with_section(self, attr: str, **updates) -> "RunConfig":
        """Copy with one block's fields replaced and revalidated"""
        block = getattr(self, attr)
        try:
            new_block = type(block)(**{**block.model_dump(), **updates})
        except PydanticValidationError as exc:
            raise _convert(exc, attr.replace("_", ".")) from None
        return self.model_copy(update={attr: new_block})


# ============================================================================
# PARSING
# ============================================================================

def _convert(exc: PydanticValidationError, section: str) -> ValidationError:
    error = exc.errors()[0]
    field = ".".join(str(part) for part in error["loc"]) or "?"
    return ValidationError(f"{section}.{field}", error["msg"])


def _split_line(raw: str, number: int) -> Optional[Tuple[str, str]]:
    text = raw.split("#", 1)[0].rstrip()
    if not text.strip():
        return None
    if "=" not in text:
        raise ParseError(number, len(text) + 1, "expected '='")
    eq = text.index("=")
    key_part = text[:eq]
    key = key_part.strip()
    start = len(key_part) - len(key_part.lstrip()) + 1
    if not key:
        raise ParseError(number, start, "missing key")
    match = KEY_PATTERN.fullmatch(key)
    if match is None:
        bad = next((i for i, ch in enumerate(key) if not (ch.isalnum() or ch in "._")), None)
        column = start + (bad if bad is not None else 0)
        raise ParseError(number, column, f"malformed key '{key}', expected section.key")
    value = text[eq + 1:].strip()
    if not value:
        raise ParseError(number, eq + 2, "missing value")
    return key, value


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    """Parse and validate a configuration document"""
    raw_blocks: Dict[str, Dict[str, object]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        parsed = _split_line(raw, number)
        if parsed is None:
            continue
        key, value = parsed
        section, name = key.rsplit(".", 1)
        if section not in SECTIONS:
            raise UnknownKey(key, number)
        model = SECTIONS[section][1]
        if name not in model.model_fields:
            raise UnknownKey(key, number)
        block = raw_blocks.setdefault(section, {})
        if name in block:
            raise ParseError(number, 1, f"duplicate key '{key}'")
        if name in LIST_KEYS:
            items = [item.strip() for item in value.split(",")]
            if any(not item for item in items):
                raise ParseError(number, 1, f"empty list entry in '{key}'")
            block[name] = items
        else:
            block[name] = value

    blocks = {}
    for section, (attr, model) in SECTIONS.items():
        if section not in raw_blocks and section not in OPTIONAL_SECTIONS:
            raise ValidationError(section, "section is required")
        try:
            blocks[attr] = model(**raw_blocks.get(section, {}))
        except PydanticValidationError as exc:
            raise _convert(exc, section) from None

    _check_consistency(blocks)
    warnings = []
    if blocks["params"].m <= 2.0:
        warnings.append(f"params.m = {blocks['params'].m:g} <= 2: outside the m > 2 regime")
        logger.warning(warnings[-1])
    return RunConfig(**blocks, base_dir=str(base_dir), warnings=tuple(warnings))


def _check_consistency(blocks: Dict[str, _Block]) -> None:
    grid = blocks["grid"]
    try:
        make_grid(grid.dim, grid.cells, grid.lengths, grid.boundary)
    except KsnsError as exc:
        raise ValidationError("grid", str(exc)) from None
    params = blocks["params"]
    if params.phi_g is not None and len(params.phi_g) != grid.dim:
        raise ValidationError("params.phi_g", f"needs {grid.dim} entries")
    for section in ("initial.n", "initial.c", "initial.u"):
        init = blocks[SECTIONS[section][0]]
        _check_field_init(section, init, grid.dim)
    stepping = blocks["stepping"]
    try:
        StepControl(**stepping.model_dump(exclude={"t_end"}))
        SolverSettings(**blocks["solver"].model_dump())
    except PydanticValidationError as exc:
        raise _convert(exc, "stepping") from None


def _check_field_init(section: str, init: FieldInit, dim: int) -> None:
    vector = section == "initial.u"
    if init.preset == "taylor_green" and not vector:
        raise ValidationError(f"{section}.preset", "taylor_green applies to initial.u only")
    if init.preset == "cosine" and vector:
        raise ValidationError(f"{section}.preset", "cosine applies to scalar fields only")
    if init.preset == "gaussian_blob":
        for name in ("center", "width", "amplitude"):
            if getattr(init, name) is None:
                raise ValidationError(f"{section}.{name}", "required for gaussian_blob")
        if len(init.center) != dim:
            raise ValidationError(f"{section}.center", f"needs {dim} entries")
        if not init.width > 0.0:
            raise ValidationError(f"{section}.width", "must be positive")
        if not vector and not init.amplitude >= 0.0:
            raise ValidationError(f"{section}.amplitude", "must be >= 0 for a density or signal")
    if init.preset == "cosine":
        if init.amplitude is None or init.modes is None:
            raise ValidationError(f"{section}.modes", "cosine needs amplitude and modes")
        if len(init.modes) != dim:
            raise ValidationError(f"{section}.modes", f"needs {dim} entries")
        if not init.offset >= abs(init.amplitude):
            raise ValidationError(f"{section}.offset", "must be >= |amplitude| for a nonnegative profile")
    if init.preset == "taylor_green" and init.amplitude is None:
        raise ValidationError(f"{section}.amplitude", "required for taylor_green")
    if init.preset == "custom_file" and init.file is None:
        raise ValidationError(f"{section}.file", "required for custom_file")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config file {path}: {exc.strerror or exc}") from None
    return parse_config(text, base_dir=str(path.parent))


# ============================================================================
# INITIAL DATA
# ============================================================================

def _load_array(path: Path, shape, key: str) -> np.ndarray:
    try:
        values = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    if values.shape != tuple(shape):
        raise ValidationError(key, f"array shape {values.shape} != {tuple(shape)}")
    return np.asarray(values, dtype=float)


def gaussian(grid: Grid, coords, center, width: float, amplitude: float) -> np.ndarray:
    r2 = sum((x - c) ** 2 for x, c in zip(coords, center))
    return amplitude * np.exp(-r2 / (2.0 * width * width))


def cosine_profile(grid: Grid, coords, modes, amplitude: float, offset: float) -> np.ndarray:
    out = amplitude * np.ones_like(coords[0])
    for k, x, length in zip(modes, coords, grid.lengths):
        out = out * np.cos(k * np.pi * x / length)
    return out + offset


def curl_of_streamfunction(grid: Grid, psi: np.ndarray) -> VectorField:
    """Discrete curl of a streamfunction on the (x, y) nodes; exactly divergence-free

    ``psi`` is shaped like the cells with the two first axes extended by one
    (bounded) or like the cells (periodic). u_z is zero in 3-d.
    """
    hx, hy = grid.spacing[0], grid.spacing[1]
    if grid.periodic:
        ux = (np.roll(psi, -1, axis=1) - psi) / hy
        uy = -(np.roll(psi, -1, axis=0) - psi) / hx
    else:
        ux = np.diff(psi, axis=1) / hy
        uy = -np.diff(psi, axis=0) / hx
    comps = [ux, uy] + [np.zeros(grid.face_shape(2))] * (grid.dim - 2)
    return VectorField(grid, tuple(comps))


def streamfunction_nodes(grid: Grid):
    """Coordinates of the streamfunction nodes"""
    axes = [grid.faces(0), grid.faces(1)] + [grid.centers(a) for a in range(2, grid.dim)]
    return np.meshgrid(*axes, indexing="ij")


def _scalar_initial(init: FieldInit, grid: Grid, cfg: RunConfig, section: str) -> ScalarField:
    coords = grid.cell_coordinates()
    if init.preset == "rest":
        values = np.zeros(grid.shape)
    elif init.preset == "gaussian_blob":
        values = gaussian(grid, coords, init.center, init.width, init.amplitude)
    elif init.preset == "cosine":
        values = cosine_profile(grid, coords, init.modes, init.amplitude, init.offset)
    else:
        values = _load_array(cfg.resolve(init.file), grid.shape, f"{section}.file")
    if not np.all(np.isfinite(values)):
        raise ValidationError(section, "initial values must be finite")
    if float(np.min(values)) < 0.0:
        raise ValidationError(section, "initial values must be nonnegative")
    return ScalarField(grid, np.asarray(values, dtype=float))


def _velocity_initial(init: FieldInit, grid: Grid, cfg: RunConfig) -> VectorField:
    if init.preset == "rest":
        return VectorField.zeros(grid)
    if init.preset in ("gaussian_blob", "taylor_green"):
        nodes = streamfunction_nodes(grid)
        if init.preset == "gaussian_blob":
            psi = gaussian(grid, nodes, init.center[:2], init.width, init.amplitude)
        else:
            k = 2.0 * np.pi / grid.lengths[0]
            psi = init.amplitude / k * np.sin(k * nodes[0]) * np.sin(2.0 * np.pi * nodes[1] / grid.lengths[1])
        if not grid.periodic:
            psi[0], psi[-1] = 0.0, 0.0
            psi[:, 0], psi[:, -1] = 0.0, 0.0
        return curl_of_streamfunction(grid, psi)
    path = cfg.resolve(init.file)
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    comps = []
    for axis in range(grid.dim):
        name = f"u{axis}"
        if name not in archive:
            raise ValidationError("initial.u.file", f"archive lacks '{name}'")
        comp = np.asarray(archive[name], dtype=float)
        if comp.shape != grid.face_shape(axis):
            raise ValidationError("initial.u.file", f"{name} shape {comp.shape} != {grid.face_shape(axis)}")
        comps.append(comp)
    return VectorField(grid, tuple(comps)).with_walls_zeroed()


def build_initial_state(cfg: RunConfig, grid: Optional[Grid] = None) -> State:
    """Initial state with u0 projected when it is not discretely divergence-free"""
    grid = grid or cfg.make_grid()
    n = _scalar_initial(cfg.initial_n, grid, cfg, "initial.n")
    c = _scalar_initial(cfg.initial_c, grid, cfg, "initial.c")
    u = _velocity_initial(cfg.initial_u, grid, cfg)
    if not np.all(np.isfinite(np.concatenate([comp.ravel() for comp in u.components]))):
        raise ValidationError("initial.u", "initial values must be finite")
    defect = divergence_defect(u)
    if defect > 1e-8:
        logger.warning(f"initial.u has scaled divergence {defect:.3e}; projecting")
        u, _ = project_divergence_free(u, cfg.solver_settings())
    return State(n, c, u, ScalarField.zeros(grid), 0.0)


# ============================================================================
# BUILT-IN SCENARIOS
# ============================================================================

def standard_config(cells: int = 64, dim: int = 2, t_end: float = 5.0, out_dir: str = "out/standard") -> RunConfig:
    """Gaussian cell blob under gravity in the unit box, m = 3, kappa = 1, eps = 1e-2"""
    center = ", ".join(["0.5"] * dim)
    g = ", ".join(["0"] * (dim - 1) + ["-1"])
    text = f"""
grid.dim = {dim}
grid.cells = {", ".join([str(cells)] * dim)}
grid.lengths = {", ".join(["1.0"] * dim)}
grid.boundary = no_flux_no_slip
params.m = 3
params.kappa = 1
params.eps = 1e-2
params.phi = linear
params.phi_g = {g}
initial.n.preset = gaussian_blob
initial.n.center = {center}
initial.n.width = 0.1
initial.n.amplitude = 5
initial.c.preset = rest
initial.u.preset = rest
stepping.t_end = {t_end!r}
output.snapshot_every = {min(1.0, t_end) if t_end > 0 else 1.0!r}
output.diagnostics_every = {min(0.05, t_end) if t_end > 0 else 0.05!r}
output.out_dir = {out_dir}
"""
    return parse_config(text)
