"""Skin parameter estimation from reflectance spectra.

The forward model composes three pieces: chromophore concentrations give
mu_a(lambda), the scatterer model gives mu_s'(lambda), and the
precomputed transport table maps (mu_a, mu_s') to diffuse reflectance.
A wavelength-independent calibration factor absorbs residual instrument
gain. Fitting inverts that composition with a damped Gauss-Newton
(Levenberg-Marquardt) loop over box-scaled parameters, projecting each
trial step back into bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigInvalid,
    InfeasibleStart,
    MissingChromophore,
    NonFiniteResidual,
    OutOfGrid,
)
from .mcrt import ForwardLUT, lut_reflectance, lut_stderr
from .mie import (
    DEFAULT_N_MEDIUM,
    DEFAULT_N_PARTICLE,
    LogNormal,
    Monodisperse,
    ScattererModel,
    scattering_spectrum,
)
from .spectral import (
    COHB,
    HB,
    LN10,
    O2HB,
    ChromophoreConcentrations,
    ExtinctionRecord,
    Spectrum,
    SpectrumKind,
    default_grid,
    resample,
)

# calibration gain beyond this range means the measurement chain is broken,
# not miscalibrated
CALIBRATION_MIN = 0.1
CALIBRATION_MAX = 10.0

# fit band: the 500-600 nm window carries the hemoglobin Q bands
# (deoxy 555, oxy 542/577, CO 540/570) that separate the three species,
# and keeps mu_a inside the default table for realistic concentrations
DEFAULT_FIT_START_NM = 500.0
DEFAULT_FIT_STOP_NM = 600.0
DEFAULT_FIT_STEP_NM = 2.0

DEFAULT_MEDIAN_RADIUS_UM = 0.4
DEFAULT_SIGMA_GEOM = 1.3
DEFAULT_NUMBER_DENSITY_PER_MM3 = 1.0e9

DEFAULT_FREE_PARAMETERS = (
    "c_hb",
    "c_o2hb",
    "c_cohb",
    "number_density",
    "calibration_factor",
)

# density bounds keep mu_s' of the default scatterer inside the default
# table axis; radius is fittable but weakly identified from reflectance
DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "c_hb": (0.0, 0.15),
    "c_o2hb": (0.0, 0.15),
    "c_cohb": (0.0, 0.15),
    "number_density": (2.0e8, 2.4e9),
    "calibration_factor": (0.5, 2.0),
    "radius_um": (0.1, 1.0),
}

_CONC_PARAMS = {"c_hb": HB, "c_o2hb": O2HB, "c_cohb": COHB}
PARAMETER_NAMES = (
    "c_hb",
    "c_o2hb",
    "c_cohb",
    "number_density",
    "calibration_factor",
    "radius_um",
)

_FD_STEP = 1e-4          # scaled-unit finite difference step
_LAMBDA_START = 1e-3
_LAMBDA_MIN = 1e-12
_LAMBDA_MAX = 1e12
# overall-scale seeds: absorption and scattering trade off almost exactly
# along the joint (concentrations, density) scale direction, and a single
# start can park in a shallow local minimum on that valley
_SCALE_SEEDS = (0.67, 0.8, 1.25, 1.5)
_SCALABLE = ("c_hb", "c_o2hb", "c_cohb", "number_density")
_BOUND_ATOL = 1e-9       # scaled distance that counts as "at the bound"
_SIGMA_FLOOR = 1e-6
_DECREASE_FLOOR = 1e-25  # objective roundoff noise, way below any real misfit


class NoiseModel(Enum):
    UNIFORM = "uniform"
    PER_WAVELENGTH_STDERR = "per_wavelength_stderr"


@dataclass(frozen=True)
class SkinParameterVector:
    """One point in model space: chromophores, scatterer, gain."""

    concentrations: ChromophoreConcentrations
    scatterer: ScattererModel
    calibration_factor: float = 1.0

    def __post_init__(self):
        cal = float(self.calibration_factor)
        object.__setattr__(self, "calibration_factor", cal)
        if not (math.isfinite(cal)
                and CALIBRATION_MIN <= cal <= CALIBRATION_MAX):
            raise ValueError(
                f"calibration factor must lie in "
                f"[{CALIBRATION_MIN}, {CALIBRATION_MAX}], got {cal!r}")


def get_parameter(theta: SkinParameterVector, name: str) -> float:
    """Read one named scalar out of a parameter vector."""
    if name in _CONC_PARAMS:
        return float(theta.concentrations.get(_CONC_PARAMS[name], 0.0))
    if name == "number_density":
        return float(theta.scatterer.number_density_per_mm3)
    if name == "calibration_factor":
        return float(theta.calibration_factor)
    if name == "radius_um":
        dist = theta.scatterer.distribution
        if isinstance(dist, Monodisperse):
            return float(dist.radius_um)
        return float(dist.median_radius_um)
    raise ConfigInvalid(f"unknown parameter {name!r}")


def with_parameters(theta: SkinParameterVector,
                    names: Sequence[str],
                    values: Sequence[float]) -> SkinParameterVector:
    """Copy of theta with the named scalars replaced."""
    conc = dict(theta.concentrations)
    scat = theta.scatterer
    density = scat.number_density_per_mm3
    cal = theta.calibration_factor
    radius = None
    for name, v in zip(names, values):
        v = float(v)
        if name in _CONC_PARAMS:
            conc[_CONC_PARAMS[name]] = v
        elif name == "number_density":
            density = v
        elif name == "calibration_factor":
            cal = v
        elif name == "radius_um":
            radius = v
        else:
            raise ConfigInvalid(f"unknown parameter {name!r}")
    dist = scat.distribution
    if radius is not None:
        if isinstance(dist, Monodisperse):
            dist = Monodisperse(radius)
        else:
            dist = LogNormal(radius, dist.sigma_geom)
    scat = ScattererModel(dist, density, scat.n_particle, scat.n_medium)
    return SkinParameterVector(ChromophoreConcentrations(conc), scat, cal)


@dataclass(frozen=True)
class FitConfig:
    """What to fit, where it may go, and how to stop."""

    free_parameters: tuple[str, ...]
    bounds: dict[str, tuple[float, float]]
    initial_guess: SkinParameterVector
    regularization_weight: float = 0.0
    max_iterations: int = 200
    convergence_tol: float = 1e-10
    noise_model: NoiseModel = NoiseModel.UNIFORM

    def __post_init__(self):
        names = tuple(str(n) for n in self.free_parameters)
        object.__setattr__(self, "free_parameters", names)
        if not names:
            raise ConfigInvalid("free_parameters must not be empty")
        if len(set(names)) != len(names):
            raise ConfigInvalid("free_parameters contains duplicates")
        for name in names:
            if name not in PARAMETER_NAMES:
                raise ConfigInvalid(f"unknown parameter {name!r}")
        bounds: dict[str, tuple[float, float]] = {}
        for key, pair in self.bounds.items():
            lo, hi = (float(pair[0]), float(pair[1]))
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ConfigInvalid(
                    f"bounds for {key!r} must be finite with lo < hi")
            bounds[str(key)] = (lo, hi)
        object.__setattr__(self, "bounds", bounds)
        for name in names:
            if name not in bounds:
                raise ConfigInvalid(f"no bounds for free parameter {name!r}")
            lo, hi = bounds[name]
            v = get_parameter(self.initial_guess, name)
            if not lo <= v <= hi:
                raise ConfigInvalid(
                    f"initial {name} = {v:g} outside [{lo:g}, {hi:g}]")
        w = float(self.regularization_weight)
        object.__setattr__(self, "regularization_weight", w)
        if not (math.isfinite(w) and w >= 0.0):
            raise ConfigInvalid("regularization_weight must be >= 0")
        if int(self.max_iterations) < 1:
            raise ConfigInvalid("max_iterations must be >= 1")
        object.__setattr__(self, "max_iterations", int(self.max_iterations))
        tol = float(self.convergence_tol)
        if not (math.isfinite(tol) and tol > 0.0):
            raise ConfigInvalid("convergence_tol must be > 0")
        object.__setattr__(self, "convergence_tol", tol)
        if not isinstance(self.noise_model, NoiseModel):
            raise ConfigInvalid("noise_model must be a NoiseModel")
        # both box corners must be representable parameter vectors,
        # otherwise the fitter could die mid-iteration on a legal step
        for corner in (0, 1):
            vals = [self.bounds[n][corner] for n in names]
            try:
                with_parameters(self.initial_guess, names, vals)
            except ValueError as exc:
                raise ConfigInvalid(
                    f"bounds corner leaves the parameter domain: {exc}"
                ) from exc


@dataclass(frozen=True)
class FitResult:
    """Converged (or stalled) state of one fit."""

    estimate: SkinParameterVector
    residual_norm: float
    chi2_per_dof: float
    iterations: int
    converged: bool
    at_bound: dict[str, bool]
    predicted: Spectrum
    objective_trace: tuple[float, ...] = field(repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.residual_norm)
                and self.residual_norm >= 0.0):
            raise ValueError("residual_norm must be finite and >= 0")
        if not (math.isfinite(self.chi2_per_dof)
                and self.chi2_per_dof >= 0.0):
            raise ValueError("chi2_per_dof must be finite and >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def default_scatterer(
        number_density_per_mm3: float = DEFAULT_NUMBER_DENSITY_PER_MM3,
) -> ScattererModel:
    """Log-normal sphere population typical of dermal scattering."""
    return ScattererModel(
        LogNormal(DEFAULT_MEDIAN_RADIUS_UM, DEFAULT_SIGMA_GEOM),
        number_density_per_mm3)


def default_parameter_vector() -> SkinParameterVector:
    """Neutral starting point: mixed oxygenation, mid-grid scattering."""
    conc = ChromophoreConcentrations({HB: 0.02, O2HB: 0.04, COHB: 0.01})
    return SkinParameterVector(conc, default_scatterer(), 1.0)


def default_fit_grid() -> np.ndarray:
    return default_grid(DEFAULT_FIT_START_NM, DEFAULT_FIT_STOP_NM,
                        DEFAULT_FIT_STEP_NM)


def default_fit_config(
        initial_guess: SkinParameterVector | None = None,
        noise_model: NoiseModel = NoiseModel.UNIFORM,
        regularization_weight: float = 0.0) -> FitConfig:
    return FitConfig(
        free_parameters=DEFAULT_FREE_PARAMETERS,
        bounds=dict(DEFAULT_BOUNDS),
        initial_guess=(initial_guess if initial_guess is not None
                       else default_parameter_vector()),
        regularization_weight=regularization_weight,
        noise_model=noise_model,
    )


def predict_spectrum(params: SkinParameterVector,
                     lut: ForwardLUT,
                     wavelengths_nm,
                     db: Iterable[ExtinctionRecord]) -> Spectrum:
    """Forward-model reflectance of params on a wavelength grid.

    Raises OutOfGrid (annotated with the offending wavelength) when the
    parameterization leaves the table.
    """
    grid = np.asarray(
        list(wavelengths_nm)
        if not isinstance(wavelengths_nm, np.ndarray) else wavelengths_nm,
        dtype=np.float64)
    mu_a = _absorption_values(params.concentrations, db, grid)
    mu_s, g = scattering_spectrum(params.scatterer,
                                  tuple(float(w) for w in grid))
    mu_s_prime = mu_s * (1.0 - g)
    out = np.empty(grid.size, dtype=np.float64)
    for i in range(grid.size):
        try:
            out[i] = lut_reflectance(lut, (mu_a[i], mu_s_prime[i]))
        except OutOfGrid as exc:
            raise OutOfGrid(
                f"prediction left the table at {grid[i]:g} nm: {exc}",
                exc.coords) from exc
    return Spectrum(grid, params.calibration_factor * out,
                    SpectrumKind.REFLECTANCE)


def _absorption_values(conc: ChromophoreConcentrations,
                       db: Iterable[ExtinctionRecord],
                       grid: np.ndarray) -> np.ndarray:
    # same accumulation as absorption_spectrum, minus Spectrum wrapping
    records = {rec.chromophore_id: rec for rec in db}
    mu_a = np.zeros_like(grid)
    for chromo, c in conc.items():
        rec = records.get(chromo)
        if rec is None:
            raise MissingChromophore(f"no extinction record for {chromo!r}")
        mu_a += c * resample(rec.extinction, grid).values
    mu_a *= LN10 / 10.0
    return mu_a


class _Workspace:
    """Everything one fit needs, precomputed once.

    Parameters are handled in scaled units u = (theta - lo) / (hi - lo),
    so every free parameter lives in [0, 1] and finite-difference steps
    are comparable across decades of physical magnitude.
    """

    def __init__(self, measured: Spectrum, cfg: FitConfig,
                 lut: ForwardLUT, db: Iterable[ExtinctionRecord]):
        self.cfg = cfg
        self.lut = lut
        self.grid = measured.wavelengths_nm
        self.grid_tuple = tuple(float(w) for w in self.grid)
        self.r_meas = measured.values
        self.names = list(cfg.free_parameters)
        self.lo = np.array([cfg.bounds[n][0] for n in self.names])
        self.span = np.array(
            [cfg.bounds[n][1] - cfg.bounds[n][0] for n in self.names])
        self.guess = cfg.initial_guess
        self.u_guess = np.array([
            (get_parameter(self.guess, n) - lo) / sp
            for n, lo, sp in zip(self.names, self.lo, self.span)])

        records = {rec.chromophore_id: rec for rec in db}
        needed = set(self.guess.concentrations)
        needed.update(_CONC_PARAMS[n] for n in self.names
                      if n in _CONC_PARAMS)
        self.eps: dict[str, np.ndarray] = {}
        for key in needed:
            rec = records.get(key)
            if rec is None:
                raise MissingChromophore(
                    f"no extinction record for {key!r}")
            self.eps[key] = resample(rec.extinction, self.grid).values

        if cfg.noise_model is NoiseModel.PER_WAVELENGTH_STDERR:
            # the table's own Monte Carlo noise at the starting point,
            # frozen for the whole fit so the objective stays fixed
            mu_a, msp = self._optical_coords(self.guess)
            sigma = np.array([
                lut_stderr(lut, (mu_a[i], msp[i]))
                for i in range(self.grid.size)])
            self.sqrt_w = 1.0 / np.maximum(sigma, _SIGMA_FLOOR)
        else:
            self.sqrt_w = np.ones(self.grid.size)

    def _optical_coords(self, theta: SkinParameterVector):
        mu_a = np.zeros(self.grid.size)
        for chromo, c in theta.concentrations.items():
            mu_a += c * self.eps[chromo]
        mu_a *= LN10 / 10.0
        mu_s, g = scattering_spectrum(theta.scatterer, self.grid_tuple)
        return mu_a, mu_s * (1.0 - g)

    def assemble(self, u: np.ndarray) -> SkinParameterVector:
        return with_parameters(self.guess, self.names,
                               self.lo + u * self.span)

    def scaled_start(self, factor: float) -> np.ndarray | None:
        """Guess with free concentrations and density jointly rescaled,
        projected into bounds; None when that moves nothing."""
        u = self.u_guess.copy()
        for j, name in enumerate(self.names):
            if name in _SCALABLE:
                v = (get_parameter(self.guess, name) * factor
                     - self.lo[j]) / self.span[j]
                u[j] = min(max(v, 0.0), 1.0)
        if np.array_equal(u, self.u_guess):
            return None
        return u

    def residual(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(residual vector incl. regularization rows, raw prediction)."""
        theta = self.assemble(u)
        mu_a, msp = self._optical_coords(theta)
        pred = np.empty(self.grid.size)
        for i in range(self.grid.size):
            pred[i] = lut_reflectance(self.lut, (mu_a[i], msp[i]))
        pred *= theta.calibration_factor
        res = self.sqrt_w * (pred - self.r_meas)
        w = self.cfg.regularization_weight
        if w > 0.0:
            res = np.concatenate([res, math.sqrt(w) * (u - self.u_guess)])
        return res, pred

    def jacobian(self, u: np.ndarray, r_base: np.ndarray) -> np.ndarray:
        """Forward differences in scaled units; backward at the top bound.

        A column whose probes all leave the table is zeroed, which simply
        freezes that parameter for the step.
        """
        p = len(self.names)
        J = np.zeros((r_base.size, p))
        for j in range(p):
            for step in (_FD_STEP, -_FD_STEP):
                uj = u[j] + step
                if not 0.0 <= uj <= 1.0:
                    continue
                probe = u.copy()
                probe[j] = uj
                try:
                    r_probe, _ = self.residual(probe)
                except OutOfGrid:
                    continue
                J[:, j] = (r_probe - r_base) / step
                break
        return J


def fit(measured: Spectrum, cfg: FitConfig, lut: ForwardLUT,
        db: Iterable[ExtinctionRecord]) -> FitResult:
    """Estimate skin parameters from a measured reflectance spectrum.

    Runs the damped Gauss-Newton loop from the configured guess and,
    because the objective has a shallow valley along the joint
    absorption/scattering scale, from a few rescaled copies of it; the
    result with the smallest residual wins. Regularization and noise
    weights always refer to the original guess.
    """
    if measured.kind is not SpectrumKind.REFLECTANCE:
        raise ConfigInvalid("measured spectrum must be reflectance")
    try:
        ws = _Workspace(measured, cfg, lut, list(db))
    except OutOfGrid as exc:
        raise InfeasibleStart(
            f"initial guess not evaluable: {exc}") from exc
    best = _fit_single(ws, cfg, ws.u_guess.copy())
    for factor in _SCALE_SEEDS:
        if best.residual_norm == 0.0:
            break
        u0 = ws.scaled_start(factor)
        if u0 is None:
            continue
        try:
            candidate = _fit_single(ws, cfg, u0)
        except (InfeasibleStart, NonFiniteResidual):
            continue
        if candidate.residual_norm < best.residual_norm:
            best = candidate
    return best


def _fit_single(ws: _Workspace, cfg: FitConfig,
                u: np.ndarray) -> FitResult:
    """One Levenberg-Marquardt descent from the scaled start point u.

    Accepts only steps that lower the objective; stops on a relative
    decrease below convergence_tol, on max_iterations, or when damping
    escalation cannot find a downhill step.
    """
    try:
        res, pred = ws.residual(u)
    except OutOfGrid as exc:
        raise InfeasibleStart(
            f"initial guess not evaluable: {exc}") from exc
    F = float(res @ res)
    if not math.isfinite(F):
        raise NonFiniteResidual(f"objective at the start is {F!r}")

    trace = [F]
    lam = _LAMBDA_START
    iterations = 0
    converged = F == 0.0
    p = len(ws.names)
    eye = np.eye(p)

    while not converged and iterations < cfg.max_iterations:
        J = ws.jacobian(u, res)
        g = J.T @ res
        H = J.T @ J
        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                delta = np.linalg.solve(H + lam * eye, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            u_try = np.clip(u + delta, 0.0, 1.0)
            if np.array_equal(u_try, u):
                # projection swallowed the whole step
                lam *= 10.0
                continue
            try:
                res_try, pred_try = ws.residual(u_try)
            except OutOfGrid:
                lam *= 10.0
                continue
            F_try = float(res_try @ res_try)
            if not math.isfinite(F_try) or F_try >= F:
                lam *= 10.0
                continue
            drop = (F - F_try) / F
            u, res, pred, F = u_try, res_try, pred_try, F_try
            lam = max(lam / 10.0, _LAMBDA_MIN)
            iterations += 1
            trace.append(F)
            accepted = True
            if drop < cfg.convergence_tol or F == 0.0:
                converged = True
            break
        if not accepted:
            # No downhill step at any damping. A raw gradient norm is a bad
            # stationarity test here (curvature spans many decades once
            # regularization weighs in), so estimate the decrease a full
            # Newton step could still buy on the projected gradient; if that
            # is negligible against F, this is convergence, not a stall.
            interior_g = np.where(
                ((u <= 0.0) & (g > 0.0)) | ((u >= 1.0) & (g < 0.0)),
                0.0, g)
            try:
                newton = np.linalg.solve(H + _LAMBDA_MIN * eye, -interior_g)
                predicted = float(-interior_g @ newton)
            except np.linalg.LinAlgError:
                predicted = math.inf
            converged = predicted <= max(cfg.convergence_tol * F,
                                         _DECREASE_FLOOR)
            break

    estimate = ws.assemble(u)
    data_res = ws.sqrt_w * (pred - ws.r_meas)
    F_data = float(data_res @ data_res)
    dof = max(1, ws.grid.size - p)
    at_bound = {
        name: bool(u[j] <= _BOUND_ATOL or u[j] >= 1.0 - _BOUND_ATOL)
        for j, name in enumerate(ws.names)}
    predicted = Spectrum(ws.grid, pred.copy(), SpectrumKind.REFLECTANCE)
    return FitResult(
        estimate=estimate,
        residual_norm=math.sqrt(F),
        chi2_per_dof=F_data / dof,
        iterations=iterations,
        converged=converged,
        at_bound=at_bound,
        predicted=predicted,
        objective_trace=tuple(trace),
    )


def scan_objective(measured: Spectrum, cfg: FitConfig, lut: ForwardLUT,
                   db: Iterable[ExtinctionRecord], axis: str,
                   nodes: Sequence[float]) -> list[tuple[float, float]]:
    """Objective along one free parameter, others held at the guess.

    Nodes where the forward model leaves the table map to infinity.
    """
    if measured.kind is not SpectrumKind.REFLECTANCE:
        raise ConfigInvalid("measured spectrum must be reflectance")
    if axis not in cfg.free_parameters:
        raise ConfigInvalid(f"{axis!r} is not a free parameter")
    lo, hi = cfg.bounds[axis]
    values = [float(v) for v in nodes]
    for v in values:
        if not lo <= v <= hi:
            raise ConfigInvalid(
                f"scan node {v:g} outside [{lo:g}, {hi:g}] for {axis!r}")
    ws = _Workspace(measured, cfg, lut, list(db))
    j = ws.names.index(axis)
    out = []
    for v in values:
        u = ws.u_guess.copy()
        u[j] = (v - lo) / (hi - lo)
        try:
            res, _ = ws.residual(u)
            F = float(res @ res)
        except OutOfGrid:
            F = math.inf
        out.append((v, F))
    return out


# --- plain-dict interchange (service and CLI payloads) ------------------

def parameter_vector_to_dict(theta: SkinParameterVector) -> dict:
    dist = theta.scatterer.distribution
    if isinstance(dist, Monodisperse):
        dist_d = {"kind": "monodisperse", "radius_um": dist.radius_um}
    else:
        dist_d = {"kind": "log_normal",
                  "median_radius_um": dist.median_radius_um,
                  "sigma_geom": dist.sigma_geom}
    return {
        "concentrations": dict(theta.concentrations),
        "scatterer": {
            "distribution": dist_d,
            "number_density_per_mm3": theta.scatterer.number_density_per_mm3,
            "n_particle": theta.scatterer.n_particle,
            "n_medium": theta.scatterer.n_medium,
        },
        "calibration_factor": theta.calibration_factor,
    }


def parameter_vector_from_dict(data: Mapping) -> SkinParameterVector:
    try:
        conc = ChromophoreConcentrations(data["concentrations"])
        scat_d = data["scatterer"]
        dist_d = scat_d["distribution"]
        kind = dist_d["kind"]
        if kind == "monodisperse":
            dist = Monodisperse(float(dist_d["radius_um"]))
        elif kind == "log_normal":
            dist = LogNormal(float(dist_d["median_radius_um"]),
                             float(dist_d["sigma_geom"]))
        else:
            raise ConfigInvalid(f"unknown distribution kind {kind!r}")
        scat = ScattererModel(
            dist,
            float(scat_d["number_density_per_mm3"]),
            float(scat_d.get("n_particle", DEFAULT_N_PARTICLE)),
            float(scat_d.get("n_medium", DEFAULT_N_MEDIUM)),
        )
        return SkinParameterVector(
            conc, scat, float(data.get("calibration_factor", 1.0)))
    except ConfigInvalid:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad parameter vector: {exc}") from exc


def fit_config_to_dict(cfg: FitConfig) -> dict:
    return {
        "free_parameters": list(cfg.free_parameters),
        "bounds": {k: list(v) for k, v in cfg.bounds.items()},
        "initial_guess": parameter_vector_to_dict(cfg.initial_guess),
        "regularization_weight": cfg.regularization_weight,
        "max_iterations": cfg.max_iterations,
        "convergence_tol": cfg.convergence_tol,
        "noise_model": cfg.noise_model.value,
    }


def fit_config_from_dict(data: Mapping) -> FitConfig:
    try:
        return FitConfig(
            free_parameters=tuple(data["free_parameters"]),
            bounds={str(k): (float(v[0]), float(v[1]))
                    for k, v in data["bounds"].items()},
            initial_guess=parameter_vector_from_dict(data["initial_guess"]),
            regularization_weight=float(
                data.get("regularization_weight", 0.0)),
            max_iterations=int(data.get("max_iterations", 200)),
            convergence_tol=float(data.get("convergence_tol", 1e-10)),
            noise_model=NoiseModel(data.get("noise_model", "uniform")),
        )
    except ConfigInvalid:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad fit config: {exc}") from exc


def fit_result_to_dict(result: FitResult) -> dict:
    return {
        "estimate": parameter_vector_to_dict(result.estimate),
        "residual_norm": result.residual_norm,
        "chi2_per_dof": result.chi2_per_dof,
        "iterations": result.iterations,
        "converged": result.converged,
        "at_bound": dict(result.at_bound),
        "predicted": {
            "wavelengths_nm": result.predicted.wavelengths_nm.tolist(),
            "values": result.predicted.values.tolist(),
        },
        "objective_trace": list(result.objective_trace),
    }


@dataclass(frozen=True)
class AnalysisConfig:
    """A complete analysis request: fit settings, table name, and band.

    The band is the wavelength grid the stored reflectance is resampled
    onto before fitting; lut_name selects a table from the service's LUT
    directory.
    """

    fit: FitConfig
    lut_name: str = "default"
    grid_start_nm: float = DEFAULT_FIT_START_NM
    grid_stop_nm: float = DEFAULT_FIT_STOP_NM
    grid_step_nm: float = DEFAULT_FIT_STEP_NM

    def __post_init__(self):
        if not isinstance(self.fit, FitConfig):
            raise ConfigInvalid("fit must be a FitConfig")
        if not self.lut_name or not str(self.lut_name).strip():
            raise ConfigInvalid("lut_name must not be empty")
        vals = []
        for name in ("grid_start_nm", "grid_stop_nm", "grid_step_nm"):
            v = float(getattr(self, name))
            object.__setattr__(self, name, v)
            vals.append(v)
        start, stop, step = vals
        if not all(math.isfinite(v) for v in vals) or step <= 0.0 \
                or stop <= start:
            raise ConfigInvalid(
                "wavelength band needs start < stop and step > 0")

    def grid(self) -> np.ndarray:
        return default_grid(self.grid_start_nm, self.grid_stop_nm,
                            self.grid_step_nm)


def default_analysis_config(**overrides) -> AnalysisConfig:
    overrides.setdefault("fit", default_fit_config())
    return AnalysisConfig(**overrides)


def analysis_config_to_dict(cfg: AnalysisConfig) -> dict:
    return {
        "fit": fit_config_to_dict(cfg.fit),
        "lut": cfg.lut_name,
        "grid": {
            "start_nm": cfg.grid_start_nm,
            "stop_nm": cfg.grid_stop_nm,
            "step_nm": cfg.grid_step_nm,
        },
    }


def analysis_config_from_dict(data: Mapping) -> AnalysisConfig:
    try:
        grid = data.get("grid", {})
        return AnalysisConfig(
            fit=fit_config_from_dict(data["fit"]),
            lut_name=str(data.get("lut", "default")),
            grid_start_nm=float(grid.get("start_nm",
                                         DEFAULT_FIT_START_NM)),
            grid_stop_nm=float(grid.get("stop_nm", DEFAULT_FIT_STOP_NM)),
            grid_step_nm=float(grid.get("step_nm", DEFAULT_FIT_STEP_NM)),
        )
    except ConfigInvalid:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ConfigInvalid(f"bad analysis config: {exc}") from exc
