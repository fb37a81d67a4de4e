"""Batch and operations tooling around the store, tables, and fits.

Exit codes are a stable contract: 0 success, 2 parse error, 3 validation
or domain error, 4 store or I/O error, 5 internal error. Every command
is deterministic given identical inputs, seeds, and store state.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    CaseClosed,
    CaseNotFound,
    ChecksumMismatch,
    ConfigInvalid,
    CoverageGap,
    CsvFormatError,
    DegenerateReference,
    GridMismatch,
    GridOutOfRange,
    GridTooLarge,
    IllegalTransition,
    ImmutableRecord,
    InfeasibleStart,
    InvalidStack,
    JobNotFound,
    LutFormatError,
    MeasurementNotFound,
    MissingChromophore,
    NonConvergent,
    NonFiniteResidual,
    OutOfGrid,
    StoreError,
    StoreLocked,
    Unauthorized,
    ValidationFailed,
    ZeroTotalHemoglobin,
)
from .extinction import load_extinction_db
from .inverse import (
    AnalysisConfig,
    analysis_config_from_dict,
    default_analysis_config,
    default_fit_config,
    fit,
    fit_result_to_dict,
)
from .mcrt import (
    ForwardLUT,
    Layer,
    LayerStack,
    SimConfig,
    build_lut,
    default_axes,
    default_build_config,
    load_lut,
    save_lut,
    simulate,
    single_layer_template,
)
from .mie import SphereQuery, mie_single
from .spectral import (
    COHB,
    HB,
    O2HB,
    Spectrum,
    SpectrumKind,
    cohb_fraction,
    normalize_reflectance,
    read_bundle_csv,
    read_spectrum_csv,
    resample,
    write_spectrum_csv,
)
from .eln import Role, Store, StoreLock, User

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DOMAIN = 3
EXIT_STORE = 4
EXIT_INTERNAL = 5

_PARSE_ERRORS = (CsvFormatError, LutFormatError, json.JSONDecodeError)
_DOMAIN_ERRORS = (
    ValidationFailed, ConfigInvalid, Unauthorized, CaseNotFound,
    CaseClosed, MeasurementNotFound, JobNotFound, IllegalTransition,
    ImmutableRecord, GridMismatch, DegenerateReference, GridOutOfRange,
    MissingChromophore, ZeroTotalHemoglobin, OutOfGrid, InfeasibleStart,
    NonFiniteResidual, NonConvergent, InvalidStack, GridTooLarge,
    CoverageGap, ChecksumMismatch,
)
_STORE_ERRORS = (StoreLocked, StoreError, OSError)


@contextmanager
def _open_store(path: str):
    """Exclusive store access; refuses a store a running service holds."""
    lock = StoreLock(path)
    lock.acquire("livorlab cli")
    try:
        store = Store(path)
        try:
            yield store
        finally:
            store.close()
    finally:
        lock.release()


def _resolve_actor(store: Store, user_id: str | None) -> User:
    """Local commands act as a named store user.

    A store with no users at all (single-operator bench setup) gets a
    synthetic local admin; once users exist, the name must match one.
    """
    con = store._conn()
    if con.execute("SELECT 1 FROM users LIMIT 1").fetchone() is None:
        return User(user_id or "cli", "local operator", Role.ADMIN)
    if not user_id:
        raise ValidationFailed(
            "store has named users; pass --as <user_id>")
    user = store.get_user(user_id)
    if user is None:
        raise ValidationFailed(f"unknown user {user_id!r}")
    return user


# --- ingest --------------------------------------------------------------

def cmd_ingest(args) -> int:
    paths = [Path(p) for p in args.files]
    if len(paths) == 1:
        sample, white, dark = read_bundle_csv(paths[0].read_text())
        texts = tuple(write_spectrum_csv(s) for s in (sample, white, dark))
    elif len(paths) == 3:
        texts = tuple(p.read_text() for p in paths)
    else:
        raise ValidationFailed(
            "pass one 4-column bundle file or three files: sample white "
            "dark")
    # fail before the store sees anything, so a bad bundle cannot leave
    # a freshly created empty case behind
    normalize_reflectance(*(read_spectrum_csv(t) for t in texts))
    with _open_store(args.store) as store:
        actor = _resolve_actor(store, args.actor_id)
        if args.case:
            case_id = args.case
        else:
            case = store.create_case(
                actor, external_ref=args.external_ref,
                body_site=args.body_site,
                postmortem_interval_hours=args.pmi, notes=args.notes)
            case_id = case.case_id
            print(f"case {case_id}")
        record = store.attach_measurement(actor, case_id, *texts)
        print(record.measurement_id)
    return EXIT_OK


# --- lut build / inspect -------------------------------------------------

def _axes_from_config(data: dict) -> dict[str, np.ndarray]:
    axes = {}
    for name in ("mu_a", "mu_s_prime"):
        spec = data.get(name)
        if spec is None:
            axes[name] = default_axes()[name]
            continue
        try:
            start, stop = float(spec["start"]), float(spec["stop"])
            nodes = int(spec["nodes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(
                f"axis {name} needs start/stop/nodes: {exc}") from exc
        if not (0.0 < start < stop) and not (name == "mu_a"
                                             and start == 0.0):
            raise ConfigInvalid(f"axis {name} needs 0 < start < stop")
        if nodes < 1:
            raise ConfigInvalid(f"axis {name} needs >= 1 nodes")
        axes[name] = (np.geomspace(start, stop, nodes) if start > 0.0
                      else np.linspace(start, stop, nodes))
    return axes


def _lut_summary(lut: ForwardLUT, out=print) -> None:
    for name in lut.axis_names:
        ax = lut.axis(name)
        out(f"axis {name}: {ax.size} nodes in [{ax[0]:g}, {ax[-1]:g}] /mm")
    out(f"reflectance: min {lut.values.min():.6g} "
        f"max {lut.values.max():.6g}")
    out(f"max stderr: {lut.stderr.max():.3g}")
    prov = lut.provenance.get("config", {})
    if prov:
        out(f"photons/node: {prov.get('photon_count', '?')}  "
            f"seed: {prov.get('seed', '?')}")


def cmd_lut_build(args) -> int:
    axes = default_axes()
    if args.grid_config:
        data = json.loads(Path(args.grid_config).read_text())
        if not isinstance(data, dict):
            raise ConfigInvalid("grid config must be an object")
        axes = _axes_from_config(data)
    cfg = default_build_config(seed=args.seed)
    if args.photons:
        cfg = SimConfig(photon_count=args.photons, seed=args.seed)
    lut = build_lut(single_layer_template(), axes, cfg,
                    workers=args.workers)
    out_path = Path(args.out)
    save_lut(lut, out_path)
    _lut_summary(lut)
    print(f"wrote {out_path} ({out_path.stat().st_size} bytes)")
    return EXIT_OK


def cmd_lut_inspect(args) -> int:
    lut = load_lut(args.path)
    print(f"{args.path}")
    _lut_summary(lut)
    return EXIT_OK


# --- fit -----------------------------------------------------------------

def _load_analysis_config(path: str | None) -> AnalysisConfig:
    if path is None:
        return default_analysis_config()
    return analysis_config_from_dict(json.loads(Path(path).read_text()))


def _resolve_lut(args, cfg: AnalysisConfig) -> ForwardLUT:
    if args.lut:
        return load_lut(args.lut)
    path = Path(args.luts) / f"{cfg.lut_name}.flut"
    if not path.is_file():
        raise ValidationFailed(
            f"lut '{cfg.lut_name}' not found in {args.luts}; pass --lut")
    return load_lut(path)


def _print_fit_report(result, out=print) -> None:
    est = result.estimate
    out(f"converged: {'yes' if result.converged else 'NO'}  "
        f"iterations: {result.iterations}")
    out(f"residual_norm: {result.residual_norm:.6g}")
    out(f"chi2_per_dof: {result.chi2_per_dof:.6g}")
    out("estimate:")
    conc = est.concentrations
    for label, value in (
            ("c_hb [mmol/L]", conc.get(HB)),
            ("c_o2hb [mmol/L]", conc.get(O2HB)),
            ("c_cohb [mmol/L]", conc.get(COHB)),
    ):
        out(f"  {label:24s} {value:.6g}")
    try:
        frac = cohb_fraction(conc)
        out(f"  {'cohb_fraction':24s} {frac:.6g}")
    except ZeroTotalHemoglobin:
        pass
    out(f"  {'number_density [1/mm^3]':24s} "
        f"{est.scatterer.number_density_per_mm3:.6g}")
    out(f"  {'calibration_factor':24s} {est.calibration_factor:.6g}")
    bound = [name for name, hit in sorted(result.at_bound.items()) if hit]
    out(f"at bound: {', '.join(bound) if bound else 'none'}")


def _plot_fit(measured: Spectrum, result, dest: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(measured.wavelengths_nm, measured.values, "o", ms=3,
            label="measured")
    ax.plot(result.predicted.wavelengths_nm, result.predicted.values,
            "-", label="predicted")
    ax.set_xlabel("wavelength / nm")
    ax.set_ylabel("reflectance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(dest, dpi=150)
    plt.close(fig)


def cmd_fit(args) -> int:
    cfg = _load_analysis_config(args.config)
    lut = _resolve_lut(args, cfg)
    if args.measurement:
        with _open_store(args.store) as store:
            record = store.get_measurement(args.measurement)
            stored = store.read_spectrum(record.reflectance_ref)
        source = f"measurement {args.measurement}"
    elif args.spectrum:
        stored = read_spectrum_csv(Path(args.spectrum).read_text(),
                                   SpectrumKind.REFLECTANCE)
        source = args.spectrum
    else:
        raise ValidationFailed("pass --measurement ID or --spectrum FILE")
    measured = resample(stored, cfg.grid())
    db = load_extinction_db()
    result = fit(measured, cfg.fit, lut, db)
    if args.json:
        print(json.dumps(fit_result_to_dict(result), indent=2,
                         sort_keys=True))
    else:
        print(f"fit of {source}")
        _print_fit_report(result)
    if args.plot:
        _plot_fit(measured, result, args.plot)
        print(f"plot written to {args.plot}")
    return EXIT_OK


# --- export --------------------------------------------------------------

def cmd_export(args) -> int:
    with _open_store(args.store) as store:
        root = store.export_case(args.case, args.out)
    print(f"exported to {root}")
    return EXIT_OK


# --- validate ------------------------------------------------------------

# independently computed partial-wave sums (subset of the full oracle
# table used by the test suite)
_MIE_CHECKS = (
    (0.5, 1.33 + 0j, 0.006773139883838049, 0.00677313988383805),
    (5.0, 1.5 + 0j, 3.927826731583357, 3.927826731583357),
    (50.0, 1.33 + 0.001j, 1.9973756692152158, 1.8291077093400248),
)

# round-trip probe: a reflectance spectrum generated from known skin
# parameters through the probe table below. Rebuilding the table is
# deterministic, so a correct install recovers the generating
# parameters to machine precision; any corruption of the extinction
# data or transport chain shows up as a recovery miss.
_PROBE_SIM = dict(photon_count=2000, seed=7)
_PROBE_AXES = dict(mu_a=(0.005, 5.0, 8), mu_s_prime=(0.3, 10.0, 6))
_PROBE_GRID = (500.0, 4.0, 26)
_PROBE_TRUTH = {HB: 0.03, O2HB: 0.05, COHB: 0.02}
_PROBE_REFLECTANCE = (
    0.44272871438151024, 0.4335776013525952, 0.4157539280048896,
    0.3960930185848324, 0.3716806056379856, 0.34627212414692665,
    0.32283026256769765, 0.30448534657758464, 0.29778736844400555,
    0.29252177577854344, 0.28892758791508727, 0.2897500306994499,
    0.29550204619884163, 0.31299160335572357, 0.35360461037227287,
    0.3777080172849792, 0.36243554087054447, 0.33724769779487207,
    0.30585308481541806, 0.2923556648747827, 0.31374825945083207,
    0.3731598276785239, 0.431553702015467, 0.49703424052097533,
    0.5578337636985509, 0.5883283923235801,
)


def _check_conservation(quick: bool, seed: int):
    rng = np.random.default_rng(seed)
    n_stacks = 5 if quick else 20
    photons = 2_000 if quick else 10_000
    worst = 0.0
    for _ in range(n_stacks):
        stack = LayerStack((Layer(
            float(rng.uniform(0.0, 2.0)), float(rng.uniform(0.1, 20.0)),
            float(rng.uniform(0.0, 0.95)), 1.4,
            float(rng.uniform(0.5, 5.0))),), 1.0)
        res = simulate(stack, SimConfig(photon_count=photons,
                                        seed=int(rng.integers(2 ** 32)),
                                        enable_roulette=False), workers=1)
        worst = max(worst, abs(res.tally_sum - 1.0))
    return worst <= 1e-9, (f"{n_stacks} stacks, worst |sum - 1| = "
                           f"{worst:.3g}")


def _check_beer_lambert(quick: bool):
    photons = 100_000 if quick else 1_000_000
    stack = LayerStack((Layer(1.0, 0.0, 0.0, 1.0, 1.0),), 1.0)
    res = simulate(stack, SimConfig(photon_count=photons, seed=42,
                                    enable_roulette=False), workers=1)
    expected = math.exp(-1.0)
    se = math.sqrt(expected * (1.0 - expected) / photons)
    err = abs(res.transmittance - expected)
    ok = err <= 3.0 * se and err <= 5e-3
    return ok, f"|T - 1/e| = {err:.3g} (3 se = {3 * se:.3g})"


def _check_mie_oracle():
    worst = 0.0
    for x, m, q_ext, q_sca in _MIE_CHECKS:
        res = mie_single(SphereQuery(x, m))
        worst = max(worst, abs(res.q_ext - q_ext) / q_ext,
                    abs(res.q_sca - q_sca) / q_sca)
    return worst <= 1e-8, (f"{len(_MIE_CHECKS)} spheres, worst rel err "
                           f"{worst:.3g}")


def _check_rayleigh():
    x, m = 1e-3, 1.5 + 0j
    res = mie_single(SphereQuery(x, m))
    analytic = (8.0 / 3.0) * x ** 4 * abs((m ** 2 - 1)
                                          / (m ** 2 + 2)) ** 2
    err = abs(res.q_sca - analytic) / analytic
    return err <= 1e-3, f"x = 1e-3 rel err {err:.3g}"


def _probe_lut() -> ForwardLUT:
    axes = {name: np.geomspace(lo, hi, n)
            for name, (lo, hi, n) in _PROBE_AXES.items()}
    return build_lut(single_layer_template(), axes,
                     SimConfig(**_PROBE_SIM), workers=1)


def _check_round_trip_fit(db):
    start, step, count = _PROBE_GRID
    grid = start + step * np.arange(count)
    measured = Spectrum(grid, np.array(_PROBE_REFLECTANCE),
                        SpectrumKind.REFLECTANCE)
    lut = _probe_lut()
    result = fit(measured, default_fit_config(), lut, db)
    conc = result.estimate.concentrations
    worst = max(abs(conc.get(key) - value) / value
                for key, value in _PROBE_TRUTH.items())
    ok = worst <= 1e-3 and result.converged
    return ok, f"worst concentration rel err {worst:.3g}"


def run_validation(quick: bool = False, seed: int = 0, db=None,
                   report=print) -> bool:
    """Physics property suite; returns True when every check passes."""
    if db is None:
        db = load_extinction_db()
    checks = (
        ("energy conservation", lambda: _check_conservation(quick, seed)),
        ("beer-lambert slab", lambda: _check_beer_lambert(quick)),
        ("mie oracle", _check_mie_oracle),
        ("rayleigh limit", _check_rayleigh),
        ("round-trip fit", lambda: _check_round_trip_fit(db)),
    )
    all_ok = True
    for name, check in checks:
        ok, detail = check()
        all_ok &= ok
        report(f"{'PASS' if ok else 'FAIL'}  {name:20s} {detail}")
    return all_ok


def cmd_validate(args) -> int:
    ok = run_validation(quick=args.quick, seed=args.seed)
    print("all checks passed" if ok else "VALIDATION FAILED")
    return EXIT_OK if ok else EXIT_DOMAIN


# --- serve ---------------------------------------------------------------

def cmd_serve(args) -> int:
    from .api import ServiceConfig, load_service_config, run_service

    cfg = load_service_config(args.config)
    cfg = ServiceConfig(
        addr=args.addr or cfg.addr,
        store_path=args.store or cfg.store_path,
        lut_dir=args.luts or cfg.lut_dir,
        workers=cfg.workers if args.workers is None else args.workers,
        static_dir=args.static or cfg.static_dir,
    )
    run_service(cfg)
    return EXIT_OK


# --- argument surface ----------------------------------------------------

def _add_store_arg(parser, required_default="livorlab.db"):
    parser.add_argument("--store", default=required_default,
                        help="store database path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="livorlab",
        description="reflectance spectrometry notebook and analysis "
                    "tooling")
    parser.add_argument("--version", action="version",
                        version=f"livorlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="store a raw measurement bundle")
    _add_store_arg(p)
    p.add_argument("--as", dest="actor_id", default=None,
                   metavar="USER", help="acting store user")
    p.add_argument("--case", default=None,
                   help="existing case id (default: create a new case)")
    p.add_argument("--external-ref", default="")
    p.add_argument("--body-site", default="")
    p.add_argument("--pmi", type=float, default=None,
                   help="postmortem interval, hours")
    p.add_argument("--notes", default="")
    p.add_argument("files", nargs="+",
                   help="one 4-column bundle or: sample white dark")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("lut", help="transport table tooling")
    lutsub = p.add_subparsers(dest="lut_command", required=True)
    b = lutsub.add_parser("build", help="simulate a table")
    b.add_argument("--out", default="default.flut")
    b.add_argument("--grid-config", default=None,
                   help="JSON axis spec {mu_a: {start, stop, nodes}, ...}")
    b.add_argument("--photons", type=int, default=None,
                   help="photons per node")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=None)
    b.set_defaults(func=cmd_lut_build)
    i = lutsub.add_parser("inspect", help="describe a table file")
    i.add_argument("path")
    i.set_defaults(func=cmd_lut_inspect)

    p = sub.add_parser("fit", help="estimate skin parameters")
    _add_store_arg(p)
    p.add_argument("--measurement", default=None, metavar="ID")
    p.add_argument("--spectrum", default=None, metavar="FILE",
                   help="reflectance CSV instead of a stored measurement")
    p.add_argument("--config", default=None,
                   help="analysis config JSON")
    p.add_argument("--lut", default=None, help="table file")
    p.add_argument("--luts", default="luts",
                   help="table directory for named lookups")
    p.add_argument("--plot", default=None, metavar="FILE",
                   help="write measured-vs-predicted image")
    p.add_argument("--json", action="store_true",
                   help="machine-readable result")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("export", help="write one case as a directory")
    _add_store_arg(p)
    p.add_argument("--case", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("validate", help="run the physics property suite")
    p.add_argument("--quick", action="store_true",
                   help="reduced photon budgets, completes in well under "
                        "a minute")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("serve", help="run the network service")
    p.add_argument("--config", default=None, help="service config JSON")
    p.add_argument("--store", default=None)
    p.add_argument("--addr", default=None)
    p.add_argument("--luts", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--static", default=None,
                   help="directory of built client assets to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except _DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except _STORE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STORE
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
