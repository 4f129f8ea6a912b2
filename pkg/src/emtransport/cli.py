"""Command-line front end: scenario parsing, subcommand dispatch, manifests.

Subcommands
-----------
``modes``     print mode frequencies and polarization vectors at one (x, k)
``trace``     integrate a single ray and dump its path as CSV
``xsection``  tabulate differential and total scattering cross-sections
``rte``       run the Monte Carlo transport solver on a scenario file
``wigner``    run the phase-space transform checks and export a reference grid

All subcommands honor ``--config`` (TOML scenario file), ``--seed``,
``--workers``, ``--out`` and ``--deterministic``, and every run writes a
``manifest.json`` recording the scenario hash, seed, tool version, timing,
and the list of output files.  In deterministic mode the timing field is
omitted so that re-running an identical configuration reproduces every
artifact, the manifest included, bit for bit.

Scenario files are TOML tables (``medium``, ``spectrum``, ``source``,
``numerics``, ``binning``, ``outputs`` plus the top-level ``horizon`` and
``schema`` keys); unknown keys are rejected with their full path.  All
quantities are in c0-normalized units: lengths in background wavelengths of
the unit-speed medium, times in their transit times.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

try:  # python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on python 3.10
    import tomli as tomllib  # type: ignore[no-redef]

from emtransport import __version__
from emtransport.dispersion import (
    ChiralityOutOfRange,
    LinearProfile,
    OpticalResponse,
    eigen_decompose,
    propagating_families,
)
from emtransport.media import (
    ExponentialPSD,
    GaussianPSD,
    SpectralModel,
    chiral_channels,
    isotropic_channels,
)
from emtransport.raytrace import Box, RayState, save_ray_path, trace_ray
from emtransport.rte_mc import (
    BinningSpec,
    ConfigInvalid,
    Numerics,
    Scenario,
    SourceSpec,
    _json_safe,
    run_simulation,
    save_histogram,
    validate_scenario,
)
from emtransport.scattering import (
    family_by_label,
    save_differential_table,
    save_total_table,
)
from emtransport.wigner import (
    SampledField,
    discrete_wigner,
    free_transport_check,
    kirchhoff_spherical_mean,
    save_phase_space,
    uniform_grid,
    wkb_field,
)

__all__ = [
    "RunManifest",
    "dispatch",
    "load_config",
    "main",
    "parse_scenario",
]


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

_NUMBER = (int, float)
_SCHEMA: dict[str, Any] = {
    "schema": int,
    "horizon": _NUMBER,
    "medium": {
        "kind": str,
        "epsilon": _NUMBER,
        "mu": _NUMBER,
        "kappa": _NUMBER,
        "plasma": _NUMBER,
        "resonance": _NUMBER,
        "rate": _NUMBER,
        "gradient": list,
        "offset": _NUMBER,
    },
    "spectrum": {
        "kind": str,
        "psd": str,
        "corr_length": _NUMBER,
        "amplitude": _NUMBER,
        "rho": _NUMBER,
        "impedance": _NUMBER,
        "channels": list,
    },
    "source": {
        "mode": str,
        "knorm": _NUMBER,
        "count": int,
        "direction": list,
        "position": list,
        "cloud": list,
        "coherence": list,
        "coherence_imag": list,
    },
    "numerics": {
        "dt": _NUMBER,
        "seed": int,
        "workers": int,
        "nbatches": int,
        "integrator": str,
        "ncos": int,
        "nphi": int,
        "bound_safety": _NUMBER,
        "proposal_block": int,
    },
    "binning": {
        "box": list,
        "nx": list,
        "ncos": int,
        "nphi": int,
        "knorm_edges": list,
    },
    "outputs": {"directory": str, "stem": str},
}


def _type_name(spec: Any) -> str:
    if spec is _NUMBER:
        return "number"
    if spec is list:
        return "array"
    if spec is str:
        return "string"
    return "integer"


def _check_keys(
    table: Mapping[str, Any], schema: Mapping[str, Any], prefix: str, problems: list[str]
) -> None:
    for key, value in table.items():
        path = f"{prefix}{key}"
        if key not in schema:
            problems.append(f"unknown key: {path}")
            continue
        spec = schema[key]
        if isinstance(spec, dict):
            if isinstance(value, dict):
                _check_keys(value, spec, f"{path}.", problems)
            else:
                problems.append(f"{path}: expected a table")
        elif isinstance(value, bool) or not isinstance(value, spec):
            problems.append(f"{path}: expected {_type_name(spec)}")


def load_config(path: str | Path) -> dict:
    """Parse a TOML scenario file and reject unknown or mistyped keys."""
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid([f"config file not found: {path}"])
    try:
        cfg = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid([f"config parse error: {exc}"]) from exc
    problems: list[str] = []
    _check_keys(cfg, _SCHEMA, "", problems)
    if cfg.get("schema", 1) != 1:
        problems.append(f"schema: unsupported version {cfg.get('schema')} (expected 1)")
    if problems:
        raise ConfigInvalid(problems)
    return cfg


# ---------------------------------------------------------------------------
# config -> domain objects
# ---------------------------------------------------------------------------

_MEDIUM_KEYS = {
    "isotropic": {"kind", "epsilon", "mu", "gradient", "offset"},
    "lorentz": {"kind", "epsilon", "mu", "plasma", "resonance", "rate", "gradient", "offset"},
    "chiral": {"kind", "epsilon", "mu", "kappa", "gradient", "offset"},
}


def build_medium(cfg: Mapping[str, Any]) -> OpticalResponse:
    """Background medium from the ``[medium]`` table (vacuum when absent)."""
    med = cfg.get("medium", {})
    kind = med.get("kind", "isotropic")
    allowed = _MEDIUM_KEYS.get(kind)
    if allowed is None:
        raise ConfigInvalid(
            [f"medium.kind: unknown kind {kind!r} (isotropic, lorentz, chiral)"]
        )
    stray = sorted(set(med) - allowed)
    if stray:
        raise ConfigInvalid(
            [f"medium.{key}: not valid for kind = {kind!r}" for key in stray]
        )
    profile = None
    if "gradient" in med:
        profile = LinearProfile(
            slope=med["gradient"], offset=float(med.get("offset", 1.0))
        )
    eps = float(med.get("epsilon", 1.0))
    mu = float(med.get("mu", 1.0))
    if kind == "isotropic":
        return OpticalResponse.isotropic(eps, mu, profile=profile)
    if kind == "lorentz":
        return OpticalResponse.lorentz(
            eps,
            mu,
            plasma=float(med.get("plasma", 1.0)),
            resonance=float(med.get("resonance", 0.0)),
            rate=float(med.get("rate", 0.0)),
            profile=profile,
        )
    try:
        return OpticalResponse.chiral(eps, mu, float(med.get("kappa", 0.0)), profile=profile)
    except ChiralityOutOfRange as exc:
        raise ConfigInvalid([f"medium.kappa: chirality out of range ({exc})"]) from exc


_CHANNELS = {"isotropic": ("eps", "mu"), "chiral": ("a", "b")}


def build_spectrum(cfg: Mapping[str, Any]) -> SpectralModel | None:
    """Fluctuation model from the ``[spectrum]`` table (None when absent)."""
    spec = cfg.get("spectrum")
    if spec is None:
        return None
    kind = spec.get("kind", "isotropic")
    if kind not in _CHANNELS:
        raise ConfigInvalid([f"spectrum.kind: unknown kind {kind!r} (isotropic, chiral)"])
    psd_name = spec.get("psd", "gaussian")
    maker = {"gaussian": GaussianPSD, "exponential": ExponentialPSD}.get(psd_name)
    if maker is None:
        raise ConfigInvalid(
            [f"spectrum.psd: unknown form {psd_name!r} (gaussian, exponential)"]
        )
    lc = float(spec.get("corr_length", 1.0))
    psd = maker(lc)
    first, second = _CHANNELS[kind]
    channels = spec.get("channels", [first])
    stray = sorted(set(channels) - {first, second})
    if stray:
        raise ConfigInvalid(
            [f"spectrum.channels: unknown channel {c!r} for kind {kind!r}" for c in stray]
        )
    kwargs = dict(
        rho=float(spec.get("rho", 0.0)),
        amplitude=float(spec.get("amplitude", 1.0)),
        corr_length=lc,
    )
    first_psd = psd if first in channels else None
    second_psd = psd if second in channels else None
    if kind == "isotropic":
        return isotropic_channels(first_psd, second_psd, **kwargs)
    return chiral_channels(
        first_psd, second_psd, impedance=float(spec.get("impedance", 1.0)), **kwargs
    )


def _pairs_box(pairs: Any, path: str) -> Box:
    arr = np.asarray(pairs, dtype=float)
    if arr.shape != (3, 2):
        raise ConfigInvalid([f"{path}: expected three [lo, hi] pairs"])
    return Box(lower=arr[:, 0], upper=arr[:, 1])


def _coherence(src: Mapping[str, Any]) -> np.ndarray | None:
    if "coherence" not in src:
        if "coherence_imag" in src:
            raise ConfigInvalid(["source.coherence_imag: requires source.coherence"])
        return None
    w = np.asarray(src["coherence"], dtype=complex)
    if "coherence_imag" in src:
        imag = np.asarray(src["coherence_imag"], dtype=float)
        if imag.shape != w.shape:
            raise ConfigInvalid(["source.coherence_imag: shape mismatch with source.coherence"])
        w = w + 1j * imag
    return w


def scenario_from_config(cfg: Mapping[str, Any]) -> Scenario:
    """Assemble and validate a full transport scenario from a parsed config."""
    medium = build_medium(cfg)
    spectrum = build_spectrum(cfg)

    problems = []
    src = cfg.get("source", {})
    for key in ("mode", "knorm", "count"):
        if key not in src:
            problems.append(f"source.{key}: required")
    if "horizon" not in cfg:
        problems.append("horizon: required")
    bins = cfg.get("binning", {})
    if "box" not in bins:
        problems.append("binning.box: required")
    if problems:
        raise ConfigInvalid(problems)

    source = SourceSpec(
        mode=src["mode"],
        knorm=float(src["knorm"]),
        count=int(src["count"]),
        direction=tuple(src["direction"]) if "direction" in src else None,
        position=tuple(src.get("position", (0.0, 0.0, 0.0))),
        cloud=_pairs_box(src["cloud"], "source.cloud") if "cloud" in src else None,
        coherence=_coherence(src),
    )
    binning = BinningSpec(
        box=_pairs_box(bins["box"], "binning.box"),
        nx=tuple(int(n) for n in bins.get("nx", (1, 1, 1))),
        ncos=int(bins.get("ncos", 1)),
        nphi=int(bins.get("nphi", 1)),
        knorm_edges=tuple(float(e) for e in bins["knorm_edges"])
        if "knorm_edges" in bins
        else None,
    )
    num = dict(cfg.get("numerics", {}))
    for key in ("dt", "bound_safety"):
        if key in num:
            num[key] = float(num[key])
    numerics = Numerics(**num)

    scenario = Scenario(
        medium=medium,
        source=source,
        horizon=float(cfg["horizon"]),
        binning=binning,
        spectrum=spectrum,
        numerics=numerics,
    )
    validate_scenario(scenario)
    return scenario


def parse_scenario(path: str | Path) -> Scenario:
    """Read, schema-check, and validate a scenario file."""
    return scenario_from_config(load_config(path))


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    """Reproducibility record emitted next to every run's artifacts.

    ``timing`` is wall-clock seconds, or None in deterministic mode so that
    identical inputs yield byte-identical manifests.
    """

    command: str
    scenario_hash: str
    seed: int
    version: str
    timing: float | None
    outputs: tuple[str, ...]

    def write(self, directory: Path) -> Path:
        path = directory / "manifest.json"
        payload = {
            "command": self.command,
            "scenario_hash": self.scenario_hash,
            "seed": self.seed,
            "version": self.version,
            "timing": self.timing,
            "outputs": sorted(self.outputs),
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def params_hash(params: Mapping[str, Any]) -> str:
    """SHA-256 over the canonical JSON form of a parameter mapping."""
    text = json.dumps(_json_safe(dict(params)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _resolve_out(args: argparse.Namespace, cfg: Mapping[str, Any]) -> Path:
    if args.out is not None:
        directory = Path(args.out)
    else:
        directory = Path(cfg.get("outputs", {}).get("directory", "out"))
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _resolve_seed(args: argparse.Namespace, cfg: Mapping[str, Any]) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.get("numerics", {}).get("seed", 0))


def _stem(cfg: Mapping[str, Any], default: str) -> str:
    return cfg.get("outputs", {}).get("stem", default)


def _finish(
    args: argparse.Namespace,
    outdir: Path,
    *,
    command: str,
    run_hash: str,
    seed: int,
    started: float,
    outputs: list[str],
) -> None:
    timing = None if args.deterministic else time.perf_counter() - started
    manifest = RunManifest(
        command=command,
        scenario_hash=run_hash,
        seed=seed,
        version=__version__,
        timing=timing,
        outputs=tuple(outputs),
    )
    manifest.write(outdir)
    print(f"manifest: {outdir / 'manifest.json'} (hash {run_hash[:12]})")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _vec3(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values: {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _floats(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _default_label(medium: OpticalResponse) -> str:
    forward = [f for f in propagating_families(medium) if f.sign > 0]
    return forward[0].label


def _cmd_modes(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config) if args.config else {}
    medium = build_medium(cfg)
    x = np.asarray(args.x, dtype=float)
    k = np.asarray(args.k, dtype=float)
    decomposition = eigen_decompose(medium, k, x=x)

    print(f"x = ({', '.join(_fmt(v) for v in x)})  k = ({', '.join(_fmt(v) for v in k)})")
    repeated = [
        _fmt(b.omega) for b in decomposition.branches for _ in range(b.multiplicity)
    ]
    print("eigenvalues:", " ".join(repeated))
    for branch in decomposition.branches:
        print(f"branch omega = {_fmt(branch.omega)}  multiplicity = {branch.multiplicity}")
        for row in branch.right:
            cells = "  ".join(f"{c.real:+.6g}{c.imag:+.6g}j" for c in row)
            print(f"  {cells}")

    outdir = _resolve_out(args, cfg)
    run_hash = params_hash(
        {"command": "modes", "medium": medium, "x": tuple(x), "k": tuple(k)}
    )
    _finish(
        args,
        outdir,
        command="modes",
        run_hash=run_hash,
        seed=_resolve_seed(args, cfg),
        started=started,
        outputs=[],
    )
    return 0


def _cmd_trace(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config) if args.config else {}
    medium = build_medium(cfg)
    label = args.mode or _default_label(medium)
    family = family_by_label(medium, label)
    dt = args.dt if args.dt is not None else float(cfg.get("numerics", {}).get("dt", 1e-3))
    if args.steps is not None:
        nsteps = args.steps
    else:
        nsteps = max(1, int(round(float(cfg.get("horizon", 1.0)) / dt)))

    state = RayState.fresh(family, np.asarray(args.x), np.asarray(args.k))
    states = trace_ray(family, state, nsteps, dt)

    outdir = _resolve_out(args, cfg)
    stem = _stem(cfg, "ray")
    csv_path = outdir / f"{stem}.csv"
    save_ray_path(csv_path, states, family)
    final = states[-1]
    print(
        f"mode {label}: {nsteps} steps of dt = {_fmt(dt)}; "
        f"x(T) = ({', '.join(_fmt(v) for v in final.x)}), "
        f"omega = {_fmt(family.omega(final.k, final.x))}"
    )
    print(f"wrote {csv_path}")
    run_hash = params_hash(
        {
            "command": "trace",
            "medium": medium,
            "mode": label,
            "x": tuple(args.x),
            "k": tuple(args.k),
            "nsteps": nsteps,
            "dt": dt,
        }
    )
    _finish(
        args,
        outdir,
        command="trace",
        run_hash=run_hash,
        seed=_resolve_seed(args, cfg),
        started=started,
        outputs=[csv_path.name],
    )
    return 0


def _cmd_xsection(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if not args.config:
        raise ConfigInvalid(["--config is required for xsection (medium and spectrum)"])
    cfg = load_config(args.config)
    medium = build_medium(cfg)
    model = build_spectrum(cfg)
    if model is None:
        raise ConfigInvalid(["spectrum: required for xsection"])
    label = args.label or _default_label(medium)
    family_by_label(medium, label)  # unknown labels fail before any file is written

    outdir = _resolve_out(args, cfg)
    stem = _stem(cfg, "xsection")
    total_path = outdir / f"{stem}_total.csv"
    diff_path = outdir / f"{stem}_differential.csv"
    save_total_table(total_path, medium, model, args.knorms)
    save_differential_table(diff_path, medium, model, label, args.knorms[0])
    print(
        f"tabulated {len(args.knorms)} |k| values; differential kernel for "
        f"mode {label} at |k| = {_fmt(args.knorms[0])}"
    )
    print(f"wrote {total_path}")
    print(f"wrote {diff_path}")
    run_hash = params_hash(
        {
            "command": "xsection",
            "medium": medium,
            "spectrum": model,
            "knorms": args.knorms,
            "label": label,
        }
    )
    _finish(
        args,
        outdir,
        command="xsection",
        run_hash=run_hash,
        seed=_resolve_seed(args, cfg),
        started=started,
        outputs=[total_path.name, diff_path.name],
    )
    return 0


def _cmd_rte(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if not args.config:
        raise ConfigInvalid(["--config is required for rte"])
    cfg = load_config(args.config)
    scenario = scenario_from_config(cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        scenario = Scenario(
            medium=scenario.medium,
            source=scenario.source,
            horizon=scenario.horizon,
            binning=scenario.binning,
            spectrum=scenario.spectrum,
            numerics=replace(scenario.numerics, **overrides),
        )
        validate_scenario(scenario)

    hist = run_simulation(scenario)
    outdir = _resolve_out(args, cfg)
    paths = save_histogram(hist, outdir, stem=_stem(cfg, "histogram"))
    n = scenario.source.count
    print(
        f"transported {n} particles to T = {_fmt(scenario.horizon)}: "
        f"total trace {hist.total_trace:.12g}, escaped {hist.escaped}, "
        f"absorbed {hist.absorbed}, degenerate {hist.degenerate_events}"
    )
    for path in paths.values():
        print(f"wrote {path}")
    _finish(
        args,
        outdir,
        command="rte",
        run_hash=hist.scenario_hash,
        seed=scenario.numerics.seed,
        started=started,
        outputs=[p.name for p in paths.values()],
    )
    return 0


def _wigner_checks(epsilon: float, n: int, seed: int) -> list[tuple[str, float, float, bool]]:
    """The lab battery: (name, measured, bound, within-bound) per check."""
    x = uniform_grid(-1.0, 1.0, n)
    rng = np.random.default_rng(seed)

    random_field = SampledField(
        x, rng.normal(size=n) + 1j * rng.normal(size=n), epsilon
    )
    marginal = discrete_wigner(random_field).k_marginal()
    marginal_err = float(
        np.abs(marginal - np.abs(random_field.values) ** 2).max()
    )

    dk = 2.0 * np.pi * epsilon / (x[1] - x[0]) / n
    k0 = (n // 8) * dk
    pure = discrete_wigner(SampledField(x, np.exp(1j * k0 * x / epsilon), epsilon))
    mass = np.abs(pure.values).sum(axis=0)
    peak = int(np.argmax(mass))
    concentration = float(mass[max(peak - 1, 0) : peak + 2].sum() / mass.sum())

    packet = wkb_field(
        lambda s: np.exp(-((s / 0.2) ** 2)), lambda s: 4.0 * s, epsilon, x
    )
    shift_distance = float(free_transport_check(packet, 1.0, 1.0))

    const = kirchhoff_spherical_mean(
        lambda p: np.full(p.shape[0], 2.5), [0.0, 0.0, 0.0], 1.0, 0.7
    )
    kirchhoff_err = abs(const - 0.7 * 2.5)

    return [
        ("k_marginal_identity_max_error", marginal_err, 1e-12, marginal_err <= 1e-12),
        ("pure_phase_mass_in_3_bins", concentration, 0.99, concentration >= 0.99),
        ("free_transport_l1_distance", shift_distance, 1e-3, shift_distance <= 1e-3),
        ("kirchhoff_constant_error", kirchhoff_err, 1e-12, kirchhoff_err <= 1e-12),
    ]


def _cmd_wigner(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config) if args.config else {}
    seed = _resolve_seed(args, cfg)
    epsilon, n = args.epsilon, args.n

    checks = _wigner_checks(epsilon, n, seed)
    for name, measured, bound, ok in checks:
        print(f"{name}: {measured:.6g} (bound {bound:g}) {'ok' if ok else 'FAIL'}")

    x = uniform_grid(-1.0, 1.0, n)
    packet = wkb_field(
        lambda s: np.exp(-((s / 0.2) ** 2)), lambda s: 4.0 * s, epsilon, x
    )
    outdir = _resolve_out(args, cfg)
    paths = save_phase_space(discrete_wigner(packet), outdir, stem=_stem(cfg, "wigner"))
    for path in paths.values():
        print(f"wrote {path}")

    run_hash = params_hash(
        {"command": "wigner", "epsilon": epsilon, "n": n, "seed": seed}
    )
    _finish(
        args,
        outdir,
        command="wigner",
        run_hash=run_hash,
        seed=seed,
        started=started,
        outputs=[p.name for p in paths.values()],
    )
    return 0 if all(ok for *_, ok in checks) else 1


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="TOML scenario file")
    common.add_argument(
        "--seed", type=int, default=None, help="override the scenario seed (default 0)"
    )
    common.add_argument(
        "--workers", type=int, default=None, help="override the worker count"
    )
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument(
        "--deterministic",
        action="store_true",
        help="byte-identical artifacts: omit timing from the manifest",
    )

    parser = argparse.ArgumentParser(
        prog="emtransport",
        description="Energy transport of high-frequency waves in heterogeneous media.",
    )
    parser.add_argument(
        "--version", action="version", version=f"emtransport {__version__}"
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser(
        "modes",
        parents=[common],
        help="print mode frequencies and polarization vectors at one (x, k)",
    )
    p.add_argument("--x", type=_vec3, default=(0.0, 0.0, 0.0), help="position x1,x2,x3")
    p.add_argument("--k", type=_vec3, default=(0.0, 0.0, 1.0), help="wavevector k1,k2,k3")

    p = sub.add_parser(
        "trace", parents=[common], help="integrate a single ray and dump CSV"
    )
    p.add_argument("--x", type=_vec3, default=(0.0, 0.0, 0.0), help="start position")
    p.add_argument("--k", type=_vec3, default=(0.0, 0.0, 1.0), help="start wavevector")
    p.add_argument("--mode", default=None, help="branch label (default: first family)")
    p.add_argument("--steps", type=int, default=None, help="RK4 step count")
    p.add_argument("--dt", type=float, default=None, help="RK4 step size")

    p = sub.add_parser(
        "xsection",
        parents=[common],
        help="tabulate total and differential scattering cross-sections",
    )
    p.add_argument(
        "--knorms", type=_floats, default=(1.0,), help="comma-separated |k| values"
    )
    p.add_argument("--label", default=None, help="mode label for the differential table")

    sub.add_parser("rte", parents=[common], help="run the Monte Carlo transport solver")

    p = sub.add_parser(
        "wigner",
        parents=[common],
        help="run phase-space transform checks and export a reference grid",
    )
    p.add_argument("--epsilon", type=float, default=1.0 / 32.0, help="scale parameter")
    p.add_argument("--n", type=int, default=512, help="lattice size")

    return parser


_HANDLERS = {
    "modes": _cmd_modes,
    "trace": _cmd_trace,
    "xsection": _cmd_xsection,
    "rte": _cmd_rte,
    "wigner": _cmd_wigner,
}


def dispatch(argv: list[str] | None = None) -> int:
    """Parse arguments and run one subcommand, returning the exit status."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _HANDLERS[args.command](args)
    except ConfigInvalid as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> int:
    """Console entry point."""
    return dispatch(sys.argv[1:])
