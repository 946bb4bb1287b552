"""Command-line front end: ``fibertensor analyze | phantom | profile | compare``.

Exit codes: 0 success, 1 configuration error, 2 input/output error,
3 numerical failure, 4 a ``compare`` check failed. Diagnostics go to stderr
as a single line.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import __version__, _backend, io, report
from .errors import (
    DegenerateHistogramError, DegenerateTensorError, GenerationError, MhdFormatError,
    NumericalError, PackingError, SizeMismatchError,
)
from .orientation import OrientationConfig, orientation_field
from .phantom import DEFAULT_NOISE, GrayLevels, gen_isotropic_fibers, gen_shell_core, gen_straight_bundle
from .segmentation import fiber_mask, histogram, otsu_threshold, part_mask
from .stats import (
    ALPHA_REPORT, DEFAULT_MIN_FRACTION, anisotropy_index, axis_profile, default_min_fiber_voxels,
    layer_resample, mean_direction, orientation_tensor, tile_analysis,
)
from .volume import angle_between_axes

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_MISMATCH = 0, 1, 2, 3, 4

log = logging.getLogger("fibertensor")


class ConfigError(ValueError):
    pass


@dataclass
class AnalysisConfig:
    """Settings of one ``analyze`` run; echoed into every output file."""

    input: Optional[str] = None
    dims: Optional[list] = None
    element_type: str = "u8"
    byte_order: str = "little"
    spacing: Optional[list] = None
    spacing_unit: str = "um"
    part_threshold: Optional[float] = None
    fiber_factor: float = 1.25
    fiber_diameter: Optional[float] = None
    sigma: Optional[float] = None
    fallback: Optional[bool] = None
    tile_edge: float = 218.0
    min_fiber_fraction: float = DEFAULT_MIN_FRACTION
    alpha_report: float = ALPHA_REPORT
    method: str = "hessian"
    n_layers: int = 12
    export_orientation: bool = False
    # not echoed: they select where and how fast, never what is computed
    output: Optional[str] = field(default=None, metadata={"echo": False})
    threads: Optional[int] = field(default=None, metadata={"echo": False})

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.metadata.get("echo", True)}

    def validate(self) -> None:
        if not self.input:
            raise ConfigError("an input volume is required")
        if not self.output:
            raise ConfigError("an output directory is required (--output)")
        if self.part_threshold is None:
            raise ConfigError("--part-threshold is required: the solid/air gray value is a "
                              "manual calibration")
        if self.fiber_diameter is None or not self.fiber_diameter > 0:
            raise ConfigError("--fiber-diameter must be given and > 0 (um)")
        for name in ("fiber_factor", "tile_edge", "min_fiber_fraction"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name.replace('_', '-')} must be > 0")
        if self.sigma is not None and self.sigma < 0:
            raise ConfigError("--sigma must be >= 0")
        if not 0 <= self.alpha_report <= 1:
            raise ConfigError("--alpha-report must lie in [0, 1]")
        if self.method not in ("hessian", "structure-tensor"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.n_layers < 1:
            raise ConfigError("--layers must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if Path(self.input).suffix.lower() == ".raw" and self.dims is None:
            raise ConfigError("headerless .raw input needs --dims")


def _load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    known = {f.name for f in fields(AnalysisConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"config file {path} has unknown key(s): {', '.join(unknown)}")
    return data


def build_config(args) -> AnalysisConfig:
    """Defaults, then the config file, then explicit flags."""
    values = _load_config_file(args.config) if args.config else {}
    for f in fields(AnalysisConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return AnalysisConfig(**values)


def _load_volume(cfg: AnalysisConfig):
    path = Path(cfg.input)
    if path.suffix.lower() == ".raw":
        spacing = cfg.spacing or (1.0, 1.0, 1.0)
        return io.read_raw(path, cfg.dims, cfg.element_type, cfg.byte_order, spacing)
    vol = io.read_mhd(path, cfg.spacing_unit)
    if cfg.spacing is not None:
        vol = type(vol).adopt(vol.data, cfg.spacing)
    return vol


def _direction_json(d):
    return None if d is None else [float(x) for x in d]


def run_analysis(cfg: AnalysisConfig) -> dict:
    """The whole pipeline; returns the summary that is written as JSON."""
    cfg.validate()
    if cfg.threads:
        _backend.set_threads(cfg.threads)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    volume = _load_volume(cfg)
    spacing = volume.spacing
    edge = int(round(cfg.tile_edge / min(spacing)))
    if edge < 2:
        raise ConfigError(f"tile edge {cfg.tile_edge} um is {cfg.tile_edge / min(spacing):.3g} "
                          f"voxels at spacing {min(spacing)} um; at least 2 are needed")
    part = part_mask(volume, cfg.part_threshold)
    if part.count() == 0:
        raise ConfigError(f"no voxel reaches the part threshold {cfg.part_threshold}")
    otsu = otsu_threshold(histogram(volume.data[part.bits]))
    fibers = fiber_mask(volume, part, cfg.fiber_factor)
    ocfg = OrientationConfig(cfg.fiber_diameter, cfg.sigma, cfg.fallback, cfg.method)
    field_ = orientation_field(volume, fibers, ocfg)
    min_fiber = default_min_fiber_voxels(edge, cfg.min_fiber_fraction)
    grid = tile_analysis(field_, fibers, edge, min_fiber, cfg.alpha_report)

    echo = cfg.echo()
    report.write_tiles_csv(grid, out / "tiles.csv", echo)
    for axis in "xyz":
        report.write_profile_csv(axis_profile(grid, axis), out / f"profile_{axis}.csv", echo)
    report.write_profile_csv(layer_resample(grid, cfg.n_layers), out / "profile_layers.csv", echo)
    if cfg.export_orientation:
        io.write_orientation_field(field_, out / "orientation")

    tensor, count = orientation_tensor(field_)
    alpha = anisotropy_index(tensor) if tensor is not None else None
    sigma, fallback = ocfg.smoothing(spacing)
    summary = {
        "tool": "fibertensor",
        "version": __version__,
        "config": echo,
        "volume": {"dims": list(volume.dims), "spacing_um": list(spacing)},
        "thresholds": {"part": cfg.part_threshold, "otsu": otsu,
                       "fiber": cfg.fiber_factor * otsu},
        "smoothing": {"sigma_vox": list(sigma), "fallback": fallback},
        "voxels": {"part": part.count(), "fiber": fibers.count(), "oriented": count},
        "global": {
            "tensor": report.tensor_dict(tensor),
            "alpha": alpha,
            "mean_direction": _direction_json(
                mean_direction(tensor, cfg.alpha_report) if tensor is not None else None),
        },
        "tiles": {"edge_vox": edge, "edge_um": [edge * s for s in spacing],
                  "grid": list(grid.shape), "valid": int(grid.valid.sum()),
                  "total": int(grid.valid.size), "min_fiber_voxels": min_fiber},
    }
    report.write_json(summary, out / "summary.json")
    return summary


# --------------------------------------------------------------------------
# phantoms


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_phantom(args) -> dict:
    if args.diameter is None or not args.diameter > 0:
        raise ConfigError("--diameter must be > 0 (um)")
    radius = 0.5 * args.diameter
    gray = GrayLevels(args.fiber_gray, args.matrix_gray, args.air_gray,
                      args.noise if args.noise is not None else 0.0)
    if args.threads:
        _backend.set_threads(args.threads)
    if args.kind == "bundle":
        ph = gen_straight_bundle(args.dims, args.spacing, args.direction, radius, args.n_fibers,
                                 args.seed, gray)
    elif args.kind == "isotropic":
        ph = gen_isotropic_fibers(args.dims, args.spacing, radius, args.n_fibers, args.seed,
                                  args.length, gray)
    else:
        ph = gen_shell_core(args.dims, args.spacing, radius, args.seed, args.pitch,
                            args.tile_edge_vox, gray)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    mhd = io.write_mhd(ph.volume, out / "phantom.mhd", args.element_type)
    truth = ph.to_json()
    truth.update({"tool": "fibertensor", "version": __version__,
                  "truth_mean_direction": _direction_json(mean_direction(ph.truth, 0.0))})
    if ph.slice_weights is not None:
        truth["truth_layers"] = [report.tensor_dict(t) for t in ph.truth_profile(args.layers)]
    truth["truth"] = report.tensor_dict(ph.truth)
    report.write_json(truth, out / "truth.json")
    return {"volume": str(mhd), "sha256": _sha256(mhd.with_suffix(".raw")),
            "placed_axes_tensor": report.tensor_dict(ph.truth), "fibers": len(ph.fibers)}


# --------------------------------------------------------------------------
# profiles and comparison


def run_profile(args) -> Path:
    grid = report.read_tiles_csv(args.tiles)
    if args.layers is not None:
        if args.layers < 1:
            raise ConfigError("--layers must be >= 1")
        prof = layer_resample(grid, args.layers)
    else:
        prof = axis_profile(grid, args.axis)
    out = Path(args.output) if args.output else Path(args.tiles).with_name(
        f"profile_{'layers' if args.layers is not None else args.axis}.csv")
    cfg = {"tiles": str(args.tiles), "axis": args.axis, "layers": args.layers}
    return report.write_profile_csv(prof, out, cfg)


def run_compare(args) -> tuple[bool, list[str]]:
    """Check an analysis summary against a phantom's ground truth."""
    summary = json.loads(Path(args.summary).read_text())
    truth = json.loads(Path(args.truth).read_text())
    got = summary["global"]["tensor"]
    want = truth["truth"]
    lines = []
    ok = True
    for key in ("a_xx", "a_yy", "a_zz"):
        diff = abs(got[key] - want[key])
        passed = diff <= args.tensor_tol
        ok &= passed
        lines.append(f"{'PASS' if passed else 'FAIL'} {key}: analysis {got[key]:.4f} "
                     f"truth {want[key]:.4f} |diff| {diff:.4f} <= {args.tensor_tol}")
    d_got = summary["global"]["mean_direction"]
    d_want = truth.get("truth_mean_direction")
    if d_want is not None and anisotropy_index([want[f"a_{c}"] for c in
                                                ("xx", "yy", "zz", "xy", "xz", "yz")]) >= 0.6:
        if d_got is None:
            ok = False
            lines.append("FAIL mean direction: analysis reports none")
        else:
            ang = float(angle_between_axes(d_got, d_want))
            passed = ang <= args.angle_tol
            ok &= passed
            lines.append(f"{'PASS' if passed else 'FAIL'} mean direction: {ang:.2f} deg "
                         f"<= {args.angle_tol}")
    return ok, lines


# --------------------------------------------------------------------------
# argument parsing


def _add_volume_flags(p):
    g = p.add_argument_group("input format")
    g.add_argument("--dims", type=int, nargs=3, metavar=("NX", "NY", "NZ"),
                   help="voxel counts, required for headerless .raw input")
    g.add_argument("--element-type", choices=["u8", "u16", "i16", "f32"],
                   help="element type of .raw input (default: u8)")
    g.add_argument("--byte-order", choices=["little", "big"],
                   help="byte order of .raw input (default: little)")
    g.add_argument("--spacing", type=float, nargs=3, metavar=("SX", "SY", "SZ"),
                   help="voxel spacing in um; overrides the header")
    g.add_argument("--spacing-unit", choices=["um", "mm"],
                   help="unit of ElementSpacing in MHD headers (default: um)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fibertensor", description="Fiber orientation tensors from 3D CT volumes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="orientation tensors, profiles and summary of a volume",
                       argument_default=None)
    a.add_argument("input", nargs="?", help="volume (.mhd, or .raw with --dims)")
    a.add_argument("--config", help="JSON file with settings; flags override it")
    a.add_argument("-o", "--output", help="output directory")
    _add_volume_flags(a)
    a.add_argument("--part-threshold", type=float,
                   help="gray value separating solid from air (manual calibration, required)")
    a.add_argument("--fiber-factor", type=float,
                   help="fiber threshold = factor * Otsu threshold of part voxels (default 1.25)")
    a.add_argument("--fiber-diameter", type=float, help="fiber diameter in um (required)")
    a.add_argument("--sigma", type=float,
                   help="Gaussian smoothing sigma in um (default: fiber radius)")
    fb = a.add_mutually_exclusive_group()
    fb.add_argument("--fallback", dest="fallback", action="store_const", const=True,
                    help="force the 3x3x3 binomial smoothing mask")
    fb.add_argument("--no-fallback", dest="fallback", action="store_const", const=False,
                    help="never use the 3x3x3 mask (default: used below 3 voxels per diameter)")
    a.add_argument("--tile-edge", type=float, help="tile edge in um (default 218)")
    a.add_argument("--min-fiber-fraction", type=float,
                   help="tiles with a smaller fiber-voxel fraction are excluded (default 0.01)")
    a.add_argument("--alpha-report", type=float,
                   help="mean directions are reported only for alpha >= this (default 0.6)")
    a.add_argument("--method", choices=["hessian", "structure-tensor"],
                   help="local orientation method (default hessian)")
    a.add_argument("--layers", dest="n_layers", type=int,
                   help="through-thickness layers in profile_layers.csv (default 12)")
    a.add_argument("--export-orientation", action="store_const", const=True,
                   help="also write the voxel orientation field as MHD files")
    a.add_argument("--threads", type=int, help="worker threads (default: all cores)")

    p = sub.add_parser("phantom", help="synthetic fiber volume with ground truth")
    p.add_argument("kind", choices=["bundle", "isotropic", "shell-core"])
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--dims", type=int, nargs=3, default=[64, 64, 64], metavar=("NX", "NY", "NZ"))
    p.add_argument("--spacing", type=float, nargs=3, default=[1.0, 1.0, 1.0],
                   metavar=("SX", "SY", "SZ"), help="um per voxel")
    p.add_argument("--diameter", type=float, default=6.0, help="fiber diameter in um")
    p.add_argument("--direction", type=float, nargs=3, default=[0.0, 1.0, 0.0],
                   help="fiber axis of a bundle")
    p.add_argument("--n-fibers", type=int, default=40)
    p.add_argument("--length", type=float, help="fiber length in um (isotropic)")
    p.add_argument("--pitch", type=float, help="fiber spacing in um (shell-core)")
    p.add_argument("--tile-edge-vox", type=int,
                   help="shell-core: refuse plates thinner than three such tiles")
    p.add_argument("--layers", type=int, default=12, help="truth layers (shell-core)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, nargs="?", const=DEFAULT_NOISE,
                   help=f"Gaussian noise sigma (flag alone: {DEFAULT_NOISE})")
    p.add_argument("--fiber-gray", type=float, default=200.0)
    p.add_argument("--matrix-gray", type=float, default=80.0)
    p.add_argument("--air-gray", type=float, default=0.0)
    p.add_argument("--element-type", default="MET_UCHAR",
                   choices=["MET_UCHAR", "MET_USHORT", "MET_SHORT", "MET_FLOAT"])
    p.add_argument("--threads", type=int)

    r = sub.add_parser("profile", help="layer profile from a tile CSV")
    r.add_argument("tiles", help="tiles.csv written by analyze")
    r.add_argument("--axis", choices=["x", "y", "z"], default="z")
    r.add_argument("--layers", type=int, help="re-bin along z into this many layers")
    r.add_argument("-o", "--output", help="profile CSV (default: next to the tile CSV)")

    c = sub.add_parser("compare", help="check an analysis summary against phantom truth")
    c.add_argument("summary")
    c.add_argument("truth")
    c.add_argument("--tensor-tol", type=float, default=0.05)
    c.add_argument("--angle-tol", type=float, default=3.0)
    return parser


def _fail(code: int, message: str) -> int:
    print(f"fibertensor: error: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "analyze":
            summary = run_analysis(build_config(args))
            g = summary["global"]
            alpha = g["alpha"]
            print(f"oriented voxels {summary['voxels']['oriented']}, "
                  f"alpha {'n/a' if alpha is None else f'{alpha:.3f}'}, "
                  f"results in {args.output or 'output directory'}")
        elif args.command == "phantom":
            info = run_phantom(args)
            print(json.dumps(info, sort_keys=True))
        elif args.command == "profile":
            print(run_profile(args))
        else:
            ok, lines = run_compare(args)
            print("\n".join(lines))
            print("PASS" if ok else "FAIL")
            return EXIT_OK if ok else EXIT_MISMATCH
    except (ConfigError, report.SchemaError, PackingError, GenerationError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (FileNotFoundError, MhdFormatError, SizeMismatchError, OSError) as exc:
        if isinstance(exc, FileNotFoundError) and exc.filename:
            return _fail(EXIT_IO, f"no such file: {exc.filename}")
        return _fail(EXIT_IO, str(exc))
    except (NumericalError, DegenerateHistogramError, DegenerateTensorError,
            FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except (ValueError, KeyError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
