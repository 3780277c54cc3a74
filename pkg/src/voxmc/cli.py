"""Command-line front end: configuration, device rosters, runs and reports.

Exit codes: 0 on success, 1 when the input is invalid, 2 when a run fails.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .accumulator import normalize
from .domain import (BENCHMARKS, DEFAULT_BENCHMARK_PHOTONS, AccumulationMode, BoundaryMode,
                     IsotropicSource, OpticalProperties, PencilSource, Scene, SimulationConfig,
                     VoxelGrid, benchmark_preset, sphere_labels)
from .errors import (InstanceTooLarge, NonPositiveSlope, ParseError, UncalibratedDevice,
                     ValidationError, VoxmcError)
from .scheduler import (CalibrationCache, DeviceKind, DeviceProfile, Strategy, calibrate,
                        default_devices, ideal_throughput, makespan, partition,
                        run_multi_device, simulate_devices)
from .transport import T_DEPOSITED, T_ESCAPED, T_KILLED, T_PHOTONS, T_STEPS, T_TRUNCATED
from .volume import write_volume

CONSERVATION_GATE = 1e-6

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2

_CONFIG_KEYS = {
    "benchmark", "grid", "media", "source", "photons", "seed", "mode", "boundary", "tmax",
    "roulette_threshold", "roulette_multiplier", "workgroup_size", "devices", "strategy",
    "threads", "output", "report", "normalize", "calibration_cache",
}


class RunFailure(VoxmcError):
    """A simulation finished but failed a post-run check."""


class RunSpec(NamedTuple):
    scene: Scene
    config: SimulationConfig
    devices: List[DeviceProfile]
    strategy: Strategy
    threads: Optional[int] = None
    output: Optional[str] = None
    report: Optional[str] = None
    normalize: bool = True
    calibration_cache: Optional[str] = None
    benchmark: Optional[str] = None


# ---------------------------------------------------------------- parsing helpers


def _load_json(path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno) from exc


def _field(doc: dict, key: str, kind, where: str, default=None, required=False):
    if key not in doc:
        if required:
            raise ParseError("missing required field", field=f"{where}{key}")
        return default
    value = doc[key]
    ok = isinstance(value, kind) and not (kind in (int, float) and isinstance(value, bool))
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value, ok = float(value), True
    if not ok:
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ParseError(f"expected {names}, got {type(value).__name__}", field=f"{where}{key}")
    return value


def _vec(doc: dict, key: str, where: str, n=3, required=True, integer=False):
    value = _field(doc, key, list, where, required=required)
    if value is None:
        return None
    kinds = (int,) if integer else (int, float)
    if len(value) != n or not all(isinstance(v, kinds) and not isinstance(v, bool) for v in value):
        raise ParseError(f"expected a list of {n} numbers", field=f"{where}{key}")
    return [int(v) if integer else float(v) for v in value]


def _parse_media(items, where="media") -> List[OpticalProperties]:
    if not isinstance(items, list) or not items:
        raise ParseError("expected a non-empty list of media", field=where)
    out = []
    for i, m in enumerate(items):
        p = f"{where}[{i}]."
        if not isinstance(m, dict):
            raise ParseError("expected an object", field=f"{where}[{i}]")
        out.append(OpticalProperties(
            mua=_field(m, "mua", float, p, required=True), mus=_field(m, "mus", float, p, required=True),
            g=_field(m, "g", float, p, required=True), n=_field(m, "n", float, p, required=True)))
    return out


def _parse_labels(spec, dims, voxel_size, base: Path) -> np.ndarray:
    if isinstance(spec, int) and not isinstance(spec, bool):
        return np.full(dims, spec, dtype=np.int32)
    if not isinstance(spec, dict):
        raise ParseError("expected an integer fill label or an object", field="grid.labels")
    if "file" in spec:
        path = base / _field(spec, "file", str, "grid.labels.")
        dtype = np.dtype(_field(spec, "dtype", str, "grid.labels.", default="uint8"))
        try:
            flat = np.fromfile(path, dtype=dtype)
        except OSError as exc:
            raise ParseError(f"cannot read label file {path}: {exc}", field="grid.labels.file") from exc
        if flat.size != int(np.prod(dims)):
            raise ValidationError(f"label file holds {flat.size} voxels, dims need {int(np.prod(dims))}")
        return flat.reshape(dims, order="F").astype(np.int32)
    labels = np.full(dims, _field(spec, "fill", int, "grid.labels.", default=1), dtype=np.int32)
    for i, s in enumerate(_field(spec, "spheres", list, "grid.labels.", default=[])):
        p = f"grid.labels.spheres[{i}]."
        sph = sphere_labels(dims, voxel_size, _vec(s, "center", p), _field(s, "radius", float, p, required=True),
                            inside=1, outside=0)
        labels[sph == 1] = _field(s, "label", int, p, required=True)
    return labels


def _parse_grid(doc, media, base: Path) -> VoxelGrid:
    if not isinstance(doc, dict):
        raise ParseError("expected an object", field="grid")
    dims = tuple(_vec(doc, "dims", "grid.", integer=True))
    vs = _field(doc, "voxel_size", float, "grid.", default=1.0)
    labels = _parse_labels(doc.get("labels", 1), dims, vs, base)
    return VoxelGrid(dims, vs, labels, tuple(media))


def _parse_source(doc):
    if not isinstance(doc, dict):
        raise ParseError("expected an object", field="source")
    kind = _field(doc, "type", str, "source.", default="pencil")
    pos = _vec(doc, "position", "source.")
    if kind == "pencil":
        return PencilSource(tuple(pos), tuple(_vec(doc, "direction", "source.", required=False)
                                              or (0.0, 0.0, 1.0)))
    if kind == "isotropic":
        return IsotropicSource(tuple(pos))
    raise ParseError(f"unknown source type {kind!r}", field="source.type")


def _enum(value, enum_cls, key):
    try:
        return enum_cls(value)
    except ValueError:
        choices = ", ".join(e.value for e in enum_cls)
        raise ParseError(f"expected one of {choices}, got {value!r}", field=key) from None


def parse_roster(source, base: Path = Path(".")) -> List[DeviceProfile]:
    """Device roster from a JSON path or an already-decoded list/object."""
    if isinstance(source, (str, Path)):
        path = base / source
        data = _load_json(path)
    else:
        data = source
    if isinstance(data, dict):
        data = data.get("devices")
    if not isinstance(data, list) or not data:
        raise ParseError("roster must be a non-empty list of devices", field="devices")
    out = []
    for i, d in enumerate(data):
        p = f"devices[{i}]."
        if not isinstance(d, dict):
            raise ParseError("expected an object", field=f"devices[{i}]")
        kind = _enum(_field(d, "kind", str, p, default="simulated"), DeviceKind, f"{p}kind")
        out.append(DeviceProfile(
            name=_field(d, "name", str, p, default=f"dev{i}"),
            cores=_field(d, "cores", int, p, required=True),
            a=_field(d, "a", float, p), t0=_field(d, "t0", float, p), kind=kind,
            jitter_sigma=_field(d, "jitter_sigma", float, p, default=0.0),
            threads=_field(d, "threads", int, p)))
    return out


def build_run_spec(doc: dict, base: Path = Path(".")) -> RunSpec:
    """Turn a decoded configuration document into a validated RunSpec."""
    if not isinstance(doc, dict):
        raise ParseError("configuration must be a JSON object")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise ParseError("unknown field", field=unknown[0])
    photons = _field(doc, "photons", int, "", default=DEFAULT_BENCHMARK_PHOTONS)
    seed = _field(doc, "seed", int, "", default=0)
    name = _field(doc, "benchmark", str, "")
    if name is not None:
        if name not in BENCHMARKS:
            raise ValidationError(f"unknown benchmark {name!r}; expected one of {BENCHMARKS}")
        grid, source, config = benchmark_preset(name, max(photons, 1), seed)
        config = config.with_(photon_count=photons)
        media = list(grid.media)
    else:
        for key in ("grid", "media", "source"):
            if key not in doc:
                raise ParseError("missing required field (or give a benchmark)", field=key)
        grid = source = None
        media = None
        config = SimulationConfig(photon_count=photons, master_seed=seed)
    if "media" in doc:
        media = _parse_media(doc["media"])
    if "grid" in doc:
        grid = _parse_grid(doc["grid"], media, base)
    elif "media" in doc:
        grid = VoxelGrid(grid.dims, grid.voxel_size, grid.labels, tuple(media))
    if "source" in doc:
        source = _parse_source(doc["source"])
    changes: Dict[str, Any] = {}
    if "mode" in doc:
        changes["accumulation_mode"] = _enum(_field(doc, "mode", str, ""), AccumulationMode, "mode")
    if "boundary" in doc:
        changes["boundary_mode"] = _enum(_field(doc, "boundary", str, ""), BoundaryMode, "boundary")
    for key in ("tmax", "roulette_threshold"):
        if key in doc:
            changes[key] = _field(doc, key, float, "")
    for key in ("roulette_multiplier", "workgroup_size"):
        if key in doc:
            changes[key] = _field(doc, key, int, "")
    config = config.with_(**changes) if changes else config
    devices = default_devices()
    if "devices" in doc:
        roster = doc["devices"]
        if not isinstance(roster, (str, list, dict)):
            raise ParseError("expected a roster path or a list of devices", field="devices")
        devices = parse_roster(roster, base)
    strategy = _enum(_field(doc, "strategy", str, "", default="s3"), Strategy, "strategy")
    threads = _field(doc, "threads", int, "")
    if threads is not None and threads < 1:
        raise ValidationError("threads must be >= 1")

    def opt_path(key):
        v = _field(doc, key, str, "")
        return None if v is None else str(base / v)

    return RunSpec(Scene(grid, source), config, devices, strategy, threads,
                   opt_path("output"), opt_path("report"),
                   _field(doc, "normalize", bool, "", default=True),
                   opt_path("calibration_cache"), name)


def parse_config(path) -> RunSpec:
    """Parse a JSON run configuration; relative paths resolve against its directory."""
    doc = _load_json(path)
    return build_run_spec(doc, Path(path).resolve().parent)


# ---------------------------------------------------------------- reports


@dataclass
class RunReport:
    photons: int
    strategy: str
    devices: List[dict]
    makespan_ms: float
    throughput: float  # photons per ms
    conservation: dict
    config: dict
    volume: Optional[dict] = None
    status: str = "ok"

    def to_dict(self) -> dict:
        return asdict(self)


def conservation_summary(tallies: np.ndarray, photons: int) -> dict:
    parts = {k: float(tallies[i]) for k, i in (("deposited", T_DEPOSITED), ("escaped", T_ESCAPED),
                                               ("killed", T_KILLED), ("truncated", T_TRUNCATED))}
    balance = math.fsum(parts.values())
    parts["residual"] = abs(balance - photons) / photons
    parts["simulated"] = int(tallies[T_PHOTONS])
    parts["segments_per_photon"] = float(tallies[T_STEPS]) / max(photons, 1)
    return parts


def config_echo(spec: RunSpec) -> dict:
    grid, src, cfg = spec.scene.grid, spec.scene.source, spec.config
    return {
        "benchmark": spec.benchmark,
        "dims": list(grid.dims),
        "voxel_size_mm": grid.voxel_size,
        "media": [asdict(m) for m in grid.media],
        "source": {"type": "isotropic" if isinstance(src, IsotropicSource) else "pencil",
                   **{k: list(v) for k, v in asdict(src).items()}},
        "photons": cfg.photon_count,
        "seed": cfg.master_seed,
        "mode": cfg.accumulation_mode.value,
        "boundary": cfg.boundary_mode.value,
        "tmax_ns": cfg.tmax,
        "roulette_threshold": cfg.roulette_threshold,
        "roulette_multiplier": cfg.roulette_multiplier,
        "workgroup_size": cfg.workgroup_size,
        "threads": spec.threads,
        "scene_digest": spec.scene.digest(),
    }


def execute(spec: RunSpec) -> RunReport:
    """Execute a RunSpec end to end; raises RunFailure if energy is not conserved."""
    devices = spec.devices
    if spec.calibration_cache:
        devices = CalibrationCache(spec.calibration_cache).apply(devices, spec.scene.digest())
    n = spec.config.photon_count
    result = run_multi_device(n, devices, spec.strategy, spec.scene, spec.config, spec.threads)
    cons = conservation_summary(result.tallies, n)
    volume = None
    if spec.output:
        fmap = normalize(result.fluence, spec.scene.grid) if spec.normalize else result.fluence
        volume = write_volume(fmap, spec.output, spec.scene.grid.voxel_size,
                              spec.config.master_seed)
        volume = {"path": spec.output, "checksum": volume["checksum"],
                  "normalized": volume["normalized"]}
    report = RunReport(
        photons=n, strategy=spec.strategy.value,
        devices=[{**asdict(d), "kind": dev.kind.value} for d, dev in zip(result.devices, devices)],
        makespan_ms=result.makespan_ms, throughput=result.throughput, conservation=cons,
        config=config_echo(spec), volume=volume)
    if not cons["residual"] < CONSERVATION_GATE:
        report.status = "failed: energy conservation"
    if spec.report:
        Path(spec.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    if report.status != "ok":
        raise RunFailure(f"energy conservation residual {cons['residual']:.3e} "
                         f"exceeds {CONSERVATION_GATE:g}")
    return report


# ---------------------------------------------------------------- commands


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _common(p: argparse.ArgumentParser, roster_required=False):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--benchmark", choices=BENCHMARKS, help="benchmark preset")
    p.add_argument("--photons", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker threads per device")
    p.add_argument("--mode", choices=[m.value for m in AccumulationMode])
    p.add_argument("--devices", required=roster_required, help="JSON device roster")


def _spec_from_args(args, **extra) -> RunSpec:
    if args.config:
        doc = _load_json(args.config)
        base = Path(args.config).resolve().parent
        if not isinstance(doc, dict):
            raise ParseError("configuration must be a JSON object")
    else:
        doc, base = {"benchmark": args.benchmark or "B1"}, Path(".")
    if args.config and args.benchmark:
        doc["benchmark"] = args.benchmark
    cwd = Path.cwd()
    overrides = {"photons": args.photons, "seed": args.seed, "threads": args.threads,
                 "mode": args.mode}
    overrides.update(extra)
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    if getattr(args, "devices", None):
        doc["devices"] = str((cwd / args.devices).resolve())
    for key in ("output", "report"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = str((cwd / value).resolve())
    return build_run_spec(doc, base)


def cmd_run(args) -> int:
    spec = _spec_from_args(args, strategy=args.strategy)
    if args.raw:
        spec = spec._replace(normalize=False)
    report = execute(spec)
    c = report.conservation
    print(f"photons {report.photons}  makespan {report.makespan_ms:.1f} ms  "
          f"throughput {report.throughput:.2f} photons/ms  residual {c['residual']:.2e}")
    for d in report.devices:
        tag = " (modeled)" if d["modeled"] else ""
        print(f"  {d['name']:<12} {d['photons']:>12}  {d['wall_ms']:10.1f} ms{tag}")
    if report.volume:
        print(f"volume {report.volume['path']}  checksum {report.volume['checksum']}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    spec = _spec_from_args(args)
    cache_path = args.cache or str(Path(args.devices).with_suffix(".calibration.json"))
    cache = CalibrationCache(cache_path)
    rng = np.random.default_rng(args.noise_seed)
    digest = spec.scene.digest()
    for dev in spec.devices:
        a, t0 = calibrate(dev, args.n1, args.n2, spec.scene, spec.config, noise=args.noise,
                          rng=rng)
        cache.put(dev.name, digest, a, t0, n1=args.n1, n2=args.n2)
        print(f"{dev.name:<12} a = {a:.6g} ms/photon  t0 = {t0:.3f} ms")
    print(f"cached in {cache_path}")
    return EXIT_OK


def _print_partitions(total: int, devices: Sequence[DeviceProfile], strategies) -> List[dict]:
    rows = []
    for s in strategies:
        try:
            part = partition(s, total, devices)
        except UncalibratedDevice as exc:
            print(f"{s.value}: skipped ({exc})")
            continue
        try:
            ms = makespan(part.counts, devices)
        except UncalibratedDevice:
            ms = None
        rows.append({"strategy": s.value, "counts": list(part.counts), "makespan_ms": ms})
        shown = "n/a" if ms is None else f"{ms:.3f}"
        print(f"{s.value}  counts={list(part.counts)}  makespan_ms={shown}")
    return rows


def cmd_partition(args) -> int:
    devices = parse_roster(str(Path(args.devices).resolve()))
    if args.photons is None or args.photons < 0:
        raise ValidationError("partition needs --photons >= 0")
    strategies = [Strategy(args.strategy)] if args.strategy else list(Strategy)
    rows = _print_partitions(args.photons, devices, strategies)
    if args.report:
        Path(args.report).write_text(json.dumps({"total": args.photons, "partitions": rows},
                                                indent=2) + "\n")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    photons = args.photons or 10**5
    print(f"{'benchmark':<10}{'photons':>10}{'wall ms':>12}{'photons/ms':>12}{'absorbed':>10}")
    rows = []
    for name in BENCHMARKS:
        grid, src, cfg = benchmark_preset(name, photons, args.seed or 0)
        spec = RunSpec(Scene(grid, src), cfg, default_devices(args.threads), Strategy.S1,
                       args.threads, benchmark=name)
        t = time.perf_counter()
        result = run_multi_device(photons, spec.devices, Strategy.S1, spec.scene, cfg, args.threads)
        wall = (time.perf_counter() - t) * 1e3
        absorbed = result.tallies[T_DEPOSITED] / photons
        rows.append({"benchmark": name, "photons": photons, "wall_ms": wall,
                     "throughput": photons / wall, "absorbed": absorbed})
        print(f"{name:<10}{photons:>10}{wall:>12.1f}{photons / wall:>12.2f}{absorbed:>10.4f}")
    if args.report:
        Path(args.report).write_text(json.dumps({"rows": rows}, indent=2) + "\n")
    return EXIT_OK


def cmd_simulate_devices(args) -> int:
    devices = parse_roster(str(Path(args.devices).resolve()))
    total = args.photons or DEFAULT_BENCHMARK_PHOTONS
    seed = args.seed or 0
    strategies = [Strategy(args.strategy)] if args.strategy else list(Strategy)
    print(f"{'strategy':<9}{'model ms':>12}{'simulated ms':>14}{'photons/ms':>12}  counts")
    out = {"total": total, "ideal_throughput": ideal_throughput(devices), "strategies": [],
           "scaling": []}
    base = None
    for s in strategies:
        st = simulate_devices(total, devices, s, seed)
        base = base or st.makespan_ms
        out["strategies"].append({"strategy": s.value, "counts": list(st.partition.counts),
                                  "model_ms": st.model_makespan_ms, "simulated_ms": st.makespan_ms,
                                  "throughput": st.throughput})
        print(f"{s.value:<9}{st.model_makespan_ms:>12.1f}{st.makespan_ms:>14.1f}"
              f"{st.throughput:>12.2f}  {list(st.partition.counts)}")
    print(f"ideal throughput {out['ideal_throughput']:.2f} photons/ms")
    scaling_strategy = strategies[-1]
    solo = None
    print(f"scaling ({scaling_strategy.value}):")
    for k in range(1, len(devices) + 1):
        st = simulate_devices(total, devices[:k], scaling_strategy, seed)
        solo = solo or st.makespan_ms
        out["scaling"].append({"devices": k, "makespan_ms": st.makespan_ms,
                               "speedup": solo / st.makespan_ms,
                               "ideal_throughput": st.ideal_throughput})
        print(f"  {k} devices  {st.makespan_ms:12.1f} ms  speedup {solo / st.makespan_ms:6.3f}")
    if args.report:
        Path(args.report).write_text(json.dumps(out, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voxmc", description="Voxel Monte Carlo photon transport")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("run", help="simulate and write a fluence volume plus report")
    _common(p)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--output", help="raw float32 volume path")
    p.add_argument("--report", help="RunReport JSON path")
    p.add_argument("--raw", action="store_true", help="write deposited weight, not fluence")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="fit a and t0 per device from two pilot runs")
    _common(p, roster_required=True)
    p.add_argument("--n1", type=int, default=10**6)
    p.add_argument("--n2", type=int, default=5 * 10**6)
    p.add_argument("--noise", type=float, default=0.0, help="multiplicative timing noise (sd)")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--cache", help="calibration cache JSON (default: next to the roster)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("partition", help="print S1/S2/S3 partitions and model makespans")
    p.add_argument("--devices", required=True)
    p.add_argument("--photons", type=int, required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--report")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("benchmark", help="B1/B2/B2a speed table")
    p.add_argument("--photons", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--report")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("simulate-devices", help="device-model-only scheduling study")
    p.add_argument("--devices", required=True)
    p.add_argument("--photons", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--report")
    p.set_defaults(func=cmd_simulate_devices)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ValidationError, ParseError, UncalibratedDevice, InstanceTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (VoxmcError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except NonPositiveSlope as exc:  # pragma: no cover - VoxmcError catches it first
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
