"""Command-line interface.

Every option can also come from ``--config FILE`` (flat ``key = value`` lines,
keys as listed in ``histopet <command> --help``); flags given on the command
line win.  Exit codes: 0 success, 1 usage or configuration error, 2 bad or
mismatched data, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .autodiff import ShapeError
from .dataset import DESK_GEOMETRY, DESK_GRID, ellipsoid_corpus, load_corpus, save_corpus
from .geometry import DegenerateLORError, GeometryError, ScannerGeometry, VoxelGrid
from .histogram import HistogramConfig, InvalidEfficiencyError, histogram
from .metrics import EmptyRoiError, NotMeasurableError, OutOfGridError, evaluate, fwhm, line_profile, roi_stats
from .network import ConfigError, NetworkConfig
from .phantoms import InvalidSpecError, build_phantom, random_ellipsoids, sphere_set, uniform_cylinder
from .simulate import EfficiencyTable, InvalidInputError, SimulationConfig, simulate_events
from .training import (IncompatibleCheckpointError, TrainConfig, TrainConfigError, TrainingDiverged,
                       fine_tune, load_checkpoint, save_checkpoint, train)
from .volume import IncompatibleGridError, Volume

log = logging.getLogger("histopet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

CONFIG_ERRORS = (io.ConfigFileError, ConfigError, TrainConfigError, InvalidSpecError, GeometryError)
DATA_ERRORS = (io.DataError, IncompatibleGridError, ShapeError, IncompatibleCheckpointError,
               InvalidInputError, InvalidEfficiencyError, DegenerateLORError, EmptyRoiError,
               OutOfGridError, NotMeasurableError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- option plumbing -----------------------------------------------------------------

class Options:
    """Resolved option values: command line, then config file, then default."""

    def __init__(self, ns, specs, config):
        self._values = {}
        for key, (dest, default, cast) in specs.items():
            v = getattr(ns, dest)
            if v is None and key in config:
                try:
                    v = cast(config[key])
                except ValueError as exc:
                    raise io.ConfigFileError(f"config key {key}: {exc}") from exc
            self._values[key] = default if v is None else v
        unknown = set(config) - set(specs)
        if unknown:
            raise io.ConfigFileError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def __getitem__(self, key):
        return self._values[key]


def _bool(text):
    v = io.parse_value(str(text))
    if not isinstance(v, bool):
        raise ValueError(f"expected a boolean, got {text!r}")
    return v


def _ints(text):
    return tuple(int(v) for v in str(text).split(","))


def _floats(text):
    return tuple(float(v) for v in str(text).split(","))


def _add(p, specs, flag, key, default, cast=str, help="", **kw):
    dest = key.replace(".", "__")
    if cast is _bool:
        p.add_argument(flag, dest=dest, default=None, type=_bool, metavar="BOOL",
                       help=f"{help} [{key}; default {default}]")
    else:
        p.add_argument(flag, dest=dest, default=None, type=cast,
                       help=f"{help} [{key}; default {default}]", **kw)
    specs[key] = (dest, default, cast)


def _common(p, specs):
    p.add_argument("--config", help="flat key = value config file")
    _add(p, specs, "--seed", "seed", 0, int, "random seed")
    _add(p, specs, "--workers", "workers", 1, int, "worker threads")


def _geometry_opts(p, specs):
    g = DESK_GEOMETRY
    _add(p, specs, "--ring-radius", "geometry.ring_radius", g.ring_radius, float, "mm")
    _add(p, specs, "--rings", "geometry.num_rings", g.num_rings, int, "detector rings")
    _add(p, specs, "--crystals", "geometry.crystals_per_ring", g.crystals_per_ring, int, "crystals per ring")
    _add(p, specs, "--pitch", "geometry.crystal_axial_pitch", g.crystal_axial_pitch, float, "ring pitch, mm")
    _add(p, specs, "--tof-fwhm", "geometry.timing_resolution_fwhm", g.timing_resolution_fwhm, float,
         "timing resolution FWHM, ps")


def _grid_opts(p, specs):
    _add(p, specs, "--dims", "grid.dims", DESK_GRID.dims, _ints, "d,h,w")
    _add(p, specs, "--voxel-size", "grid.voxel_size", DESK_GRID.voxel_size, _floats, "mm, z,y,x")
    _add(p, specs, "--origin", "grid.origin", DESK_GRID.origin, _floats,
         "center of voxel (0,0,0), mm, z,y,x")


def _geometry(o) -> ScannerGeometry:
    return ScannerGeometry(o["geometry.ring_radius"], o["geometry.num_rings"],
                           o["geometry.crystals_per_ring"], o["geometry.crystal_axial_pitch"],
                           o["geometry.timing_resolution_fwhm"])


def _grid(o) -> VoxelGrid:
    return VoxelGrid(o["grid.dims"], o["grid.voxel_size"], o["grid.origin"])


def _efficiencies(spec: str, geometry):
    if spec == "uniform":
        return EfficiencyTable.uniform(geometry)
    if spec.startswith("random:"):
        return EfficiencyTable.random(geometry, int(spec.split(":", 1)[1]))
    raise io.ConfigFileError(f"efficiencies must be 'uniform' or 'random:SEED', got {spec!r}")


def _net_opts(p, specs):
    d = NetworkConfig()
    _add(p, specs, "--base-channels", "network.base_channels", d.base_channels, int, "channels at full resolution")
    _add(p, specs, "--levels", "network.resolution_levels", d.resolution_levels, int, "resolution levels")
    _add(p, specs, "--entry-residual", "network.entry_residual", d.entry_residual, int, "residual blocks at entry")
    _add(p, specs, "--exit-residual", "network.exit_residual", d.exit_residual, int, "residual blocks at exit")
    _add(p, specs, "--convs-per-level", "network.convs_per_level", d.convs_per_level, int, "convs per level")
    _add(p, specs, "--bottleneck-convs", "network.bottleneck_convs", d.bottleneck_convs, int, "bottleneck convs")


def _train_opts(p, specs, **overrides):
    d = TrainConfig()
    defaults = {**{f: getattr(d, f) for f in d.to_dict()}, **overrides}
    _add(p, specs, "--epochs", "train.epochs", defaults["epochs"], int, "epochs")
    _add(p, specs, "--samples-per-epoch", "train.samples_per_epoch", defaults["samples_per_epoch"], int, "")
    _add(p, specs, "--batch-size", "train.batch_size", defaults["batch_size"], int, "")
    _add(p, specs, "--iterations", "train.iterations", defaults["iterations"], int,
         "total iterations (overrides epochs)")
    _add(p, specs, "--crop", "train.crop", defaults["crop"], _ints, "transaxial crop h,w")
    _add(p, specs, "--crop-depth", "train.crop_depth", defaults["crop_depth"], int, "axial crop, 0 = full depth")
    _add(p, specs, "--lr-lower", "train.lr_lower", defaults["lr_lower"], float, "")
    _add(p, specs, "--lr-upper", "train.lr_upper", defaults["lr_upper"], float, "")
    _add(p, specs, "--lr-cycle-epochs", "train.lr_cycle_epochs", defaults["lr_cycle_epochs"], float, "")
    _add(p, specs, "--lr-gamma", "train.lr_gamma", defaults["lr_gamma"], float, "amplitude decay per cycle")
    _add(p, specs, "--alpha-window", "train.alpha_window", defaults["alpha_window"], int, "iterations")
    _add(p, specs, "--augment", "train.augment", defaults["augment"], _bool, "")
    _add(p, specs, "--sampling", "train.sampling", defaults["sampling"], str, "random | cycle")
    _add(p, specs, "--normalize", "train.normalize", defaults["normalize"], str, "none | global")
    _add(p, specs, "--checkpoint-every", "train.checkpoint_every", defaults["checkpoint_every"], int, "iterations")
    _add(p, specs, "--prefetch", "train.prefetch", defaults["prefetch"], int, "batches prepared ahead")


def _train_config(o, seed, checkpoint_dir) -> TrainConfig:
    depth = o["train.crop_depth"]
    return TrainConfig(
        epochs=o["train.epochs"], samples_per_epoch=o["train.samples_per_epoch"],
        batch_size=o["train.batch_size"], iterations=o["train.iterations"], crop=tuple(o["train.crop"]),
        crop_depth=None if not depth else depth, seed=seed, lr_lower=o["train.lr_lower"],
        lr_upper=o["train.lr_upper"], lr_cycle_epochs=o["train.lr_cycle_epochs"],
        lr_gamma=o["train.lr_gamma"], alpha_window=o["train.alpha_window"], augment=o["train.augment"],
        sampling=o["train.sampling"], normalize=o["train.normalize"],
        checkpoint_every=o["train.checkpoint_every"],
        checkpoint_dir=checkpoint_dir, prefetch=o["train.prefetch"])


# --- commands ---------------------------------------------------------------------------

def cmd_phantom(o, args):
    grid = _grid(o)
    kind = o["phantom.kind"]
    if kind == "uniform-cylinder":
        half = 0.999 * 0.5 * float(grid.upper[0] - grid.lower[0])
        spec = uniform_cylinder(o["phantom.radius"], half, o["phantom.activity"],
                                center=(0.0, 0.0, float(0.5 * (grid.upper[0] + grid.lower[0]))))
    elif kind == "sphere-set":
        # the body cylinder is centered on z = 0
        half = 0.999 * min(-float(grid.lower[0]), float(grid.upper[0]))
        spec = sphere_set(body_radius=o["phantom.radius"], body_half_length=half,
                          z=float(0.5 * (grid.upper[0] + grid.lower[0])))
    elif kind == "random-ellipsoids":
        spec = random_ellipsoids(grid, o["seed"])
    else:
        raise InvalidSpecError(f"unknown phantom kind {kind!r}")
    activity, mu = build_phantom(spec, grid)
    io.write_volume(args.activity, activity)
    io.write_volume(args.mu, mu)
    print(f"phantom\t{kind}\tactivity={args.activity}\tmu={args.mu}")


def cmd_simulate(o, args):
    geometry = _geometry(o)
    activity = io.read_volume(args.activity)
    mu = io.read_volume(args.mu)
    cfg = SimulationConfig(prompts=o["simulate.prompts"], randoms_fraction=o["simulate.randoms_fraction"],
                           seed=o["seed"], attenuation=o["simulate.attenuation"],
                           timing_blur=o["simulate.timing_blur"], shards=o["simulate.shards"],
                           workers=o["workers"])
    eff = _efficiencies(o["efficiencies"], geometry)
    t0 = time.perf_counter()
    events, stats = simulate_events(activity, mu, geometry, eff, cfg, return_stats=True)
    io.write_events(args.out, events, geometry)
    print(f"simulate\tevents={len(events)}\tprompts={cfg.prompts}\tdelays={stats['delays']}"
          f"\tseconds={time.perf_counter() - t0:.3f}")


def cmd_histogram(o, args):
    geometry = _geometry(o)
    grid = io.read_volume(args.like).grid if args.like else _grid(o)
    events, _ = io.read_events(args.events, geometry)
    eff = _efficiencies(o["efficiencies"], geometry)
    h = histogram(events, geometry, grid, eff, HistogramConfig(worker_count=o["workers"]))
    io.write_volume(args.out, Volume(h.values.astype(np.float32), grid, "counts"))
    print(f"histogram\tevents={len(events)}\tprompts={h.prompts_used}\tdelays={h.delays_used}"
          f"\tskipped={h.skipped}\tseconds={h.seconds:.6f}\tevents_per_second={h.events_per_second:.0f}")


def cmd_dataset(o, args):
    grid = _grid(o)
    geometry = _geometry(o)
    keep = o["dataset.keep_prob"]
    studies = ellipsoid_corpus(o["dataset.count"], o["seed"], grid, geometry, o["simulate.prompts"],
                               o["simulate.randoms_fraction"], keep if keep > 0 else None, o["workers"])
    save_corpus(args.out, studies, grid)
    print(f"dataset\tstudies={len(studies)}\tdir={args.out}")


def _write_history(out: Path, history):
    from .plotting import loss_curves
    with open(out / "loss.tsv", "w") as f:
        f.write("step\tlr\talpha\tmae\tssim_loss\ttotal\n")
        for r in history:
            f.write(f"{r['step']}\t{r['lr']:.6g}\t{r['alpha']:.6f}\t{r['mae']:.6g}"
                    f"\t{r['ssim_loss']:.6f}\t{r['total']:.6g}\n")
    if history:
        loss_curves(out / "loss.png", history)


def _progress(record):
    if record["step"] % 25 == 0:
        log.info("step %d lr %.3g alpha %.4f mae %.4g ssim_loss %.4f total %.4g", record["step"],
                 record["lr"], record["alpha"], record["mae"], record["ssim_loss"], record["total"])


def cmd_train(o, args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_corpus(args.data)
    cfg = _train_config(o, o["seed"], str(out))
    net = NetworkConfig(o["network.base_channels"], o["network.resolution_levels"],
                        o["network.entry_residual"], o["network.exit_residual"],
                        o["network.convs_per_level"], o["network.bottleneck_convs"])
    if args.resume:
        model, opt, extra = load_checkpoint(args.resume)
        from .loss import LossBalancer
        bal = LossBalancer.from_state(extra["balancer"]) if "balancer" in extra else None
        result = train(dataset, train_config=cfg, model=model, optimizer=opt, balancer=bal,
                       start_step=int(extra.get("step", 0)), on_step=_progress)
    else:
        result = train(dataset, net, cfg, on_step=_progress)
    _write_history(out, result.history)
    last = result.history[-1] if result.history else {}
    print(f"train\tsteps={result.step}\tfinal_total={last.get('total', float('nan')):.6g}"
          f"\tcheckpoint={result.last_checkpoint}")


def cmd_finetune(o, args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_corpus(args.data, low_dose=args.low_dose)
    cfg = _train_config(o, o["seed"], str(out))
    net = None
    if args.expect_architecture:
        net = NetworkConfig(o["network.base_channels"], o["network.resolution_levels"],
                            o["network.entry_residual"], o["network.exit_residual"],
                            o["network.convs_per_level"], o["network.bottleneck_convs"])
    result = fine_tune(args.base, dataset, cfg, net_config=net, on_step=_progress)
    _write_history(out, result.history)
    print(f"finetune\tsteps={result.step}\tcheckpoint={result.last_checkpoint}")


def cmd_reconstruct(o, args):
    from .reconstruct import reconstruct_volume
    model, _, _ = load_checkpoint(args.checkpoint)
    histo = io.read_volume(args.histo)
    mu = io.read_volume(args.mu)
    vol, seconds = reconstruct_volume(model, histo, mu, o["chunk_depth"] or None)
    io.write_volume(args.out, vol)
    print(f"reconstruct\tdims={'x'.join(map(str, vol.grid.dims))}\tseconds={seconds:.3f}")


def cmd_evaluate(o, args):
    from .plotting import profile_plot, slice_metrics, slice_panel
    recon = io.read_volume(args.recon)
    target = io.read_volume(args.target)
    report = evaluate(recon, target)
    profiles = {}
    for k, roi in enumerate(args.roi or []):
        x, y, z, dia = _floats(roi)
        report.roi[f"roi{k}"] = roi_stats(recon, (x, y, z), dia)
    for k, prof in enumerate(args.profile or []):
        v = _floats(prof)
        pos, vals = line_profile(recon, v[0:3], v[3:6], o["evaluate.samples"])
        tpos, tvals = line_profile(target, v[0:3], v[3:6], o["evaluate.samples"])
        profiles[f"recon{k}"] = (pos, vals)
        profiles[f"target{k}"] = (tpos, tvals)
        for name, (pp, vv) in ((f"recon{k}", (pos, vals)), (f"target{k}", (tpos, tvals))):
            try:
                report.fwhm[name] = fwhm(pp, vv)
            except NotMeasurableError:
                report.fwhm[name] = float("nan")
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    tsv = prefix.with_name(prefix.name + "_metrics.tsv")
    tsv.write_text("\n".join(report.records()) + "\n")
    slice_metrics(prefix.with_name(prefix.name + "_slices.png"), report.mae_slices, report.ms_ssim_slices)
    slice_panel(prefix.with_name(prefix.name + "_panel.png"), {"recon": recon.data, "target": target.data})
    if profiles:
        profile_plot(prefix.with_name(prefix.name + "_profiles.png"), profiles)
    print(f"evaluate\tmae={report.mae:.6g}\tms_ssim={report.ms_ssim:.6f}\treport={tsv}")


def cmd_bench(o, args):
    from .bench import run_bench
    from .plotting import throughput_bars
    geometry = _geometry(o)
    grid = io.read_volume(args.like).grid if args.like else _grid(o)
    events, _ = io.read_events(args.events, geometry)
    model = load_checkpoint(args.checkpoint)[0] if args.checkpoint else None
    workers = _ints(o["bench.workers"]) if isinstance(o["bench.workers"], str) else o["bench.workers"]
    report = run_bench(events, geometry, grid, model, _efficiencies(o["efficiencies"], geometry),
                       workers, o["bench.repeats"], o["bench.recon_shape"], o["bench.recon_repeats"],
                       o["chunk_depth"] or None)
    text = json.dumps(report, indent=2, sort_keys=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n")
    eps = report["histogram_events_per_second"]
    recon = report.get("reconstruction", {}).get("median_seconds")
    throughput_bars(out.with_suffix(".png"), list(eps), list(eps.values()), recon)
    print(text)


def cmd_export(o, args):
    model, _, _ = load_checkpoint(args.checkpoint)
    io.write_checkpoint(args.out, model.config.to_dict(), model.state(), precision="f32")
    print(f"export\t{args.out}")


# --- parser -------------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="histopet", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    specs_by_cmd = {}

    def command(name, func, help):
        p = sub.add_parser(name, help=help, description=help)
        specs = {}
        _common(p, specs)
        p.set_defaults(func=func)
        specs_by_cmd[name] = specs
        return p, specs

    p, s = command("phantom", cmd_phantom, "render a phantom to activity and mu volumes")
    _grid_opts(p, s)
    _add(p, s, "--kind", "phantom.kind", "random-ellipsoids", str,
         "uniform-cylinder | sphere-set | random-ellipsoids")
    _add(p, s, "--radius", "phantom.radius", 100.0, float, "body radius, mm")
    _add(p, s, "--activity-level", "phantom.activity", 5000.0, float, "Bq/ml (uniform cylinder)")
    p.add_argument("--activity", required=True, help="output activity volume")
    p.add_argument("--mu", required=True, help="output mu volume")

    p, s = command("simulate", cmd_simulate, "simulate list-mode events from a phantom")
    _geometry_opts(p, s)
    _add(p, s, "--prompts", "simulate.prompts", 1_000_000, int, "prompt events")
    _add(p, s, "--randoms-fraction", "simulate.randoms_fraction", 0.0, float, "")
    _add(p, s, "--attenuation", "simulate.attenuation", True, _bool, "")
    _add(p, s, "--timing-blur", "simulate.timing_blur", True, _bool, "")
    _add(p, s, "--shards", "simulate.shards", 1, int, "independent random streams")
    _add(p, s, "--efficiencies", "efficiencies", "uniform", str, "uniform | random:SEED")
    p.add_argument("--activity", required=True)
    p.add_argument("--mu", required=True)
    p.add_argument("--out", required=True, help="output event file")

    p, s = command("histogram", cmd_histogram, "histogram events into a histo-image")
    _geometry_opts(p, s)
    _grid_opts(p, s)
    _add(p, s, "--efficiencies", "efficiencies", "uniform", str, "uniform | random:SEED")
    p.add_argument("--events", required=True)
    p.add_argument("--like", help="take the grid from this volume file")
    p.add_argument("--out", required=True)

    p, s = command("dataset", cmd_dataset, "simulate a corpus of random-ellipsoid training triples")
    _geometry_opts(p, s)
    _grid_opts(p, s)
    _add(p, s, "--count", "dataset.count", 8, int, "studies")
    _add(p, s, "--prompts", "simulate.prompts", 3_000_000, int, "prompts per study")
    _add(p, s, "--randoms-fraction", "simulate.randoms_fraction", 0.05, float, "")
    _add(p, s, "--keep-prob", "dataset.keep_prob", 0.0, float, "also write decimated histo-images")
    p.add_argument("--out", required=True, help="output directory")

    p, s = command("train", cmd_train, "train a network from scratch")
    _net_opts(p, s)
    _train_opts(p, s)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="continue from this checkpoint")

    p, s = command("finetune", cmd_finetune, "continue training from a checkpoint with a fresh optimizer")
    _net_opts(p, s)
    _train_opts(p, s)
    p.add_argument("--base", required=True, help="base checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--low-dose", action="store_true", help="use the *_histo_low volumes")
    p.add_argument("--expect-architecture", action="store_true",
                   help="fail unless the checkpoint matches the --network options")
    p.add_argument("--out", required=True)

    p, s = command("reconstruct", cmd_reconstruct, "reconstruct an activity volume")
    _add(p, s, "--chunk-depth", "chunk_depth", 0, int, "axial chunk depth, 0 = whole volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--histo", required=True)
    p.add_argument("--mu", required=True)
    p.add_argument("--out", required=True)

    p, s = command("evaluate", cmd_evaluate, "compare a reconstruction with a target")
    _add(p, s, "--samples", "evaluate.samples", 201, int, "points per line profile")
    p.add_argument("--recon", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--roi", action="append", help="x,y,z,diameter in mm (repeatable)")
    p.add_argument("--profile", action="append", help="x0,y0,z0,x1,y1,z1 in mm (repeatable)")
    p.add_argument("--out-prefix", required=True, help="path prefix for the TSV and PNG outputs")

    p, s = command("bench", cmd_bench, "histogramming and reconstruction throughput")
    _geometry_opts(p, s)
    _grid_opts(p, s)
    _add(p, s, "--efficiencies", "efficiencies", "uniform", str, "uniform | random:SEED")
    _add(p, s, "--bench-workers", "bench.workers", (1, 2, 4), _ints, "worker counts to time")
    _add(p, s, "--repeats", "bench.repeats", 3, int, "")
    _add(p, s, "--recon-shape", "bench.recon_shape", (96, 128, 128), _ints, "d,h,w")
    _add(p, s, "--recon-repeats", "bench.recon_repeats", 5, int, "")
    _add(p, s, "--chunk-depth", "chunk_depth", 0, int, "axial chunk depth, 0 = whole volume")
    p.add_argument("--events", required=True)
    p.add_argument("--like", help="take the grid from this volume file")
    p.add_argument("--checkpoint", help="also time reconstruction with this model")
    p.add_argument("--out", required=True, help="JSON report path (a PNG is written alongside)")

    p, s = command("export", cmd_export, "write a compact float32 copy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    return parser, specs_by_cmd


def main(argv=None) -> int:
    parser, specs = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_CONFIG
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        config = io.read_config(args.config) if args.config else {}
        opts = Options(args, specs[args.command], config)
        args.func(opts, args)
        return EXIT_OK
    except UsageError as exc:
        print(f"histopet: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"histopet: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CONFIG_ERRORS as exc:
        print(f"histopet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"histopet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
