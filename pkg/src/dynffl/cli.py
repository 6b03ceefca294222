"""Command-line front end: simulate, reconstruct, sweep, evaluate, render.

Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, scanner_fingerprint
from .errors import ConfigError, DegenerateInputError, DivergenceError, DomainError
from .forward import (
    NOISE_ALGORITHM,
    VoltageRecording,
    add_noise,
    dynamic_forward_direct,
    normalize,
    reduced_sinogram,
)
from .io import AxisHeader, read_array, write_array, write_pgm
from .metrics import psnr, ssim
from .phantom import ConcentrationImage
from .recon import ReconResult, build_system, pdhg_solve, sweep

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
PACKAGED_CONFIGS = ("desk", "paper")


# ---------------------------------------------------------------------------
# helpers


def _fmt(x) -> str:
    return repr(float(x))


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _resolve_config(name):
    if name is None:
        name = "desk"
    if name in PACKAGED_CONFIGS:
        ref = resources.files("dynffl") / "configs" / f"{name}.json"
        with resources.as_file(ref) as p:
            return load_config(p)
    return load_config(name)


def _prepare(args) -> tuple[ExperimentConfig, Path]:
    cfg = _resolve_config(args.config)
    if args.seed_override is not None:
        cfg = cfg.with_seed(args.seed_override)
    out = Path(args.out if args.out is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _reference(cfg: ExperimentConfig) -> ConcentrationImage:
    return cfg.phantom.build(cfg.rec_grid())


def _load_recording(path: Path, cfg: ExperimentConfig) -> VoltageRecording:
    data, header = read_array(path)
    sc = cfg.scanner
    if header is None or header.kind != "recording":
        raise DomainError(f"{path}: not a recording file")
    want = scanner_fingerprint(sc)
    have = {k: getattr(header, k) for k in want}
    diff = [(k, have[k], want[k]) for k in want
            if not np.isclose(have[k], want[k], rtol=1e-12, atol=0)]
    if diff:
        raise ConfigError([(f"recording.{k}", f"file has {h!r}, configuration expects {w!r}")
                           for k, h, w in diff])
    vals = data.reshape(sc.channel_count, sc.angle_count, sc.samples_per_translation + 1)
    return VoltageRecording(vals)


def _write_result(folder: Path, res: ReconResult, cfg: ExperimentConfig, extra: dict) -> None:
    folder.mkdir(parents=True, exist_ok=True)
    sc = cfg.scanner
    write_array(folder / "c0.bin", res.c0_estimate.values,
                AxisHeader.for_scanner("image", sc, res.c0_estimate.grid.half_width))
    write_array(folder / "v.bin", res.sinogram_estimate.values,
                AxisHeader.for_scanner("reduced-sinogram", sc))
    tr = res.objective_trace
    doc = {
        "iterations": res.iterations,
        "termination": res.termination,
        "note": res.note,
        "objective": {"first": float(tr[0]) if len(tr) else 0.0,
                      "last": float(tr[-1]) if len(tr) else 0.0,
                      "min": float(tr.min()) if len(tr) else 0.0,
                      "length": int(len(tr))},
        "step_sizes": {"tau": float(res.step_sizes[0]), "sigma": float(res.step_sizes[1])}
        if res.step_sizes else {},
        "version": __version__,
    }
    doc.update(extra)
    _dump_json(folder / "result.json", doc)


def _solve_doc(solve) -> dict:
    return {"alpha1": solve.alpha1, "alpha2": solve.alpha2, "alpha3": solve.alpha3,
            "method": solve.method, "max_iterations": solve.max_iterations,
            "tolerance": solve.tolerance}


def _method_and_solve(args, cfg: ExperimentConfig):
    method = args.method or cfg.method
    solve = replace(cfg.solve, method=method)
    for name in ("alpha1", "alpha2", "alpha3"):
        val = getattr(args, name, None)
        if val is not None:
            solve = replace(solve, **{name: val})
    return method, solve


def _normalized_system(cfg, method, recording_path):
    rec = _load_recording(recording_path, cfg)
    normed, u_star = normalize(rec)
    bundle = build_system(cfg.scanner, cfg.motion, cfg.rec_grid(), method, u_star)
    return bundle, normed, u_star


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg, out = _prepare(args)
    sc = cfg.scanner
    grid = cfg.sim_grid()
    c0 = cfg.phantom.build(grid)
    model = cfg.motion
    clean = dynamic_forward_direct(c0, model, sc)
    _, u_star = normalize(clean)  # raises on an all-zero recording
    std = cfg.noise.absolute_std(u_star)
    rec = add_noise(clean, std, cfg.noise.seed)
    sino = reduced_sinogram(c0, model, sc)
    L, p, nt = rec.values.shape
    write_array(out / "phantom.bin", c0.values, AxisHeader.for_scanner("image", sc, grid.half_width))
    write_array(out / "recording.bin", rec.values.reshape(L * p, nt),
                AxisHeader.for_scanner("recording", sc))
    write_array(out / "sinogram_truth.bin", sino.values, AxisHeader.for_scanner("reduced-sinogram", sc))
    meta = {
        "version": __version__,
        "config": cfg.to_dict(),
        "u_star_clean": u_star,
        "recording_shape": [L, p, nt],
        "samples_per_translation": sc.samples_per_translation,
        "noise": {"std_V": std, "seed": cfg.noise.seed, "algorithm": NOISE_ALGORITHM},
    }
    _dump_json(out / "meta.json", meta)
    print(f"simulated recording {L}x{p}x{nt}, u* = {u_star:.6g} V -> {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg, out = _prepare(args)
    method, solve = _method_and_solve(args, cfg)
    rec_path = Path(args.recording) if args.recording else out / "recording.bin"
    bundle, normed, u_star = _normalized_system(cfg, method, rec_path)
    res = pdhg_solve(bundle, normed, solve)
    folder = out / f"reconstruct_{method}"
    _write_result(folder, res, cfg, {"solve": _solve_doc(solve), "u_star": u_star,
                                     "recording": str(rec_path.name)})
    print(f"{method}: {res.termination} after {res.iterations} iterations, "
          f"objective {res.objective:.6g} -> {folder}")
    return EXIT_OK


SWEEP_COLUMNS = ("method", "alpha1", "alpha2", "alpha3", "ssim", "psnr", "iterations", "seconds")


def cmd_sweep(args) -> int:
    cfg, out = _prepare(args)
    method, solve = _method_and_solve(args, cfg)
    rec_path = Path(args.recording) if args.recording else out / "recording.bin"
    bundle, normed, u_star = _normalized_system(cfg, method, rec_path)
    ref = _reference(cfg)
    res = sweep(bundle, normed, cfg.sweep_alpha1, cfg.sweep_alpha2, solve.alpha3, ref,
                base=solve, workers=args.workers, keep_results=True)
    folder = out / f"sweep_{method}"
    folder.mkdir(parents=True, exist_ok=True)
    with open(folder / "sweep.csv", "w", newline="") as fh:
        fh.write(f"# max_iterations={solve.max_iterations} tolerance={solve.tolerance!r} "
                 f"power_iterations={solve.power_iterations} step_safety={solve.step_safety!r} "
                 f"u_star={u_star!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in res.rows:
            secs = _fmt(r.seconds) if args.timing else ""
            w.writerow([r.method, _fmt(r.alpha1), _fmt(r.alpha2), _fmt(r.alpha3), _fmt(r.ssim),
                        _fmt(r.psnr), r.iterations, secs])
    for tag, best in (("best_ssim", res.best_ssim), ("best_psnr", res.best_psnr)):
        row = {k: getattr(best, k) for k in SWEEP_COLUMNS if k != "seconds"}
        _write_result(folder / tag, res.results[(best.i1, best.i2)], cfg,
                      {"selected": row, "u_star": u_star})
    print(f"{method} sweep over {len(res.rows)} cells: best SSIM {res.best_ssim.ssim:.4f} "
          f"(a1={res.best_ssim.alpha1:.3g}, a2={res.best_ssim.alpha2:.3g}), best PSNR "
          f"{res.best_psnr.psnr:.2f} (a1={res.best_psnr.alpha1:.3g}, a2={res.best_psnr.alpha2:.3g})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, out = _prepare(args)
    ref = _reference(cfg)
    folder = out / "evaluation"
    folder.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in args.images] or sorted(out.glob("reconstruct_*/c0.bin"))
    rows = []
    for path in paths:
        data, header = read_array(path)
        if data.shape != ref.values.shape:
            raise DomainError(f"{path}: image shape {data.shape} does not match the "
                              f"reconstruction grid {ref.values.shape}")
        img = ConcentrationImage(ref.grid, np.maximum(data, 0.0))
        rows.append((f"{path.parent.name}/{path.name}", ssim(img, ref), psnr(img, ref)))
    with open(folder / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("image", "ssim", "psnr"))
        for name, s, p in rows:
            w.writerow((name, _fmt(s), _fmt(p)))
    _dump_json(folder / "metrics.json",
               [{"image": n, "ssim": s, "psnr": p if np.isfinite(p) else "inf"} for n, s, p in rows])
    for name, s, p in rows:
        print(f"{name}: SSIM {s:.4f}  PSNR {p:.2f} dB")
    return EXIT_OK


def _render_bin(path: Path, folder: Path, stem: str, clamp: bool, cfg) -> None:
    from . import plotting

    data, header = read_array(path)
    kind = header.kind if header is not None else "array"
    np.savetxt(folder / f"{stem}.csv", data, delimiter=",", fmt="%.17g")
    if kind == "recording":
        L = header.channel_count
        vals = data.reshape(L, -1)
        plotting.recording_figure(folder / f"{stem}.png", vals, header.sampling_frequency, stem)
        return
    write_pgm(folder / f"{stem}.pgm", data, clamp=clamp)
    if kind == "reduced-sinogram":
        p, N = header.angle_count, header.samples_per_translation
        angles = np.arange(p) * np.pi / p
        disp = (1.0 - 2.0 * np.arange(N + 1) / N) * header.fov_half_width
        plotting.sinogram_figure(folder / f"{stem}.png", data, angles, disp, stem)
    else:
        half = header.half_width if header is not None and header.half_width > 0 \
            else cfg.scanner.fov_half_width
        plotting.image_figure(folder / f"{stem}.png", data, half, stem, clamp=clamp)


def _render_sweep(path: Path, folder: Path, stem: str) -> None:
    from . import plotting

    with open(path) as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    a1 = sorted({float(r["alpha1"]) for r in rows})
    a2 = sorted({float(r["alpha2"]) for r in rows})
    for metric in ("ssim", "psnr"):
        z = np.full((len(a1), len(a2)), np.nan)
        for r in rows:
            z[a1.index(float(r["alpha1"])), a2.index(float(r["alpha2"]))] = float(r[metric])
        plotting.sweep_figure(folder / f"{stem}_{metric}.png", a1, a2, z, metric.upper())


def cmd_render(args) -> int:
    cfg, out = _prepare(args)
    folder = out / "render"
    folder.mkdir(parents=True, exist_ok=True)
    paths = [Path(p) for p in args.artifacts]
    if not paths:
        paths = sorted(p for p in out.rglob("*.bin") if folder not in p.parents)
        paths += sorted(out.glob("sweep_*/sweep.csv"))
    for path in paths:
        if not path.is_file():
            raise FileNotFoundError(f"{path}: no such file")
        rel = path.parent.name if path.parent != out else ""
        stem = f"{rel}_{path.stem}" if rel else path.stem
        if path.suffix == ".csv":
            _render_sweep(path, folder, stem)
        else:
            _render_bin(path, folder, stem, args.clamp, cfg)
    print(f"rendered {len(paths)} artifacts -> {folder}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(parser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d,
                        help="experiment JSON, or a packaged name: desk, paper (default desk)")
    parser.add_argument("--out", default=d, help="output directory (overrides the config)")
    parser.add_argument("--workers", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes for sweeps")
    parser.add_argument("--seed-override", type=int, default=d,
                        help="replace the noise and solver seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynffl", description="Dynamic FFL MPI simulation and joint reconstruction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    add("simulate", cmd_simulate, "simulate the phantom, its sinogram and the coil voltages")

    def solver_args(p):
        p.add_argument("--recording", help="recording.bin (default: <out>/recording.bin)")
        p.add_argument("--method", choices=("M1", "M2", "M3"), help="override the method")
        p.add_argument("--alpha1", type=float)
        p.add_argument("--alpha2", type=float)
        p.add_argument("--alpha3", type=float)

    solver_args(add("reconstruct", cmd_reconstruct, "joint reconstruction of (c0, v)"))
    p = add("sweep", cmd_sweep, "parameter sweep over the alpha1 x alpha2 grid")
    solver_args(p)
    p.add_argument("--timing", action="store_true",
                   help="fill the seconds column (makes sweep.csv run-dependent)")
    p = add("evaluate", cmd_evaluate, "SSIM / PSNR of reconstructions against the phantom")
    p.add_argument("images", nargs="*", help="c0.bin files (default: <out>/reconstruct_*/c0.bin)")
    p = add("render", cmd_render, "write PGM / PNG / CSV renderings of artifacts")
    p.add_argument("artifacts", nargs="*", help=".bin or sweep.csv files (default: all in <out>)")
    p.add_argument("--clamp", action="store_true", help="clamp image values to [0, 1]")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DegenerateInputError, DivergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
