"""``mstcassi`` command line.

Exit codes: 0 success, 1 usage error, 2 format or I/O error, 3 a check or
gate failed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import audit, hsit
from . import tensor as T
from .attention import ConfigError
from .metrics import psnr_per_channel, spectral_correlation, ssim_per_channel
from .model import MST, PRESETS, load_config, preset, save_config
from .optics import (Noise, default_wavelengths, disperse, generate_mask, generate_scene,
                     init_input, measure, modulate, shift_mask)
from .tensor import DimensionError
from .training import TrainConfig, TrainingDiverged, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_GATE = 0, 1, 2, 3

log = logging.getLogger("mstcassi")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v: float) -> str:
    return "inf" if np.isinf(v) else f"{v:.6f}"


def _config(arg: str):
    if arg.lower() in PRESETS:
        return preset(arg)
    if os.path.exists(arg):
        return load_config(arg)
    raise UsageError(f"--config {arg!r} is neither a preset ({', '.join(sorted(PRESETS))}) nor a file")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


# -- verbs ----------------------------------------------------------------------


def cmd_simulate(a) -> int:
    if a.scene:
        cube = hsit.load(a.scene)
        if cube.ndim != 3:
            raise hsit.FormatError(f"{a.scene}: expected H x W x N cube, got shape {cube.shape}")
    else:
        cube = generate_scene(a.synthetic, a.height, a.width, a.bands)
    h, w, n = cube.shape
    if a.mask:
        mask = hsit.load(a.mask)
        if mask.shape != (h, w):
            raise DimensionError(f"mask {mask.shape} does not match scene extents {(h, w)}")
    else:
        mask = generate_mask(a.random_mask, h, w, a.density)
    y = measure(disperse(modulate(cube, mask), a.d), Noise.parse(a.noise), a.noise_seed)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    hsit.save(out / "measurement.hsit", y)
    hsit.save(out / "mask.hsit", mask)
    hsit.save(out / "shifted_mask.hsit", shift_mask(mask, a.d, n))
    hsit.save(out / "cube.hsit", cube)
    print(f"measurement {y.shape[0]}x{y.shape[1]} (d={a.d}, bands={n}, noise={Noise.parse(a.noise)}) -> {out}")
    return EXIT_OK


def cmd_count(a) -> int:
    cfg = _config(a.config)
    params = audit.count_params(cfg)
    flops = audit.count_flops(cfg, a.height, a.width, per_mac=a.per_mac)
    print(f"config={a.config} size={a.height}x{a.width}")
    print(f"params={params} ({params / 1e6:.2f} M)")
    print(f"flops={flops} ({flops / 1e9:.2f} G, {a.per_mac} per MAC)")
    if a.expect:
        parts = a.expect.split(",")
        if len(parts) != 3:
            raise UsageError("--expect takes params,flops,tol")
        want_p, want_f, tol = (float(v) for v in parts)
        ok, lines = audit.budget_report(cfg, a.height, a.width, want_p, want_f, tol, per_mac=a.per_mac)
        for line in lines:
            print(line)
        if not ok:
            return EXIT_GATE
    return EXIT_OK


def _load_scenes(a, cfg):
    if a.scene:
        scenes = [hsit.load(p) for p in a.scene]
    else:
        scenes = [generate_scene(s, a.height, a.width, cfg.n_lambda) for s in _ints(a.synthetic)]
    return scenes


def cmd_train(a) -> int:
    cfg = _config(a.config)
    scenes = _load_scenes(a, cfg)
    h, w = scenes[0].shape[:2]
    mask = hsit.load(a.mask) if a.mask else generate_mask(a.random_mask, h, w)
    tc = TrainConfig(lr=a.lr, epochs=a.epochs, steps_per_epoch=a.steps_per_epoch, batch=a.batch,
                     patch=a.patch or min(h, w), seed=a.seed, augment=a.augment, noise=a.noise,
                     halve_every=a.halve_every)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    tc.log_path = str(out / "train_log.csv")
    if a.snapshot_every:
        tc.snapshot_every, tc.snapshot_dir = a.snapshot_every, str(out / "snapshots")
    model = MST(cfg, seed=a.seed)
    with T.threads():
        history = train(model, scenes, mask, tc)
    model.save_weights(out / "weights.hsit")
    save_config(cfg, out / "config.txt")
    hsit.save(out / "mask.hsit", mask)
    last = history[-1]
    print(f"steps={len(history)} final rmse={last['rmse']:.6f} scl={last['scl']:.6f} total={last['total']:.6f}")
    return EXIT_OK


def cmd_reconstruct(a) -> int:
    cfg = _config(a.config)
    y = hsit.load(a.measurement)
    mask = hsit.load(a.mask)
    if y.ndim != 2 or mask.ndim != 2:
        raise hsit.FormatError("measurement and mask must be 2-D")
    model = MST(cfg)
    model.load_weights(a.weights)
    h = init_input(y, cfg.d, cfg.n_lambda)
    with T.threads():
        cube = model.reconstruct(h, mask)
    hsit.save(a.out, cube)
    print(f"reconstruction {cube.shape} -> {a.out}")
    return EXIT_OK


def cmd_eval(a) -> int:
    pred, gt = hsit.load(a.pred), hsit.load(a.gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    p = psnr_per_channel(pred, gt, a.peak)
    s = ssim_per_channel(pred, gt, a.peak)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["channel", "psnr", "ssim"])
    for i, (pv, sv) in enumerate(zip(p, s)):
        w.writerow([i, _fmt(pv), _fmt(sv)])
    w.writerow(["mean", _fmt(float(np.mean(p))), _fmt(float(np.mean(s)))])
    return EXIT_OK


def cmd_gradcheck(a) -> int:
    from .gradcheck import run_suite

    try:
        report = run_suite(a.module, a.seed)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    worst = 0.0
    for name, err in report.items():
        worst = max(worst, err)
        print(f"{name},{err:.3e},{'ok' if err < a.tol else 'FAIL'}")
    print(f"max_rel_err,{worst:.3e},{'ok' if worst < a.tol else 'FAIL'}")
    return EXIT_OK if worst < a.tol else EXIT_GATE


def write_pgm(path, plane: np.ndarray) -> None:
    """8-bit binary PGM; values in [0, 1] map linearly to 0..255 (rounded half up)."""
    img = np.floor(np.clip(plane, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise hsit.FormatError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def cmd_plot(a) -> int:
    cube = hsit.load(a.cube)
    if cube.ndim != 3:
        raise hsit.FormatError(f"{a.cube}: expected H x W x N cube")
    h, w, n = cube.shape
    channels = _ints(a.channels) if a.channels else list(range(n))
    bad = [c for c in channels if not 0 <= c < n]
    if bad:
        raise UsageError(f"channel(s) {bad} out of range 0..{n - 1}")
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for c in channels:
        write_pgm(out / f"channel_{c:02d}.pgm", cube[:, :, c])
    ref = hsit.load(a.ref) if a.ref else None
    if ref is not None and ref.shape != cube.shape:
        raise DimensionError(f"reference {ref.shape} does not match cube {cube.shape}")
    if a.spectral_at:
        xy = _ints(a.spectral_at)
        if len(xy) != 2 or not (0 <= xy[0] < w and 0 <= xy[1] < h):
            raise UsageError(f"--spectral-at {a.spectral_at!r} must be X,Y inside {w}x{h}")
        x, y = xy
        curve = cube[y, x, :]
        lam = default_wavelengths(n)
        with open(out / "spectrum.csv", "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["band", "wavelength_nm", "value"] + (["reference"] if ref is not None else []))
            for i in range(n):
                row = [i, f"{lam[i]:.6f}", f"{curve[i]:.6f}"]
                if ref is not None:
                    row.append(f"{ref[y, x, i]:.6f}")
                wr.writerow(row)
        if ref is not None:
            r = spectral_correlation(curve, ref[y, x, :])
            (out / "correlation.csv").write_text(f"x,y,pearson\n{x},{y},{r:.6f}\n", encoding="utf-8")
            print(f"spectral correlation at ({x},{y}): {r:.6f}")
    if a.band_correlation:
        flat = cube.reshape(-1, n).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.nan_to_num(np.corrcoef(flat, rowvar=False), nan=0.0)
        np.savetxt(out / "band_correlation.csv", np.atleast_2d(corr), fmt="%.6f", delimiter=",")
    print(f"wrote {len(channels)} channel image(s) -> {out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mstcassi", description="CASSI simulation and MST reconstruction toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a CASSI snapshot")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--scene", help="HSIT cube H x W x N")
    g.add_argument("--synthetic", type=int, metavar="SEED", help="synthetic scene seed")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--mask", help="HSIT mask H x W")
    g.add_argument("--random-mask", type=int, metavar="SEED")
    s.add_argument("--height", type=int, default=256)
    s.add_argument("--width", type=int, default=256)
    s.add_argument("--bands", type=int, default=28)
    s.add_argument("--density", type=float, default=0.5)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--noise", default="none", help="none | gaussian:SIGMA | shot:BITS")
    s.add_argument("--noise-seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("count", help="parameter / FLOP audit")
    c.add_argument("--config", default="mst-s")
    c.add_argument("--height", type=int, default=256)
    c.add_argument("--width", type=int, default=256)
    c.add_argument("--per-mac", type=int, default=1, choices=(1, 2),
                   help="FLOPs per multiply-accumulate (the efficiency table uses 1)")
    c.add_argument("--expect", help="params,flops,tol gate")
    c.set_defaults(func=cmd_count)

    t = sub.add_parser("train", help="train on simulated snapshots")
    t.add_argument("--config", default="toy")
    g = t.add_mutually_exclusive_group(required=True)
    g.add_argument("--scene", nargs="+")
    g.add_argument("--synthetic", metavar="SEEDS", help="comma-separated scene seeds")
    g = t.add_mutually_exclusive_group()
    g.add_argument("--mask")
    g.add_argument("--random-mask", type=int, default=1, metavar="SEED")
    t.add_argument("--height", type=int, default=32)
    t.add_argument("--width", type=int, default=32)
    t.add_argument("--lr", type=float, default=4e-4)
    t.add_argument("--halve-every", type=int, default=50)
    t.add_argument("--epochs", type=int, default=5)
    t.add_argument("--steps-per-epoch", type=int, default=100)
    t.add_argument("--batch", type=int, default=1)
    t.add_argument("--patch", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--augment", action="store_true")
    t.add_argument("--noise", default="none")
    t.add_argument("--snapshot-every", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("reconstruct", help="reconstruct a cube from a snapshot")
    r.add_argument("--weights", required=True)
    r.add_argument("--config", default="toy", help="preset name or key = value file")
    r.add_argument("--measurement", required=True)
    r.add_argument("--mask", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("eval", help="PSNR/SSIM per channel as CSV")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--peak", type=float, default=1.0)
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    gc.add_argument("--module", default="all", help="ops | smsa | mask | block | mst | all")
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)

    pl = sub.add_parser("plot", help="channel images and spectral curves")
    pl.add_argument("--cube", required=True)
    pl.add_argument("--channels", help="comma-separated band indices (default: all)")
    pl.add_argument("--out-dir", required=True)
    pl.add_argument("--spectral-at", metavar="X,Y")
    pl.add_argument("--ref", help="reference cube for spectral correlation")
    pl.add_argument("--band-correlation", action="store_true",
                    help="also write the band-by-band correlation matrix")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mstcassi: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (hsit.FormatError, OSError) as exc:
        print(f"mstcassi: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DimensionError, ConfigError, ValueError) as exc:
        print(f"mstcassi: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as exc:
        print(f"mstcassi: {exc}", file=sys.stderr)
        return EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
