"""Command-line interface: simulate, deblur, reconstruct, calibrate, evaluate.

Every command is deterministic given its inputs, --seed, and any --threads
value: worker threads only split independent per-item work (views, frames,
image pairs) and results are committed in index order, so the output bytes
never depend on the thread count. Progress goes to standard error; results
go to files and standard output.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
assertion failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from . import dataio
from .calibrate import fit_response, fit_threshold
from .events import BayerPattern, ThresholdConfig
from .imaging import (GammaCurve, ImageBuffer, mosaic, psnr, ssim, to_gamma,
                      to_linear)
from .integrator import edi_deblur, reconstruct_video
from .simulator import (DEFAULT_THETA, FrameSequence, SimulatorConfig,
                        render_dataset)

log = logging.getLogger("evdi")

_IMAGE_EXTS = (".png", ".pfm")


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evdi", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads; 0 = one per CPU "
                        "(default: EVDI_THREADS or 0)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for all randomized sampling (default 0)")
    p.add_argument("--log-level", default="info",
                   choices=("debug", "info", "warning", "error"),
                   help="verbosity of progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[],
                       help="render a blurry/sharp/event dataset from "
                            "high-rate frames")
    s.add_argument("--frames", required=True,
                   help="directory of numbered PNG frames (gamma 2.2); a "
                        "timestamps.txt of integer microseconds overrides "
                        "--fps")
    s.add_argument("--fps", type=float, default=1000.0,
                   help="frame rate when no timestamp file exists")
    s.add_argument("--exposure-ms", type=float, default=40.0)
    s.add_argument("--period-ms", type=float, default=40.0,
                   help="spacing of consecutive mid-exposure times")
    s.add_argument("--theta", type=float, default=DEFAULT_THETA,
                   help="symmetric contrast threshold")
    s.add_argument("--mode", choices=("mono", "bayer"), default="mono")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("deblur",
                       help="recover the sharp latent of one blurry view")
    d.add_argument("--manifest", required=True)
    d.add_argument("--view", type=int, required=True)
    d.add_argument("--theta", type=float, default=None,
                   help="override the manifest contrast threshold")
    d.add_argument("--at", type=float, default=None,
                   help="latent timestamp in microseconds "
                        "(default: mid-exposure)")
    d.add_argument("--out", required=True,
                   help="output path; writes both .pfm and .png")
    d.set_defaults(func=cmd_deblur)

    r = sub.add_parser("reconstruct",
                       help="sample a uniform-rate sharp video across one "
                            "exposure")
    r.add_argument("--manifest", required=True)
    r.add_argument("--view", type=int, required=True)
    r.add_argument("--rate", type=float, required=True,
                   help="output frame rate in Hz")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_reconstruct)

    c = sub.add_parser("calibrate",
                       help="fit the contrast threshold (and optionally "
                            "the response curve) from a dataset")
    c.add_argument("--manifest", required=True)
    c.add_argument("--fit-response", action="store_true")
    c.add_argument("--out", required=True, help="JSON report path")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate",
                       help="PSNR/SSIM of a prediction directory against "
                            "ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True, help="CSV table path")
    e.add_argument("--metric-domain", choices=("gamma", "linear"),
                   default="gamma",
                   help="compare stored values (gamma) or decode to "
                        "linear first")
    e.set_defaults(func=cmd_evaluate)
    return p


def _resolve_threads(args) -> int:
    n = args.threads
    if n is None:
        env = os.environ.get("EVDI_THREADS", "")
        n = int(env) if env else 0
    if n < 0:
        raise ValueError(f"--threads must be >= 0, got {n}")
    if n == 0:
        n = os.cpu_count() or 1
    return n


def _validate_seed(args) -> None:
    if not 0 <= args.seed < 2 ** 64:
        raise ValueError(f"--seed must fit in 64 bits, got {args.seed}")


def _map_indexed(fn, items: List, threads: int) -> List:
    """Apply fn to each item, possibly in parallel, preserving order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _load_frames_dir(frames_dir: str, fps: float):
    if not os.path.isdir(frames_dir):
        raise ValueError(f"frames directory not found: {frames_dir}")
    names = sorted(n for n in os.listdir(frames_dir)
                   if n.lower().endswith(".png"))
    if not names:
        raise ValueError(f"no PNG frames in {frames_dir}")
    ts_path = os.path.join(frames_dir, "timestamps.txt")
    if os.path.exists(ts_path):
        with open(ts_path) as fh:
            times = [int(line.strip()) for line in fh if line.strip()]
        if len(times) != len(names):
            raise dataio.FormatError(
                f"{len(times)} timestamps for {len(names)} frames in "
                f"{ts_path}")
    else:
        if fps <= 0:
            raise ValueError(f"--fps must be positive, got {fps}")
        times = [int(round(i * 1e6 / fps)) for i in range(len(names))]
    gamma = GammaCurve.power(2.2)
    frames = [to_linear(dataio.read_image(os.path.join(frames_dir, n)),
                        gamma)
              for n in names]
    return FrameSequence(times, frames), gamma


def cmd_simulate(args) -> int:
    if args.exposure_ms <= 0 or args.period_ms <= 0:
        raise ValueError("exposure and period must be positive")
    seq, gamma = _load_frames_dir(args.frames, args.fps)
    log.info("loaded %d frames (%dx%d)", len(seq), seq.width, seq.height)
    cfg = SimulatorConfig(
        thresholds=ThresholdConfig.symmetric(args.theta),
        channel_mode="bayer" if args.mode == "bayer" else "luma")
    man = render_dataset(seq, args.out, cfg,
                         exposure_us=int(round(args.exposure_ms * 1000)),
                         period_us=int(round(args.period_ms * 1000)),
                         gamma=gamma)
    n_events = len(man.load_events())
    log.info("dataset written to %s", args.out)
    print(f"{len(man.views)} views, {n_events} events")
    return 0


def _view_mid(man: dataio.DatasetManifest, view: int) -> float:
    if not 0 <= view < len(man.views):
        raise ValueError(f"view {view} out of range; dataset has "
                         f"{len(man.views)} views")
    return float(man.views[view].t_mid_us)


def _out_pair(path: str):
    base, ext = os.path.splitext(path)
    if ext.lower() in (".pfm", ".png"):
        return base + ".pfm", base + ".png"
    return path + ".pfm", path + ".png"


def cmd_deblur(args) -> int:
    man = dataio.read_manifest(args.manifest)
    t_mid = _view_mid(man, args.view)
    thr = (ThresholdConfig.symmetric(args.theta)
           if args.theta is not None else man.thresholds())
    blur = man.load_blur(args.view)
    stream = man.load_events()
    log.info("deblurring view %d at t_mid=%d us with %d events",
             args.view, int(t_mid), len(stream))
    tau = float(man.exposure_us)
    if args.at is None:
        latent = edi_deblur(blur, stream, t_mid, tau, thr)
    else:
        latent = reconstruct_video(blur, stream, t_mid, tau, thr,
                                   [args.at])[0]
    pfm_path, png_path = _out_pair(args.out)
    os.makedirs(os.path.dirname(os.path.abspath(pfm_path)), exist_ok=True)
    dataio.write_image(pfm_path, latent)
    dataio.write_image(png_path, to_gamma(latent, man.gamma_curve()),
                       bit_depth=16)
    print(f"{pfm_path}\n{png_path}")
    return 0


def cmd_reconstruct(args) -> int:
    if args.rate <= 0:
        raise ValueError(f"--rate must be positive, got {args.rate}")
    threads = _resolve_threads(args)
    man = dataio.read_manifest(args.manifest)
    t_mid = _view_mid(man, args.view)
    thr = man.thresholds()
    blur = man.load_blur(args.view)
    stream = man.load_events()
    tau = float(man.exposure_us)
    n = max(1, int(round(args.rate * tau / 1e6)))
    a = t_mid - tau / 2.0
    queries = [a + (i + 0.5) * tau / n for i in range(n)]
    log.info("reconstructing %d frames across [%g, %g) us", n, a, a + tau)
    latent = edi_deblur(blur, stream, t_mid, tau, thr)
    from .integrator import warp_intensity

    def one(q: float) -> ImageBuffer:
        return warp_intensity(latent, stream, t_mid, q, thr)

    frames = _map_indexed(one, queries, threads)
    os.makedirs(args.out, exist_ok=True)
    for i, frame in enumerate(frames):
        dataio.write_image(os.path.join(args.out, f"frame_{i:04d}.pfm"),
                           frame)
    print(f"{n} frames -> {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    _validate_seed(args)
    man = dataio.read_manifest(args.manifest)
    if len(man.views) < 2:
        raise ValueError(f"calibration needs at least 2 views, manifest "
                         f"has {len(man.views)}")
    blurs = [man.load_blur(k) for k in range(len(man.views))]
    mids = [float(v.t_mid_us) for v in man.views]
    tau = float(man.exposure_us)
    stream = man.load_events()
    log.info("calibrating on %d views, %d events", len(blurs), len(stream))
    fit = fit_threshold(blurs, mids, tau, stream)
    if not fit.identifiable:
        log.warning("loss flat, theta unidentifiable")
    report = {
        "theta_hat": fit.theta,
        "loss": fit.loss,
        "identifiable": fit.identifiable,
        "evaluations": fit.evaluations,
        "trace": [[t, l] for t, l in fit.trace],
    }
    if args.fit_response:
        sharps = [man.load_sharp(k) for k in range(len(man.views))]
        cmap = None
        if man.channel_mode == "bayer":
            pattern = BayerPattern(man.bayer_pattern)
            sharps = [mosaic(s, pattern) for s in sharps]
            cmap = pattern.channel_map(sharps[0].height, sharps[0].width)
        rfit = fit_response(sharps, mids, stream, fit.theta,
                            seed=args.seed, channel_map=cmap)
        report["response"] = {
            "loss_initial": rfit.loss_initial,
            "loss_final": rfit.loss_final,
            "samples_pos": rfit.samples_pos,
            "samples_neg": rfit.samples_neg,
            "curve_pos": {"x": rfit.curve_pos.x.tolist(),
                          "y": rfit.curve_pos.y.tolist()},
            "curve_neg": {"x": rfit.curve_neg.x.tolist(),
                          "y": rfit.curve_neg.y.tolist()},
        }
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    print(f"theta_hat {fit.theta:.6f}")
    return 0


def _list_images(d: str) -> List[str]:
    if not os.path.isdir(d):
        raise ValueError(f"directory not found: {d}")
    return sorted(n for n in os.listdir(d)
                  if n.lower().endswith(_IMAGE_EXTS))


def cmd_evaluate(args) -> int:
    threads = _resolve_threads(args)
    pred_names = _list_images(args.pred)
    gt_names = _list_images(args.gt)
    if pred_names != gt_names:
        only_p = sorted(set(pred_names) - set(gt_names))
        only_g = sorted(set(gt_names) - set(pred_names))
        raise dataio.FormatError(
            f"prediction and ground-truth file sets differ; only in "
            f"pred: {only_p}; only in gt: {only_g}")
    if not pred_names:
        raise ValueError("no images to evaluate")
    gamma = GammaCurve.power(2.2)

    def one(name: str):
        a = dataio.read_image(os.path.join(args.pred, name))
        b = dataio.read_image(os.path.join(args.gt, name))
        if a.data.shape != b.data.shape:
            raise dataio.FormatError(
                f"{name}: shape {a.data.shape} vs {b.data.shape}")
        if args.metric_domain == "linear":
            a = a if a.domain == "linear" else to_linear(a, gamma)
            b = b if b.domain == "linear" else to_linear(b, gamma)
        else:
            if a.domain != b.domain:
                raise dataio.FormatError(
                    f"{name}: mixed domains {a.domain} vs {b.domain}; "
                    f"use --metric-domain linear")
        return psnr(a, b), ssim(a, b)

    log.info("evaluating %d image pairs", len(pred_names))
    metrics = _map_indexed(one, pred_names, threads)
    rows = [(n, p, s) for n, (p, s) in zip(pred_names, metrics)]
    mean_p = float(np.mean([r[1] for r in rows]))
    mean_s = float(np.mean([r[2] for r in rows]))
    rows.append(("mean", mean_p, mean_s))

    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write("name,psnr_db,ssim\n")
        for name, p, s in rows:
            fh.write(f"{name},{p:.6f},{s:.6f}\n")

    width = max(len(r[0]) for r in rows)
    print(f"{'name':<{width}}  {'psnr_db':>10}  {'ssim':>8}")
    for name, p, s in rows:
        print(f"{name:<{width}}  {p:>10.4f}  {s:>8.6f}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(handler)
    log.setLevel(getattr(logging, args.log_level.upper()))
    try:
        _validate_seed(args)
        _resolve_threads(args)
        return args.func(args)
    except dataio.FormatError as e:
        log.error("%s", e)
        return 2
    except OSError as e:
        log.error("%s", e)
        return 2
    except ValueError as e:
        log.error("%s", e)
        return 1
    except AssertionError as e:
        log.error("internal assertion failed: %s", e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
