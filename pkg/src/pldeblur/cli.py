"""Command-line front end: simulation, kernel generation, estimation, metrics."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .core import Boundary, NoiseParams, convolve, poisson_forward, psnr, ssim
from .estimation import InitConfig, PipelineConfig, estimate, init_kernel
from .solver import (
    AnscombeGaussianDenoiser,
    LossMode,
    OracleDenoiser,
    SolverConfig,
    richardson_lucy,
)
from .trajectory import RenderConfig, generate_kernel_dataset, render_kernel


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits 1 on usage errors (2 is for runtime failures)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _load_kernel_arg(args) -> np.ndarray:
    if args.kernel is not None:
        return io.read_kernel_text(args.kernel)
    points = io.read_keypoints_json(args.keypoints)
    cfg = RenderConfig(kernel_size=args.size, samples=args.samples)
    return render_kernel(points, cfg)


def _cmd_simulate(args) -> int:
    clean = io.read_pfm(args.clean)
    kernel = _load_kernel_arg(args)
    blurred = convolve(clean, kernel, Boundary.SYMMETRIC)
    noisy = poisson_forward(blurred, NoiseParams(args.alpha, args.sigma_read), args.seed)
    io.write_pfm(args.out, noisy)
    if args.out_blur_only:
        io.write_pfm(args.out_blur_only, blurred)
    print(f"simulate ok out={args.out} alpha={args.alpha:g} seed={args.seed}")
    return 0


def _cmd_gen_kernels(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = RenderConfig(kernel_size=args.size, samples=args.samples)
    manifest = {
        "seed": args.seed,
        "count": args.count,
        "keypoints": args.keypoints,
        "size": args.size,
        "samples": args.samples,
        "scale": args.scale,
    }
    with open(out_dir / "keypoints.jsonl", "w", encoding="ascii") as index:
        pairs = generate_kernel_dataset(args.count, args.keypoints, cfg, args.seed, args.scale)
        for i, (points, kernel) in enumerate(pairs):
            io.write_kernel_text(out_dir / f"kernel_{i:05d}.txt", kernel)
            doc = {"k": len(points), "points": [[float(x), float(y)] for x, y in points]}
            index.write(json.dumps(doc) + "\n")
    with open(out_dir / "manifest.json", "w", encoding="ascii") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    print(f"gen-kernels ok dir={out_dir} count={args.count} seed={args.seed}")
    return 0


def _cmd_render_kernel(args) -> int:
    points = io.read_keypoints_json(args.keypoints)
    cfg = RenderConfig(kernel_size=args.size, samples=args.samples)
    io.write_kernel_text(args.out, render_kernel(points, cfg))
    print(f"render-kernel ok out={args.out} size={args.size}")
    return 0


def _cmd_init_kernel(args) -> int:
    blur_only = io.read_pfm(args.input)
    cfg = InitConfig(
        c0=args.c0,
        c1=args.c1,
        sigma_b=args.sigma_b,
        k=args.keypoints_k,
        max_rho=args.size - 2,
    )
    points = init_kernel(blur_only, cfg)
    io.write_keypoints_json(args.out, points)
    rho = float(np.hypot(*points[-1]))
    theta = math.degrees(math.atan2(points[-1][1], points[-1][0])) % 180.0
    print(f"init-kernel ok out={args.out} rho={rho:.4f} theta={theta:.1f}")
    return 0


def _build_pipeline_config(args) -> PipelineConfig:
    if args.config:
        with open(args.config, "r", encoding="ascii") as f:
            config = PipelineConfig.from_dict(json.load(f))
    else:
        config = PipelineConfig()
    render = replace(config.render, kernel_size=args.size, samples=args.samples)
    init = replace(config.init, k=args.keypoints_k)
    solver = config.solver
    if args.rl_iterations is not None:
        solver = replace(solver, rl_iterations=args.rl_iterations)
    stage1 = config.stage1
    stage2 = config.stage2
    if args.loss is not None:
        mode = LossMode(args.loss)
        stage1 = replace(stage1, loss_mode=mode)
        stage2 = replace(stage2, loss_mode=mode)
    if args.max_iters is not None:
        stage1 = replace(stage1, max_iters=args.max_iters)
        stage2 = replace(stage2, max_iters=args.max_iters)
    return replace(
        config, render=render, init=init, solver=solver, stage1=stage1, stage2=stage2
    )


def _cmd_estimate(args) -> int:
    y = io.read_pfm(args.input)
    config = _build_pipeline_config(args)
    if args.oracle_blur_only:
        denoiser = OracleDenoiser(io.read_pfm(args.oracle_blur_only))
    else:
        denoiser = AnscombeGaussianDenoiser()
    result = estimate(
        y,
        alpha=args.alpha,
        config=config,
        denoiser=denoiser,
        skip_stage1=args.skip_stage1,
    )
    if args.alpha is None:
        print(f"photon level estimated from input: {result.alpha_used:.6g}", file=sys.stderr)
    io.write_kernel_text(args.out_kernel, result.kernel)
    io.write_pfm(args.out_image, result.image)
    if args.trace:
        io.write_trace_csv(args.trace, result)
    final1 = result.loss_trace_stage1[-1] if result.loss_trace_stage1 else float("nan")
    final2 = result.loss_trace_stage2[-1] if result.loss_trace_stage2 else float("nan")
    print(
        f"estimate ok alpha_used={result.alpha_used:.6g} "
        f"stage1_loss={final1:.6g} stage2_loss={final2:.6g} "
        f"elapsed={result.elapsed_seconds:.2f}s "
        f"out_kernel={args.out_kernel} out_image={args.out_image}"
    )
    return 0


def _cmd_deblur(args) -> int:
    y = io.read_pfm(args.input)
    kernel = io.read_kernel_text(args.kernel)
    cfg = SolverConfig(rl_iterations=args.iterations)
    io.write_pfm(args.out, richardson_lucy(y, kernel, args.alpha, cfg))
    print(f"deblur ok out={args.out} alpha={args.alpha:g} iterations={args.iterations}")
    return 0


def _cmd_metrics(args) -> int:
    a = io.read_pfm(args.a)
    b = io.read_pfm(args.b)
    print(f"psnr_db={psnr(a, b, args.peak):.3f} ssim={ssim(a, b, args.peak):.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pldeblur", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[], help="blur a clean image and add photon noise")
    p.add_argument("--clean", required=True, help="clean image (PFM, values in [0,1])")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--kernel", help="kernel text file")
    group.add_argument("--keypoints", help="key-point JSON to render into a kernel")
    p.add_argument("--alpha", type=_positive_float, required=True, help="photon level")
    p.add_argument("--sigma-read", type=_nonneg_float, default=0.0, dest="sigma_read")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_positive_int, default=32, help="render window for --keypoints")
    p.add_argument("--samples", type=_positive_int, default=1024)
    p.add_argument("--out", required=True, help="noisy observation (PFM, photon counts)")
    p.add_argument("--out-blur-only", dest="out_blur_only", help="optional noiseless blurred PFM")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gen-kernels", help="generate a random kernel dataset")
    p.add_argument("--count", type=_positive_int, required=True)
    p.add_argument("--keypoints", type=_positive_int, required=True, help="key points per kernel")
    p.add_argument("--size", type=_positive_int, default=32)
    p.add_argument("--samples", type=_positive_int, default=1024)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--scale", type=_positive_float, default=0.3)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=_cmd_gen_kernels)

    p = sub.add_parser("render-kernel", help="rasterize key points into a kernel")
    p.add_argument("--keypoints", required=True, help="key-point JSON file")
    p.add_argument("--size", type=_positive_int, default=32)
    p.add_argument("--samples", type=_positive_int, default=1024)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render_kernel)

    p = sub.add_parser("init-kernel", help="rectilinear kernel guess from a blur-only image")
    p.add_argument("--input", required=True, help="blur-only image (PFM)")
    p.add_argument("--keypoints-k", dest="keypoints_k", type=_positive_int, default=4)
    p.add_argument("--size", type=_positive_int, default=32)
    defaults = InitConfig()
    p.add_argument("--c0", type=_positive_float, default=defaults.c0)
    p.add_argument("--c1", type=_positive_float, default=defaults.c1)
    p.add_argument("--sigma-b", dest="sigma_b", type=_nonneg_float, default=defaults.sigma_b)
    p.add_argument("--out", required=True, help="key-point JSON output")
    p.set_defaults(func=_cmd_init_kernel)

    p = sub.add_parser("estimate", help="blind kernel estimation and deconvolution")
    p.add_argument("--input", required=True, help="noisy observation (PFM, photon counts)")
    p.add_argument("--alpha", type=_positive_float, default=None)
    p.add_argument("--keypoints-k", dest="keypoints_k", type=_positive_int, default=4)
    p.add_argument("--oracle-blur-only", dest="oracle_blur_only", help="blur-only PFM for oracle denoising")
    p.add_argument("--loss", choices=[m.value for m in LossMode], default=None)
    p.add_argument("--skip-stage1", dest="skip_stage1", action="store_true",
                   help="start fine-tuning directly from the rectilinear init")
    p.add_argument("--size", type=_positive_int, default=32)
    p.add_argument("--samples", type=_positive_int, default=1024)
    p.add_argument("--rl-iterations", dest="rl_iterations", type=_positive_int, default=None)
    p.add_argument("--max-iters", dest="max_iters", type=_positive_int, default=None)
    p.add_argument("--config", help="pipeline config JSON; flags override file values")
    p.add_argument("--out-kernel", dest="out_kernel", required=True)
    p.add_argument("--out-image", dest="out_image", required=True)
    p.add_argument("--trace", help="optional loss-trace CSV")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("deblur", help="non-blind deconvolution with a known kernel")
    p.add_argument("--input", required=True, help="noisy observation (PFM, photon counts)")
    p.add_argument("--kernel", required=True)
    p.add_argument("--alpha", type=_positive_float, required=True)
    p.add_argument("--iterations", type=_positive_int, default=50)
    p.add_argument("--out", required=True, help="deblurred image (PFM, [0,1] scale)")
    p.set_defaults(func=_cmd_deblur)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two PFM images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--peak", type=_positive_float, default=1.0)
    p.set_defaults(func=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as err:  # runtime failures exit 2; diagnostics go to stderr
        print(f"pldeblur {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
