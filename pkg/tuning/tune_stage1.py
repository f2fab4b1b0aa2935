"""Sweep stage1 settings: loss mode, RL budget, step size. Dev tool, not shipped."""

import sys
import time

import numpy as np

import pldeblur as pl
from pldeblur.calibration import synthetic_scene
from pldeblur.estimation import InitConfig, ReblurObjective, StageConfig, init_kernel, stage1, stage2, HqsConfig
from pldeblur.solver import LossMode, OracleDenoiser, SolverConfig

alpha = 20.0
cfgr = pl.RenderConfig(kernel_size=17)
SEEDS = range(4)


def make_instance(seed):
    x = synthetic_scene(64, 64, seed=seed)
    z_true = pl.random_keypoints(4, 100 + seed) * 0.25
    h_true = pl.render_kernel(z_true, cfgr)
    b = pl.convolve(x, h_true)
    y = pl.poisson_forward(b, pl.NoiseParams(alpha), seed=seed)
    return x, z_true, h_true, b, y


def run(mode, rl, step, iters=100):
    scfg = SolverConfig(rl_iterations=rl)
    nccs_init, nccs_s1 = [], []
    t0 = time.perf_counter()
    for seed in SEEDS:
        x, z_true, h_true, b, y = make_instance(seed)
        z0 = init_kernel(b, InitConfig(k=4, max_rho=15))
        s1 = stage1(y, z0, StageConfig.stage1(step_size=step, max_iters=iters, loss_mode=mode),
                    alpha, OracleDenoiser(b), scfg, cfgr)
        h1 = pl.render_kernel(s1.keypoints, cfgr)
        nccs_init.append(pl.kernel_ncc(pl.render_kernel(z0, cfgr), h_true))
        nccs_s1.append(pl.kernel_ncc(h1, h_true))
    dt = time.perf_counter() - t0
    print(f"mode={mode.value:9s} rl={rl:3d} step={step:6.1f} iters={iters}: "
          f"ncc init={np.median(nccs_init):.3f} -> s1={np.median(nccs_s1):.3f} "
          f"(all {['%.2f' % v for v in nccs_s1]})  {dt/len(list(SEEDS)):.1f}s/inst",
          flush=True)


print("== stage2 from truth sanity (noiseless, oracle):", flush=True)
x, z_true, h_true, b, y0 = make_instance(0)
s2 = stage2(alpha * b, h_true, StageConfig.stage2(max_iters=40), HqsConfig(), alpha,
            OracleDenoiser(b), SolverConfig(rl_iterations=30))
print("   ncc(stage2 from truth):", round(pl.kernel_ncc(s2.kernel, h_true), 4), flush=True)

run(LossMode.INTENSITY, 30, 10.0)
run(LossMode.GRADIENT, 30, 10.0)
run(LossMode.GRADIENT, 30, 3.0)
run(LossMode.INTENSITY, 50, 3.0)
run(LossMode.GRADIENT, 50, 10.0)
run(LossMode.INTENSITY, 15, 10.0)
run(LossMode.GRADIENT, 15, 10.0)
