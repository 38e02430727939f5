"""Calibration sweep feeding the checked-in anchors file.

Runs the reference baselines at desk scale:
  * plain TD3 on the undelayed tasks (learning anchor, high-score anchor),
  * static n-step baselines and the adaptive discrete tuner on the
    delayed pendulum.

Usage: python scripts/calibrate.py OUT_DIR [workers]
"""

from __future__ import annotations

import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from ohtes.config import RunConfig
from ohtes.runner import run


def job(kwargs):
    cfg = RunConfig(**kwargs)
    code = run(cfg)
    return cfg.out_dir, code


def main() -> int:
    out_root = Path(sys.argv[1])
    workers = int(sys.argv[2]) if len(sys.argv) > 2 else 2
    jobs = []
    for seed in (0, 1, 2):
        jobs.append(
            dict(algo="td3", env="pendulum", total_steps=100_000, seed=seed,
                 out_dir=str(out_root / f"td3_pendulum_s{seed}"))
        )
        for n in (1, 2, 3, 4, 5):
            jobs.append(
                dict(algo="td3", env="pendulum", delay=5, n_step=n, total_steps=100_000,
                     seed=seed, out_dir=str(out_root / f"td3_d5_n{n}_s{seed}"))
            )
        jobs.append(
            dict(algo="oht-es-discrete", env="pendulum", delay=5,
                 tuner_support=(1, 2, 3, 4, 5), total_steps=100_000, seed=seed,
                 out_dir=str(out_root / f"adaptive_d5_s{seed}"))
        )
    for seed in (0,):
        jobs.append(
            dict(algo="td3", env="pointmass", total_steps=60_000, seed=seed,
                 out_dir=str(out_root / f"td3_pointmass_s{seed}"))
        )
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for out_dir, code in pool.map(job, jobs):
            print(f"{out_dir}: exit {code}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
