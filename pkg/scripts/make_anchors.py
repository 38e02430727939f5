"""Build the checked-in anchors file from calibration artifacts.

Low anchors: mean return of the uniform-random policy over 100 episodes
(fixed evaluation seeds). High anchors: the best evaluation return any
reference run achieved, scanned from the calibration output directory.

Usage: python scripts/make_anchors.py CALIBRATION_DIR [OUT_JSON]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from ohtes.envs import make_env

RANDOM_EPISODES = 100
RANDOM_ACTION_SEED = 12345
RANDOM_RESET_BASE = 1000


def random_policy_return(env_name: str) -> float:
    env = make_env(env_name)
    rng = np.random.default_rng(RANDOM_ACTION_SEED)
    totals = []
    for ep in range(RANDOM_EPISODES):
        env.reset(RANDOM_RESET_BASE + ep)
        done, ret = False, 0.0
        while not done:
            action = rng.uniform(env.spec.action_low, env.spec.action_high)
            _, r, done = env.step(action)
            ret += r
        totals.append(ret)
    return float(np.mean(totals))


def best_observed(cal_dir: Path, env_name: str) -> float:
    best = -np.inf
    for progress in sorted(cal_dir.glob("*/progress.csv")):
        cfg = (progress.parent / "config.txt").read_text()
        if f"env={env_name}" not in cfg:
            continue
        for line in progress.read_text().splitlines()[1:]:
            best = max(best, float(line.split(",")[1]))
    if not np.isfinite(best):
        raise RuntimeError(f"no calibration runs found for {env_name} in {cal_dir}")
    return best


def main() -> int:
    cal_dir = Path(sys.argv[1])
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("anchors.json")
    anchors = {}
    for env_name in ("pendulum", "pointmass"):
        anchors[env_name] = {
            "low": round(random_policy_return(env_name), 4),
            "high": round(best_observed(cal_dir, env_name), 4),
        }
    out.write_text(json.dumps(anchors, indent=1, sort_keys=True) + "\n")
    print(json.dumps(anchors, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
