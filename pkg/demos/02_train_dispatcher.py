"""Train a dispatching policy with REINFORCE on a reduced shop and compare it with EDF.

Run: python demos/02_train_dispatcher.py   (about half a minute)
"""
import numpy as np

from shopdispatch.harness import ExperimentSpec, evaluate_runs, train_policy
from shopdispatch.sim import ShopConfig

cfg = ShopConfig(T=8, Z=3, n=5, m=10, traj_len=50, long_range=(6, 8))
spec = ExperimentSpec(config=cfg, dispatcher="reinforce")
print("training with", spec.train)

params, report = train_policy(spec)
curve = report.rewards()
for start in range(0, len(curve), 50):
    print(f"iterations {start:3d}-{start + 49:3d}  mean sampled reward {curve[start:start + 50].mean():8.2f}")

dmd = evaluate_runs(params, cfg, spec.eval_seeds)
edf = evaluate_runs("edf", cfg, spec.eval_seeds)
print("\nseed   RL-lateness  EDF-lateness")
for s, a, b in zip(spec.eval_seeds, dmd, edf):
    print(f"{s:4d}  {a.avg_lateness:12.2f}  {b.avg_lateness:12.2f}")
print("mean discounted reward: RL %.2f, EDF %.2f" % (np.mean([r.discounted_reward for r in dmd]),
                                                     np.mean([r.discounted_reward for r in edf])))
