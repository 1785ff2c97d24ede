"""A walk through the simulator and the state matrix.

Run: python demos/01_shop_floor.py
"""
import numpy as np

from shopdispatch import codec
from shopdispatch.heuristics import HeuristicDispatcher, fitting_slots
from shopdispatch.sim import ShopConfig, advance_time, apply_action, episode_metrics, init_env, run_episode

np.set_printoptions(linewidth=120)

# small shop: 5 steps of lookahead, 3 slack cells, 4 visible slots, 10 in the backlog
cfg = ShopConfig(T=5, Z=3, n=4, m=10, long_range=(4, 5), lam=0.7)
env = init_env(cfg, seed=3)

for t in range(6):
    advance_time(env, cfg)          # jobs arrive, nothing is dispatched yet
print("clock", env.clock, "slots", [None if j is None else (j.proc_time, j.due_time) for j in env.slots])
print("backlog", len(env.backlog))

s = codec.encode_state(env, cfg)
print("state matrix", s.shape)      # (T + Z) x (1 + n + ceil(m / T))
print(s.astype(int))

# one selection phase: EDF keeps picking until nothing fits
edf = HeuristicDispatcher("edf")
while True:
    a = edf(env)
    out = apply_action(env, a)
    print("action", a, out.kind, "fits now:", fitting_slots(env))
    if out.ends_phase:
        break
print("machine column after dispatching", codec.encode_state(env, cfg)[:cfg.T, 0].astype(int))

# whole episodes for the three rules, same job stream
cfg = ShopConfig()
for kind in ("edf", "lst", "random"):
    state, rewards, _ = run_episode(cfg, HeuristicDispatcher(kind, 0), 100)
    m = episode_metrics(state, rewards, cfg.gamma)
    print(f"{kind:7s} reward {m['discounted_reward']:8.2f}  lateness {m['avg_lateness']:.2f}  "
          f"completed {m['completed']}  dropped {m['dropped']}")
