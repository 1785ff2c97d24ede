"""Policy transfer: align two shops, map a trained policy's trajectories, recover and fine-tune.

Source and target differ in shop geometry (7 visible slots instead of 5), so
the state dimension changes and the source network cannot be reused as is.

Run: python demos/03_transfer.py   (about half a minute)
"""
import numpy as np

from shopdispatch import codec, transfer
from shopdispatch.reinforce import train_reinforce
from shopdispatch.sim import ShopConfig

source_cfg = ShopConfig(T=8, Z=3, n=5, m=10, traj_len=50, long_range=(6, 8))
target_cfg = source_cfg.replace(n=7, m=6)
print("state dims", codec.state_dim(source_cfg), "->", codec.state_dim(target_cfg))

source, _ = train_reinforce(source_cfg, iters=300, batch=10, seed=0)

align_cfg = transfer.AlignmentConfig(k=4, d_share=32, n_source=800, n_target=800)
res = transfer.transfer_pipeline(source, source_cfg, target_cfg, align_cfg, fine_tune_iters=150, seed=1)
print("chi", res.model.chi.shape, "alignment cost %.3g" % res.model.cost)

tr, sc = res.report.rewards(), res.scratch_report.rewards()
for start in range(0, len(tr), 25):
    sl = slice(start, start + 25)
    print(f"iterations {start:3d}+  transfer {tr[sl].mean():8.2f}   scratch {sc[sl].mean():8.2f}")

# the alignment on its own: samples from both shops in the shared space
xs = transfer.sample_states(source_cfg, 200, 5)
ys = transfer.sample_states(target_cfg, 200, 6)
ex, ey = xs @ res.model.alpha, ys @ res.model.beta
print("shared-space spread  source %.3f  target %.3f" % (ex.std(), ey.std()))

# a busy source state next to its image: both shops share T and Z, so the
# machine column (column 0) is directly comparable
busy = xs[np.argmax(np.abs(xs).sum(1))]
mapped = transfer.map_state(res.model, busy).reshape(codec.state_shape(target_cfg))
print("machine column, source:", busy.reshape(codec.state_shape(source_cfg))[:, 0])
print("machine column, mapped:", np.round(mapped[:, 0], 2))
