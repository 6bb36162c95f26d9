"""Finite differences against every hand-written gradient in the package."""

# %%
import numpy as np

from spat import gradcheck

# one cell per (loss, head) pair; NCE variants only make sense on the sphere
for r in gradcheck.run_suite(trials=5, seed=0):
    print(f"{r.mode:7s} {r.head:12s} worst {r.max_error:.2e} at {r.worst}")

# %%
# a single instance, up close: the error profile is relative for large
# entries and absolute below the 1e-2 floor
rng = np.random.default_rng(0)
err, where = gradcheck.check_instance("spat", "hypersphere", rng, activation="relu")
print("spat/hypersphere with relu:", f"{err:.2e}", where)
