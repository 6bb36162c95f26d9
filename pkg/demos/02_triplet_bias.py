"""Natural training on three blobs, then watch where PGD sends class A.

A sits 2 units from B and 6 from C, so B is A's hard partner. After plain
cross-entropy training the attacked A samples should land almost entirely
in B.
"""

# %%
import numpy as np

from spat import AttackConfig, LossConfig, NetConfig, TrainConfig, TripletGeometry, gen_triplet, init_params, train
from spat.analysis import adv_confusion, cos_stats

geom = TripletGeometry()
train_set, test_set = gen_triplet(geom, 0), gen_triplet(geom, 1000)
print("scaled centers (first 2 coords):", [np.round(c[:2], 3).tolist() for c in geom.scaled_centers()])

# %%
cfg = NetConfig((10, 64, 16, 3), activation="tanh")
tc = TrainConfig(epochs=60, batch_size=32, lr_initial=0.1, loss_cfg=LossConfig(acc_mode="ce", lam=0.0))
params, history = train(init_params(cfg, 0), train_set, cfg, tc)
print(f"train accuracy after {len(history)} epochs: {history[-1].clean_accuracy:.3f}")

# %%
# mean cosine between class-A embeddings and each prototype
print("row A of the mean-cosine table:", np.round(cos_stats(params, cfg, test_set).mean_cos[0], 3))

# %%
rep = adv_confusion(params, cfg, test_set, AttackConfig.for_evaluation(0.05), hcp_map={0: 1})
print("attacked confusion:\n", rep.confusion)
print(f"share of A's mistakes that land in B: {rep.hcp_share:.3f}")
