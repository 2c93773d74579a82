"""
Training under heavy label noise
================================

Train the two-headed network with label correction on blobs with 70%
symmetric noise, next to the same run with correction switched off.
"""

from twincl.data import generate_train_test, inject_noise
from twincl.trainer import TrainConfig, train

train_ds, test_ds = generate_train_test(2000, 1000, K=4, d=8, separation=6.0, seed=1)
train_ds = inject_noise(train_ds, "symmetric", 0.7, seed=2)
print("clean labels left:", train_ds.is_clean.mean())

for correct in (True, False):
    cfg = TrainConfig(epochs=60, correct_labels=correct)
    result = train(cfg, train_ds, test_ds)
    print("\ncorrection" if correct else "\nno correction")
    print("epoch  test_acc  auc    w_clean  w_noisy  loss")
    for m in result.metrics[::10] + result.metrics[-1:]:
        print(f"{m.epoch:5d}  {m.acc_test:.3f}     {m.auc_detect:.3f}  "
              f"{m.mean_w_clean:.3f}    {m.mean_w_noisy:.3f}    {m.total:.3f}")
