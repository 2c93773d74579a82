"""
Evaluating the embedding space
==============================

After training, compare the classifier with a k-NN vote on embeddings and
look at how the agreement scores split between clean and wrong labels.
"""

from twincl import model as nn
from twincl.data import generate_train_test, inject_noise
from twincl.evaluation import (accuracy, default_knn_k, detection_auc, detection_records,
                               export_clean_histogram, knn_eval)
from twincl.trainer import TrainConfig, e_step, predict, train

train_ds, test_ds = generate_train_test(2000, 1000, K=4, d=8, separation=6.0, seed=1)
train_ds = inject_noise(train_ds, "symmetric", 0.4, seed=2)
params = train(TrainConfig(epochs=40), train_ds).params

k = default_knn_k(len(train_ds))
z_train = nn.forward(params, train_ds.features).embedding
z_test = nn.forward(params, test_ds.features).embedding
print("classifier accuracy", accuracy(predict(params, test_ds.features), test_ds.true_labels))
print(f"k-NN accuracy (k={k})", knn_eval(z_train, train_ds.noisy_labels, z_test, test_ds.true_labels, k))

state = e_step(train_ds, params)
records = detection_records(train_ds.sample_ids, state.clean_probs, train_ds.is_clean)
print("detection AUC", round(detection_auc(records), 4))

table = export_clean_histogram(records, bins=10, path="clean_hist.csv")
print(" bin         clean  wrong")
for lo, hi, c, w in table:
    print(f" {lo:.1f}-{hi:.1f}   {int(c):5d}  {int(w):5d}")
print("histogram written to clean_hist.csv; total", int(table[:, 2:].sum()), "==", len(train_ds))
