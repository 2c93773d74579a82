"""
Synthetic blobs and label noise
===============================

Build a small labelled dataset, corrupt some labels and write it to disk.
"""

import numpy as np

from twincl.data import generate_blobs, inject_noise, read_dataset, write_dataset
from twincl.evaluation import imbalance_ratio

# four Gaussian blobs in 8-D; centres are 6 apart
ds = generate_blobs(n=1000, K=4, d=8, separation=6.0, seed=0)
print(ds.features.shape, np.bincount(ds.true_labels))

# symmetric noise: 40% of labels move to a random other class, 100 per class
sym = inject_noise(ds, "symmetric", 0.4, seed=1)
print("symmetric: flipped", (~sym.is_clean).sum(), "imbalance", imbalance_ratio(sym.noisy_labels, 4))

# asymmetric noise follows a class map, here the default k -> k+1
asym = inject_noise(ds, "asymmetric", 0.4, seed=1)
moved = asym.true_labels[~asym.is_clean], asym.noisy_labels[~asym.is_clean]
print("asymmetric pairs seen:", sorted(set(zip(*map(np.ndarray.tolist, moved)))))

# the text format round-trips exactly
write_dataset(sym, "noisy_blobs.txt")
back = read_dataset("noisy_blobs.txt")
print("round trip exact:", np.array_equal(back.features, sym.features), back.noise_kind)
