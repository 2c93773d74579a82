"""
Spotting wrong labels with a label-tied mixture
===============================================

Fit the spherical mixture on embeddings using class predictions as
responsibilities, read off how well each sample agrees with its own label,
then let a two-component 1-D mixture turn that into a clean weight.
"""

import numpy as np

from twincl.mixture import clean_posterior, clean_prob, fit_binary_gmm, update_gmm

rng = np.random.default_rng(0)
K, e, n = 3, 6, 600

# well separated directions on the sphere play the role of learned embeddings
centers = np.linalg.qr(rng.normal(size=(e, K)))[0].T
true = rng.integers(0, K, n)
V = centers[true] + 0.35 * rng.normal(size=(n, e))
V /= np.linalg.norm(V, axis=1, keepdims=True)

# a third of the labels are wrong
noisy = true.copy()
flip = rng.random(n) < 1 / 3
noisy[flip] = (true[flip] + rng.integers(1, K, flip.sum())) % K

# a classifier that mostly predicts the true class
preds = np.full((n, K), 0.05)
preds[np.arange(n), true] = 0.9

gmm = update_gmm(V, preds)
print("component spreads:", np.round(gmm.variances, 3))

gamma = clean_prob(gmm, V, noisy)
print("mean agreement, clean labels %.3f, wrong labels %.3f" % (gamma[~flip].mean(), gamma[flip].mean()))

bg = fit_binary_gmm(gamma)
w = clean_posterior(bg, gamma)
print("binary means", np.round(bg.means, 3), "clean component", bg.clean_component)
print("mean clean weight, clean %.3f, wrong %.3f" % (w[~flip].mean(), w[flip].mean()))
