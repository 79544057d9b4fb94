"""Hyperbolic recommender systems on the hyperboloid model.

Submodules:

- ``geometry``: hyperboloid, Klein and Poincare models, maps and midpoints
- ``losses``: BPR and WMRB losses with analytic gradients
- ``optimizer``: Riemannian SGD and initialisation
- ``recommender``: models, training loop, ranking, embedding files
- ``data``: loading, filtering, leave-one-out splits, negative sampling
- ``evaluation``: HR@k / NDCG@k with sampled negatives
- ``netstats``: bipartite graph statistics and power-law fits
- ``simulations``: toy cluster scenarios
- ``cli``: the ``hyprec`` command

Submodules are imported explicitly (``from hyprec import geometry``); the
package itself imports nothing so the CLI can set thread limits first.
"""

__version__ = "0.1.0"
