"""Greedy top-k route recommendation from demand and emission forecasts.

Each route's predicted demand (bin midpoint of the forecast class) and
summed per-cell emission are min-max normalized and added; the top-k sums
win.  The selection is invariant to uniform rescaling of either signal.

Run:  python demos/05_route_recommendation.py
"""

import numpy as np

from routecast.recommend import demand_scalar, minmax_normalize, recommend_topk

rng = np.random.default_rng(3)
route_ids = [f"R{i:02d}" for i in range(10)]

# Pretend forecasts: a demand class per route plus an emission total.
demand_classes = {r: int(rng.integers(0, 8)) for r in route_ids}
emission_kg = {r: float(rng.uniform(20, 140)) for r in route_ids}

mu = {r: demand_scalar(c) for r, c in demand_classes.items()}
print("route  class  mu(midpoint)  emission_kg")
for r in route_ids:
    print(f"{r}   {demand_classes[r]}      {mu[r]:7.1f}     {emission_kg[r]:8.1f}")

result = recommend_topk(mu, emission_kg, k=3)
print("\ntop-3 routes for departing electric buses:")
for rank, score in enumerate(result.scores, start=1):
    print(f"  {rank}. {score.route_id}  score {score.score:.3f} "
          f"(demand {score.mu_norm:.2f} + emission {score.theta_norm:.2f})")

# The normalization absorbs positive affine transforms exactly.
mu_scaled = {r: 3.7 * v + 250.0 for r, v in mu.items()}
again = recommend_topk(mu_scaled, emission_kg, k=3)
assert [s.route_id for s in again.scores] == [s.route_id for s in result.scores]
print("\nsame ranking after rescaling the demand signal:",
      [s.route_id for s in again.scores])

values, degenerate = minmax_normalize([5.0, 5.0, 5.0])
print("degenerate normalization flagged:", degenerate, values.tolist())
