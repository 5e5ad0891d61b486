"""Universal area-eigenvalue bound used as a red-flag audit on optima.

With eigenvalues of a domain in S^2 counted as 0 = lambda_1 <= lambda_2 <= ...,
the Weyl-type bound is |Omega| * lambda_j <= 2*pi*j^2; it is attained by the
full sphere at j = 2 (area 4*pi, first nonzero eigenvalue 2). In the
mu-indexing used throughout this package (mu_0 = 0, mu_k the k-th nontrivial
eigenvalue) this reads

    area * mu_k <= 2*pi*(k+1)^2.

Reported optima violating it indicate a wrong eigenvalue or area, not a
remarkable shape.
"""

import numpy as np

RELATIVE_SLACK = 1e-6


def strichartz_bound(k: int) -> float:
    """Upper bound on area * mu_k over domains in the unit sphere."""
    if k < 1:
        raise ValueError("k must be >= 1 (nontrivial eigenvalue index)")
    return 2.0 * np.pi * (k + 1) ** 2


def audit_product(area: float, mu: float, k: int) -> tuple[float, bool]:
    """Return (bound, ok) for the product area * mu_k."""
    bound = strichartz_bound(k)
    return bound, bool(area * mu <= bound * (1.0 + RELATIVE_SLACK))
