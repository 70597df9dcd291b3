"""Pinned discretization error budget for every identity check.

``tol = c1 * dx**4 * scale + c2 * 1e-13 * scale`` where ``scale`` is the
largest magnitude among the terms entering the identity.  The ``c1`` values
were calibrated once by a refinement study on seeds disjoint from the
acceptance seeds (about twice the largest observed ratio) and are frozen
here; see ``scripts/calibrate.py``.
"""

ROUNDOFF_UNIT = 1e-13

# identity id -> (c1, c2); from scripts/calibrate.py (seed stream 1000)
CONSTANTS = {
    "adjointness": (0.068, 10.0),
    "b-evolution": (120.0, 10.0),
    "bian-metric": (1.7, 10.0),
    "bian-ricci": (79.0, 10.0),
    # the three routes to B agree to roundoff
    "bianchi-one-form": (0.0, 100.0),
    "connection-difference": (1.3, 10.0),
    "flow-rhs": (4.3, 10.0),
    "gamma-evolution": (60.0, 10.0),
    "integration-by-parts": (3.4, 10.0),
    "operator-L": (11.0, 10.0),
    "ricci-difference": (31.0, 10.0),
    "ricci-identity": (39.0, 10.0),
}


def tolerance(identity, dx, scale):
    c1, c2 = CONSTANTS[identity]
    return (c1 * dx**4 + c2 * ROUNDOFF_UNIT) * scale
