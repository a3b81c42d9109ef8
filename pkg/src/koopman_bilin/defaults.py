"""Centralised defaults.

==========================  ===========  ======================================
name                        value        used by
==========================  ===========  ======================================
K                           5            homological order (linearize, CLI)
K_MAX                       8            cap when the order is ``inf``
RESONANCE_TOL               1e-9         absolute gap tolerance (conditions)
NEAR_RESONANCE_FACTOR       100          warn when a denominator < factor*tol
DEPTH                       6            Lie bracket word length
DEGREE_CAP                  8            vector-field vectorisation degree
RANK_TOL                    1e-8         relative rank threshold (liealg)
CONTOUR_NODES               64           trapezoid nodes on the circle
RTOL, ATOL                  1e-9, 1e-11  adaptive RK45
PULLBACK_RTOL, _ATOL        1e-10, 1e-30 flow pullback (relative control)
RK4_STEP                    1e-3         fixed-step RK4
MAX_STEPS                   10**6        integrator step budget
BLOWUP_NORM                 1e6          state norm treated as blow-up
PULLBACK_FACTOR             10           pullback horizon T = factor/|max Re|
BILINEAR_RESIDUAL           1e-6         allowed C^i vs B_i mismatch
GEDMD_MAX_COND              1e12         Gram-matrix condition limit
==========================  ===========  ======================================

``KOOPMAN_THREADS`` caps internal thread pools.
"""

from __future__ import annotations

import os

K = 5
K_MAX = 8
RESONANCE_TOL = 1e-9
NEAR_RESONANCE_FACTOR = 100.0
DEPTH = 6
DEGREE_CAP = 8
RANK_TOL = 1e-8
CONTOUR_NODES = 64
RTOL = 1e-9
ATOL = 1e-11
# the pulled-back state decays like exp(-|Re lam| T): error control must be relative
PULLBACK_RTOL = 1e-10
PULLBACK_ATOL = 1e-30
RK4_STEP = 1e-3
MAX_STEPS = 10**6
BLOWUP_NORM = 1e6
PULLBACK_FACTOR = 10.0
BILINEAR_RESIDUAL = 1e-6
GEDMD_MAX_COND = 1e12
SEED = 0


def max_workers() -> int:
    raw = os.environ.get("KOOPMAN_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return min(8, os.cpu_count() or 1)
