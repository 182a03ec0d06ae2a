"""Model-based iterative image reconstruction.

Classical proximal-gradient solvers (ISTA, FISTA, FISTA-TV) and a trainable
unrolled FISTA network with learned proximal mapping and constrained
step-size/threshold/momentum schedules, for desk-scale linear inverse
problems (synthetic electromagnetic-tomography operators and sparse-view
parallel-beam CT).
"""

__version__ = "0.1.0"
