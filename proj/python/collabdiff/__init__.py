"""Collaborative video diffusion toolkit.

Epipolar attention masks, pairwise-to-many collaborative DDIM sampling with
an analytic Gaussian test world, a masked cross-view synchronization block,
and the two data-preparation procedures (sequence folding, homography
augmentation). Everything here is a thin re-export of the compiled core.
"""

from ._core import (  # noqa: F401
    Rng,
    dataprep,
    geometry,
    sampler,
    schedule,
    sync,
    toy,
)

__all__ = [
    "Rng",
    "dataprep",
    "geometry",
    "sampler",
    "schedule",
    "sync",
    "toy",
]
