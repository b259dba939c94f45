"""Model variants with branches, associator directions, graph or gate switched off."""

from __future__ import annotations

from ..config import ExperimentConfig
from ..model import GroundingNetwork

# variants compared against the full model on the desk task
STANDARD_VARIANTS = {
    "full": (),
    "appearance_only": ("motion", "threed"),
    "motion_only": ("appearance", "threed"),
    "threed_only": ("appearance", "motion"),
    "no_associator": ("associator",),
}


def ablate(config: ExperimentConfig, flags=()) -> GroundingNetwork:
    """Build the variant of ``config`` with ``flags`` disabled.

    Parameters of disabled parts are still created (from the same seed), so
    the enabled parts start from the same weights as in the full model.
    """
    return GroundingNetwork(config.disable(flags))
