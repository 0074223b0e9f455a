"""Semidefinite programming layer.

``SdpProblem`` is the standard form shared by two interchangeable
backends: an adapter to cvxopt's conic solver (default) and a
self-contained dense interior-point method used as a reference
implementation.  Select a backend per call through ``SdpSettings`` or
globally with the ``VECSTAB_SDP_BACKEND`` environment variable.
"""

from vecstab.sdp_backend.problem import (
    Entry,
    STATUS_INFEASIBLE,
    STATUS_NUMERICAL,
    STATUS_OPTIMAL,
    STATUS_UNBOUNDED,
    SdpProblem,
    SdpSettings,
    SdpSolution,
    SdpStructureError,
    solve_sdp,
)
from vecstab.sdp_backend.sdpa_io import format_sdpa, write_sdpa

__all__ = [
    "Entry",
    "STATUS_INFEASIBLE",
    "STATUS_NUMERICAL",
    "STATUS_OPTIMAL",
    "STATUS_UNBOUNDED",
    "SdpProblem",
    "SdpSettings",
    "SdpSolution",
    "SdpStructureError",
    "solve_sdp",
    "format_sdpa",
    "write_sdpa",
]
