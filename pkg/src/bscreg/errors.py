"""Error type shared by all modules."""

from __future__ import annotations


class BscError(ValueError):
    """Failure of a pipeline stage, tagged with a machine-readable code.

    Parameters
    ----------
    code : str
        Short upper-case tag, e.g. ``"INFEASIBLE"`` or ``"MESH_FAIL"``.
    message : str
        Human readable description.
    witness : object, optional
        Data pinpointing the failure (a boundary point, a radius, ...).
    """

    def __init__(self, code, message, witness=None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.witness = witness
