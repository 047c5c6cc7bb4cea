"""Value-semantics abstraction of decision trajectories into abstract MDPs."""

__version__ = "0.1.0"
