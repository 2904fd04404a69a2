"""Exception types shared across the toolkit.

Exit-code mapping for the CLI lives in ckptbench.cli; library code raises
these and never calls sys.exit.
"""


class CkptBenchError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(CkptBenchError, ValueError):
    """A caller-supplied parameter violates a documented precondition."""


class MalformedProfileError(CkptBenchError, ValueError):
    """A model profile is inconsistent (rank counts disagree, zero sizes, bad syntax)."""


class InvalidAlignmentError(CkptBenchError, ValueError):
    """Alignment is not a power of two >= 512."""


class EmptyWorkloadError(CkptBenchError, ValueError):
    """A layout was requested for a workload with no objects."""


class DirectUnsupportedError(CkptBenchError, OSError):
    """The filesystem rejected cache-bypass (O_DIRECT) open. Never silently downgraded."""


class AlignmentViolationError(CkptBenchError, ValueError):
    """A direct-mode request has a misaligned offset, length, or buffer address."""


class InvalidHandleError(CkptBenchError, ValueError):
    """A request targets a closed handle or one opened in an incompatible mode."""


class ShortManifestError(CkptBenchError, ValueError):
    """Manifest file is truncated or not parseable."""


class ManifestMissingError(CkptBenchError, FileNotFoundError):
    """No manifest exists for the requested checkpoint version."""


class RendezvousTimeoutError(CkptBenchError, TimeoutError):
    """Not all ranks arrived at a barrier within the configured timeout."""


class RankFailureError(CkptBenchError, RuntimeError):
    """A rank process exited nonzero; carries partial diagnostics."""

    def __init__(self, rank: int, exit_code: int, detail: str = ""):
        self.rank = rank
        self.exit_code = exit_code
        super().__init__(f"rank {rank} exited with code {exit_code}: {detail}")
