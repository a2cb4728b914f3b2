from dataclasses import dataclass, replace

BLOCKING = "blocking"
PIPELINED = "pipelined"
DEFAULT_THRESHOLD = 2 * 2 ** 20


@dataclass(frozen=True)
class PipelinePolicy:
    """How protocols overlap communication with computation.

    ``inner_threshold_bytes`` is compared with the byte size of the larger
    operand of a Beaver operation; smaller operands run unchunked even in
    pipelined mode.
    """

    mode: str = BLOCKING
    inner_chunks: int = 4
    inner_threshold_bytes: float = DEFAULT_THRESHOLD
    merged_and: bool = True

    def __post_init__(self):
        if self.mode not in (BLOCKING, PIPELINED):
            raise ValueError(f"unknown pipeline mode {self.mode!r}")
        if self.inner_chunks < 1:
            raise ValueError("inner_chunks must be >= 1")

    @property
    def pipelined(self):
        return self.mode == PIPELINED

    def chunks_for(self, nbytes, length):
        if not self.pipelined or nbytes < self.inner_threshold_bytes:
            return 1
        return max(1, min(self.inner_chunks, length))

    def with_threshold(self, nbytes):
        return replace(self, inner_threshold_bytes=nbytes)


BLOCKING_POLICY = PipelinePolicy()
