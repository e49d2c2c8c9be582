"""Exception types shared by the codec and its kernels."""
from __future__ import annotations

from typing import Optional


class DecodeError(ValueError):
    """A malformed or inconsistent encoded payload.

    ``tensor`` names the offending tensor when known; ``bit_offset`` is the
    payload bit position at which the problem was detected.
    """

    def __init__(self, message: str, bit_offset: Optional[int] = None, tensor: Optional[str] = None):
        self.reason = message
        self.bit_offset = bit_offset
        self.tensor = tensor
        super().__init__(self._format())

    def _format(self) -> str:
        where = []
        if self.tensor is not None:
            where.append(f"tensor {self.tensor!r}")
        if self.bit_offset is not None:
            where.append(f"bit {self.bit_offset}")
        return f"{self.reason} ({', '.join(where)})" if where else self.reason

    def for_tensor(self, name: str) -> "DecodeError":
        return DecodeError(self.reason, self.bit_offset, name)


class UnsupportedModeError(ValueError):
    """Encoder mode cannot represent the given tensor (e.g. AP with k != 3)."""


class RoundError(RuntimeError):
    """A federated round was aborted; the message carries the round and client."""
