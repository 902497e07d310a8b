"""Named checkpoints for fault injection in tests.

Mutating operations call :func:`checkpoint` at each internal step. In
production the call is a no-op; tests install a hook that raises at a
chosen step to verify transactional rollback.
"""

from __future__ import annotations

from typing import Callable, Optional

_hook: Optional[Callable[[str], None]] = None


class InjectedFault(Exception):
    """Raised by test hooks to simulate a failure at a checkpoint."""


def set_fault_hook(hook: Optional[Callable[[str], None]]) -> None:
    """Install (or clear, with None) the global checkpoint hook."""
    global _hook
    _hook = hook


def checkpoint(name: str) -> None:
    """Invoke the fault hook, if any, with the checkpoint name."""
    if _hook is not None:
        _hook(name)
