import sys

import progressbar  # type: ignore

from typing import Any

_enabled = True


def set_enabled(enabled: bool) -> None:
    global _enabled
    _enabled = enabled


class NullBar:
    def update(self, value: int) -> None:
        pass

    def finish(self) -> None:
        pass


def bar(total: int, label: str) -> Any:
    """A progress bar on standard error, or a no-op bar when disabled or not a TTY."""
    if not _enabled or total <= 0 or not sys.stderr.isatty():
        return NullBar()
    return progressbar.ProgressBar(
        max_value=total,
        fd=sys.stderr,
        widgets=[
            label,
            ' ',
            progressbar.Percentage(),
            ' ',
            progressbar.Bar(),
            ' | ',
            progressbar.ETA(),
        ]).start()
