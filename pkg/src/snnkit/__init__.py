"""snnkit: train a small CNN, convert it to a spiking network, simulate it.

Submodules are imported lazily so that ``import snnkit`` stays light and the
CLI can pin numerics settings before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "idx", "layers", "network", "encoding", "neurons", "convert", "sim",
    "errors", "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
