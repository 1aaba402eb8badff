"""Vector-field method toolkit for relativistic Vlasov fields.

Submodules are imported on first access so that the command-line front
end can configure threading before the numerical backends load.
"""
from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = ("errors", "poly", "geometry", "fields", "jets", "ode", "kinetic", "moments",
               "waves", "norms", "verify", "cli")

__all__ = ["__version__", *_SUBMODULES]


def __getattr__(name):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
