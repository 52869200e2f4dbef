r"""
Bundled experiment configurations.

Each entry of :mod:`rssgeo.scenarios.configs` is a lazy configuration; pass it to
``laco.instantiate`` or name it on the command line, e.g.
``rssgeo simulate-recover --scenario fig1``.
"""

from . import configs
