r"""
rssgeo
======

Sparse recovery of multiple non-cooperative radio emitters from aggregate received
signal strength (RSS), together with the limits of that approach.

1. Build the measurement matrix of a sensor layout and candidate grid, and simulate
    lognormally shadowed RSS data.

2. Recover emitter count, locations and powers with band-excluded, locally optimized
    orthogonal matching pursuit, stopping at the expected noise residual.

3. Quantify resolution (probability of telling two locations apart) and
    detectability (weakest emitter that cannot hide in the fit residual).

4. Estimate pathloss exponent and shadowing level from measured sensor streams.
"""

from . import scenarios
from ._analysis import *
from ._errors import *
from ._experiments import *
from ._ingest import *
from ._io import *
from ._noise import *
from ._scene import *
from ._solver import *
from ._workers import *


def __getattr__(name: str):
    from importlib.metadata import PackageNotFoundError, version

    match name:
        case "__version__":
            try:
                return version(__name__)
            except PackageNotFoundError:
                return "unknown"
        case _:
            pass
    msg = f"module {__name__!r} has no attribute {name!r}"
    raise AttributeError(msg)
