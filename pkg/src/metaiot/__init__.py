"""Joint design of a passive meta-material sensor and its sensing function.

Modules, in pipeline order: :mod:`circuit` (reflection spectra),
:mod:`channel` (received power), :mod:`discernibility` (structure objective),
:mod:`structopt` (structure search), :mod:`sensefn` (MLP regressor) and
:mod:`pipeline` (end-to-end runs, sweeps, persistence).
"""

__version__ = "0.1.0"
