"""Line integrals along rough differential equations, degeneracy
diagnostics for their laws, and signature-based route recovery.

Submodules:

- ``expr``        symbolic scalar expressions (parse / diff / evaluate)
- ``geometry``    vector fields, one-forms, brackets, frames, coframes
- ``driver``      fractional Brownian drivers and smooth test drivers
- ``rde``         solver for the state / Jacobian / auxiliary system
- ``integrals``   line integrals, signatures, derivative kernels
- ``nondeg``      criterion evaluators and one-form constructors
- ``reconstruct`` cube grids and route recovery from extended signatures
- ``lab``         Monte Carlo density diagnostics
- ``systems``     canonical example systems used across demos and tests
- ``cli``         configuration-driven command line front end
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    driver,
    expr,
    geometry,
    integrals,
    lab,
    nondeg,
    rde,
    reconstruct,
    systems,
)
