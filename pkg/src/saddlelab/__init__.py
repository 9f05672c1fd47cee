"""Numerical laboratory for Fourier extension from ``xy + gamma y^3 / 3``.

Modules: :mod:`geometry` (surface quantities), :mod:`partition` (caps and
strips), :mod:`extension` (the operator on grids), :mod:`rescale` (affine
reparametrisations), :mod:`wavepacket` (packets and tubes), :mod:`polypart`
(polynomial partitioning), :mod:`cli` (scenario runner).
"""
from .extension import ScaleParams, SampledFunction, direct_extension, evaluate_extension
from .geometry import Cap, Surface

__all__ = ["Cap", "Surface", "ScaleParams", "SampledFunction", "direct_extension", "evaluate_extension"]
__version__ = "0.1.0"
