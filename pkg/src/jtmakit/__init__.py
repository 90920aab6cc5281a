"""Joint transverse momentum amplitude toolkit for photon-pair experiments.

Forward modelling of two-dimensional pi-step scans, fitting of the pump and
collection widths, checks of the collection-limited approximation, and design
of pixel bases on a spatial light modulator.
"""
from .model import JtmaParams, OpticalSystem, ParameterError
from .quadrature import QuadratureSpec
from .scan import ScanData, ScanGrid, read_scan, simulate_scan, write_scan
from .fitting import FitReport, fit_full
from .validity import cl_overlap, threshold_ratio
from .basis import PixelBasis, compute_T, entanglement_metrics, optimize_basis

__version__ = "0.1.0"

__all__ = ["JtmaParams", "OpticalSystem", "ParameterError", "QuadratureSpec", "ScanData", "ScanGrid",
           "read_scan", "simulate_scan", "write_scan", "FitReport", "fit_full", "cl_overlap",
           "threshold_ratio", "PixelBasis", "compute_T", "entanglement_metrics", "optimize_basis",
           "__version__"]
