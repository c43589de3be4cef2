"""Electro-optic sampling of THz fields with single-photon detectors.

Submodules: :mod:`qeos.fock` (probe statistics), :mod:`qeos.tags`
(time-tag streams), :mod:`qeos.lockin` (phase estimation), :mod:`qeos.thz`
(field calibration and spectra) and :mod:`qeos.cli`.
"""

__version__ = "0.1.0"
