"""Conversion constants.

Frequencies are carried as ordinary frequencies in MHz throughout the package,
i.e. a value ``x`` stands for the angular frequency ``2*pi*x MHz``. Dipole
moments and radial integrals inside :mod:`rydmol.atomdata` are in atomic units
(e*a0); distances at the public interfaces are in micrometres.
"""

from scipy.constants import physical_constants, c

HARTREE_MHZ = physical_constants["hartree-hertz relationship"][0] * 1e-6
BOHR_UM = physical_constants["Bohr radius"][0] * 1e6
RYDBERG_INF_CM = physical_constants["Rydberg constant"][0] * 1e-2
CM_TO_MHZ = c * 1e2 * 1e-6
DEBYE_EA0 = 1e-21 / c / (physical_constants["elementary charge"][0]
                        * physical_constants["Bohr radius"][0])

#: (e a0)^2 / (4 pi eps0 * 1 um^3) expressed in MHz.
DD_MHZ_UM3 = HARTREE_MHZ * BOHR_UM**3


def debye_to_au(d):
    return d * DEBYE_EA0


def dipole_product_mhz_um3(mu1_au, mu2_au):
    """Dipole-dipole energy scale mu1*mu2/r^3 in MHz*um^3."""
    return mu1_au * mu2_au * DD_MHZ_UM3
