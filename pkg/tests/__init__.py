# Tests package for the DG-MORL lab
