"""
Dense non-rigid shape correspondence with learned spectral filters.
"""
