"""NV-center singlet photophysics toolkit."""
