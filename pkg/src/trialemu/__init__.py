"""Trial emulation from patient records: cohort building, IPSW-weighted Cox estimation and diagnostics."""

__version__ = "0.1.0"
