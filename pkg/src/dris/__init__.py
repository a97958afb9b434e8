"""Energy-efficient downlink optimization with distributed reconfigurable
intelligent surfaces."""

__version__ = "0.1.0"
