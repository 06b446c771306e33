"""Neural-network prediction of threshold exceedances in the Hénon map."""

__version__ = "0.1.0"
