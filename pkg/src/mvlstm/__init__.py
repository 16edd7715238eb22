"""Multi-variable LSTM forecasting with mixture attention and importance scoring."""

__version__ = "0.1.0"
