"""telerisk: frequency-severity trip risk indices from telematics signals."""

__version__ = "0.1.0"
