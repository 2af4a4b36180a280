"""Mean-field simulation and homogenization checks for reaction-controlled Ostwald ripening."""

__version__ = "0.1.0"
