"""SE_2(3) inertial navigation kinematics and exact log-linear error propagation."""

__version__ = "0.1.0"
