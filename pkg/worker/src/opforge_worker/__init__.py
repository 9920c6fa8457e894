"""Execution worker for the opforge harness.

Speaks protocol v1 over stdio or TCP, loads lint-passed candidate modules
in a restricted namespace, executes their kernels on the configured
backend, and differentially compares wrapper output against the torch CPU
reference. Also ships the capture tool that records operator inputs from
real model runs.
"""

__version__ = "0.1.0"
