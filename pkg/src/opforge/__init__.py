"""opforge: coverage-first agentic kernel generation harness.

Drives an LLM through a finite-state loop (generate, lint, compile, test,
feedback) to produce wrapper/kernel pairs for tensor operators, validates
them differentially against a host reference via an execution-worker
protocol, and runs many such sessions in parallel with aggregated
coverage reporting.
"""

__version__ = "0.1.0"
