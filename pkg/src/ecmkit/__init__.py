"""Capability-package runtime for a single persistent robot agent, with a
predicate-world simulator, baselines, statistics and an experiment harness."""

__version__ = "0.1.0"
