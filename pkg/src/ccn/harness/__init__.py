"""Scenario harness: end-to-end flows, adversarial probes, and benchmarks."""
