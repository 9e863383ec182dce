"""HTTP service around the core package, plus offline stub endpoints that
speak the rephrase and vision client wire formats."""
