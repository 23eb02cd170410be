"""HTTP service wrapping a simulated hub deployment."""
