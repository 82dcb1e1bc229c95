"""Device-independent QKD security certificates."""
