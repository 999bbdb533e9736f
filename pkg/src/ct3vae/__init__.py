"""Class-conditional heavy-tailed VAEs with closed-form power-divergence
objectives, balanced latent mixture sampling, and built-in numerical
verification oracles."""

__version__ = "0.1.0"
