"""F0-conditioned autoencoder voice conversion.

Disentangles speech content, speaker identity and F0 with an
information-constraining bottleneck plus per-frame quantized-log-F0
conditioning, and ships the evaluation studies (F0 distribution match,
pseudo-F0 consistency, bottleneck leakage, flat-F0 controllability) as
automated metrics.
"""

__version__ = "0.1.0"
