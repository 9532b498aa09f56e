"""Asynchronous perception/control navigation: pillar pseudo-images, age-aware scheduling,
temporal encoding, shaped rewards and PPO with a synchronous-to-asynchronous curriculum."""

__version__ = "0.1.0"
