"""Configuration package for the WG biharmonic solver."""
from .settings import Settings, settings

__all__ = ['Settings', 'settings']
