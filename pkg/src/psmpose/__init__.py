"""Sleep-pose classification from bed pressure-sensitive mats."""

__version__ = "0.1.0"
