"""Maximum observation entropy exploration for tabular POMDPs."""

__version__ = "0.1.0"
