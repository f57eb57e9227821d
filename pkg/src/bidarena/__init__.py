"""Repeated single-item auction arena.

A seller learns a revenue-maximizing mechanism (max-min monotone virtual
value networks) from observed bids while strategic bidders learn
utility-maximizing bidding strategies, including a zeroth-order
pseudo-gradient method that anticipates how the mechanism will retrain.
"""

__version__ = "0.1.0"
