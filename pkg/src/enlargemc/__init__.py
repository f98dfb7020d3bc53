"""Monte Carlo toolkit for random times in progressively enlarged filtrations.

The package simulates driver processes on a uniform grid, builds random
times whose graphs overlap a declared family of stopping times (the thin
part) or avoid it (the thick part), compensates their occurrence
indicators explicitly, and then tests — statistically, and exactly on
small finite-probability worlds — whether a proposed family of
martingales spans every martingale of the enlarged filtration.
"""

__version__ = "0.1.0"
