"""Ovarian-cancer treatment simulator.

Patient-level Markov decision process driven by two Cox proportional-hazards
regressions, with deep Q-learning and rules-based agents that pick monthly
drug regimens to maximize simulated survival.
"""

__version__ = "0.1.0"
