"""
dperm: differentially private ERM with private confidence intervals.

Trains logistic regression and Huberized SVM under pure DP or zCDP using
objective or output perturbation, then releases per-coordinate confidence
intervals for the model parameters.
"""

__version__ = "0.1.0"
