"""ipfsim: the Impulse Pattern Formulation as an iterated map.

core      simple and general IPF, divergence, fixed points, regimes
dynamics  orbit diagrams and regime maps over 1/alpha
mapper    interval and likelihood maps over (beta1, beta2)
synth     alpha series, scores, period-concatenation rendering
cli       command-line front end
"""

__version__ = "0.0.1"
