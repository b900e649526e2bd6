"""Graph-regularized distributed multi-task learning.

A library and simulation harness for multi-task learning over a task
relatedness graph: batch and stochastic solvers built from weighted message
averaging plus local gradient/prox computations, a bounded-delay
asynchronous variant, a clustered-task benchmark generator, and verification
suites for the accompanying bounds.
"""

__version__ = "0.1.0"
