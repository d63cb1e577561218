"""Option pricing and risk analysis for project cost schedules.

Three sampling shells (annealed plan parameters, task durations, task cost
increments), per-node drift/diffusion fits of the plan's cost process, option
valuation on a probability tree, and copula-based relative risk among projects.
"""

__version__ = "0.1.0"
