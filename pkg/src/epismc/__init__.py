"""
Bayesian inference for partially observed discrete-time epidemics.

Data-augmentation MCMC for a fixed day and an MCMC-within-SMC filter that
updates the posterior of the parameters and the unobserved infection days
as each day's notifications and removals arrive.
"""
__version__ = "0.1.0"
