"""gorder: nonlinear g-expectation solvers and stochastic-ordering
certification for one-dimensional diffusions."""

__version__ = "0.1.0"
