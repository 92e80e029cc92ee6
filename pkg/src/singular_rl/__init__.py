"""q-learning for one-dimensional singular stochastic control.

Modules: ``model`` (environments), ``law`` (waiting regions and projection),
``sim`` (reflected Euler-Maruyama), ``oracle`` (closed-form benchmark),
``learn`` (martingale-based q-learning) and ``cli``.
"""
__version__ = "0.1.0"
