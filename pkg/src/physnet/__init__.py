"""physnet: physics-constrained neural networks for dynamics learning.

Small MLPs with built-in even/odd symmetry and energy-conservation
structure, trained with a from-scratch reverse-mode engine, rolled out
through Runge-Kutta integrators, and distilled into sparse symbolic
equations (SINDy/STLSQ).  A constraint-embedded network doubles as a
physics-informed noise regulator in front of the symbolic regression.
"""

__version__ = "0.1.0"
