"""Explicit, unconditionally stable constant- and linear-neighbour solvers for
heat conduction on resistance-capacitance cell networks."""

from .metrics import ErrorReport, fit_order, max_d, normalize, s_en_d, sum_d
from .network import (Cell, CellNetwork, CoefficientSet, Edge, NetworkError, TemperatureState,
                      assemble, build_random_lattice, build_sine_line, load_network,
                      save_network, validate)
from .reference import Spectrum, analytic_sine, exact_solve, ode_oracle, spectrum
from .schemes import (CN, EULER, LN, NumericalBlowup, SchemeSpec, StepPlan, cn_stage,
                      euler_max_step, integrate, ln_stage, make_plan, parse_scheme, phi1, phi2,
                      step)

__version__ = "0.1.0"
