"""Structure-preserving Koopman surrogates of port-Hamiltonian systems."""

from .errors import *  # noqa: F401,F403
from .galerkin import (KpHModel, RawProjection, SampleSet, enforce_structure,
                       identify_from_data, raw_projection, split_skew_psd, whiten)
from .observables import Dictionary, GeneratorAction, builtin_dictionary, generator_action
from .ph_model import LinearPHSystem, PHSystem, Trajectory, linear_ph, pendulum, simulate

__version__ = "0.1.0"
