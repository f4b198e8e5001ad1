import warnings
warnings.simplefilter(action='ignore', category=FutureWarning)
from . import data
from . import evaluation
from . import training
from .loglinear import Candidate, Stimulus
from .mixture import AdaptationSession, ModelParams, Observation, PosteriorState
from .training import Hyperparams, em_fit

__version__ = '0.1.0'
