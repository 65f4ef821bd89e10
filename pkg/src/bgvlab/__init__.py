"""BGV homomorphic encryption with average-case noise estimation and measurement."""

__version__ = "0.1.0"

from .circuit import CircuitSpec, ProbePoint, execute, predict
from .noise import NoiseContext, NoiseEstimate
from .params import ParamRequest, plan
from .ring import RingElement, RingParams, SamplerSpec
from .scheme import ModulusChain, SchemeParams, decrypt, encrypt, keygen, mod_switch, multiply

__all__ = [
    "CircuitSpec", "ProbePoint", "execute", "predict", "NoiseContext", "NoiseEstimate", "ParamRequest", "plan",
    "RingElement", "RingParams", "SamplerSpec", "ModulusChain", "SchemeParams", "decrypt", "encrypt", "keygen",
    "mod_switch", "multiply",
]
