"""Markov decision processing networks: models, solvers, capacity and simulation."""

__version__ = "0.1.0"

from mdpn.model import MdpnModel, ModelError, build_model, load_model, save_model, validate  # noqa: E402

__all__ = ["MdpnModel", "ModelError", "build_model", "load_model", "save_model", "validate", "__version__"]
