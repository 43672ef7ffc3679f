"""Private machine learning with two-party additive sharing.

P0 and P1 hold additive shares of data and model parameters. Products use
Beaver triples from a dealer; element-wise nonlinear functions go to a third
party that only sees permuted values; split models hand the upper layers to a
tail party. ``privml.net`` runs the same protocols across processes.
"""

from .dataset import Dataset, load_desk, load_idx
from .errors import FormatError, PartyTimeout, PrivmlError, ProtocolError, RemoteError, ShapeError, TripleReuseError
from .estimators import RunRecord, SharedLogisticRegression, SplitMLPClassifier
from .nonlinear import Permutation, eval_nonlinear, permutation_from_seed
from .privacy import attack_simulate, join_attack_space, linear_privacy_bound, noise_privacy, permutation_privacy
from .sharing import (
    BeaverTriple,
    ShareHandle,
    SharedPair,
    TrustedDealer,
    add_public,
    add_shared,
    beaver_mul,
    mul_public,
    reconstruct,
    share,
)
from .tensor import Rng, rng_normal, rng_uniform, tensor_add, tensor_matmul

__version__ = "0.1.0"

__all__ = [
    "BeaverTriple",
    "Dataset",
    "FormatError",
    "PartyTimeout",
    "Permutation",
    "PrivmlError",
    "ProtocolError",
    "RemoteError",
    "Rng",
    "RunRecord",
    "ShapeError",
    "ShareHandle",
    "SharedLogisticRegression",
    "SharedPair",
    "SplitMLPClassifier",
    "TripleReuseError",
    "TrustedDealer",
    "add_public",
    "add_shared",
    "attack_simulate",
    "beaver_mul",
    "eval_nonlinear",
    "join_attack_space",
    "linear_privacy_bound",
    "load_desk",
    "load_idx",
    "mul_public",
    "noise_privacy",
    "permutation_from_seed",
    "permutation_privacy",
    "reconstruct",
    "rng_normal",
    "rng_uniform",
    "share",
    "tensor_add",
    "tensor_matmul",
]
