"""
Points de contrôle - MF-PPO

Format binaire plat little-endian des paramètres d'un réseau :
- En-tête : magic (4 octets), m (uint32), d (uint32), rayon (float64)
- u en int8, puis α₀ et α en float64 (ordre C)

Le magic distingue le DeepSet ("MFDS") du perceptron de référence ("MFMP").

Functions:
- save_params(): Écrit un point de contrôle
- load_params(): Relit un point de contrôle
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from core.deepset_net import DeepSetParams, MlpParams, NetParams
from core.errors import DimensionMismatchError

logger = logging.getLogger(__name__)

DEEPSET_MAGIC = b"MFDS"
MLP_MAGIC = b"MFMP"
HEADER = struct.Struct("<4sIId")


def encode_params(params: NetParams) -> bytes:
    magic = MLP_MAGIC if isinstance(params, MlpParams) else DEEPSET_MAGIC
    header = HEADER.pack(magic, params.m, params.d, float(params.radius))
    return b"".join(
        [
            header,
            params.u.astype("<i1").tobytes(),
            np.ascontiguousarray(params.alpha0, dtype="<f8").tobytes(),
            np.ascontiguousarray(params.alpha, dtype="<f8").tobytes(),
        ]
    )


def decode_params(payload: bytes) -> NetParams:
    """
    Décode un point de contrôle.

    Raises:
        DimensionMismatchError: magic inconnu ou taille incohérente avec l'en-tête
    """
    if len(payload) < HEADER.size:
        raise DimensionMismatchError("checkpoint shorter than its header")
    magic, m, d, radius = HEADER.unpack_from(payload)
    if magic not in (DEEPSET_MAGIC, MLP_MAGIC):
        raise DimensionMismatchError(f"unknown checkpoint magic {magic!r}")
    expected = HEADER.size + m + 2 * 8 * m * d
    if len(payload) != expected:
        raise DimensionMismatchError(f"checkpoint has {len(payload)} bytes, header implies {expected}")
    offset = HEADER.size
    u = np.frombuffer(payload, dtype="<i1", count=m, offset=offset).astype(np.float64)
    offset += m
    alpha0 = np.frombuffer(payload, dtype="<f8", count=m * d, offset=offset).reshape(m, d).astype(np.float64)
    offset += 8 * m * d
    alpha = np.frombuffer(payload, dtype="<f8", count=m * d, offset=offset).reshape(m, d).astype(np.float64)
    cls = MlpParams if magic == MLP_MAGIC else DeepSetParams
    return cls(u=u, alpha=alpha, alpha0=alpha0, radius=float(radius))


def save_params(path: Union[str, Path], params: NetParams) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_params(params))
    logger.debug("Point de contrôle écrit: %s (m=%d, d=%d)", path, params.m, params.d)
    return path


def load_params(path: Union[str, Path]) -> NetParams:
    return decode_params(Path(path).read_bytes())
