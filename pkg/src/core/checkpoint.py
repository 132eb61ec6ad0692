"""
Model checkpoints.

``model.bin`` is an uncompressed NumPy ``.npz`` container read and written with
``allow_pickle=False``. Keys:

    format_version   int, currently 1
    backend          "polynomial" | "exact"
    family, order, b polynomial basis ("" / -1 / 0.0 for the exact backend)
    num_layers       K
    W_0 .. W_{K-1}   convolution weights
    scales, s_min, s_max
    dropout
    W_R1, W_R2       readout weights (graph models only)
    readout_final_relu

Arrays are stored as float64 so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import logging
import zipfile
from pathlib import Path
from typing import Union

import numpy as np

from src.core.errors import ConfigError, MissingFileError
from src.core.kernel import PolynomialBasis, ScaleVector
from src.core.layers import Model, Readout

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def save_model(model: Model, path: Union[str, Path]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "format_version": np.array(FORMAT_VERSION, dtype=np.int64),
        "backend": np.array("exact" if model.exact else "polynomial"),
        "family": np.array("" if model.basis is None else model.basis.family.value),
        "order": np.array(-1 if model.basis is None else model.basis.order, dtype=np.int64),
        "b": np.array(0.0 if model.basis is None else model.basis.b, dtype=np.float64),
        "num_layers": np.array(model.num_layers, dtype=np.int64),
        "scales": np.asarray(model.scales.values, dtype=np.float64),
        "s_min": np.array(model.scales.s_min, dtype=np.float64),
        "s_max": np.array(model.scales.s_max, dtype=np.float64),
        "dropout": np.array(model.dropout_rate, dtype=np.float64),
    }
    for k, weight in enumerate(model.weights):
        arrays[f"W_{k}"] = weight
    if model.readout is not None:
        arrays["W_R1"] = model.readout.w1
        arrays["W_R2"] = model.readout.w2
        arrays["readout_final_relu"] = np.array(model.readout.final_relu)

    # written member by member with a fixed timestamp so equal models give equal bytes
    with zipfile.ZipFile(target, "w", compression=zipfile.ZIP_STORED) as archive:
        for key, value in arrays.items():
            info = zipfile.ZipInfo(f"{key}.npy", date_time=_FIXED_DATE)
            with archive.open(info, "w", force_zip64=True) as member:
                np.lib.format.write_array(member, np.asanyarray(value), allow_pickle=False)
    logger.debug("saved %d-layer model to %s", model.num_layers, target)
    return target


def load_model(path: Union[str, Path]) -> Model:
    """
    Read a checkpoint written by ``save_model``.

    Raises:
        MissingFileError: no such file
        ConfigError: unreadable file, unknown format version or missing keys
    """
    source = Path(path)
    if not source.is_file():
        raise MissingFileError(f"checkpoint not found: {source}")
    try:
        with np.load(source, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {source}: {exc}") from exc

    try:
        version = int(arrays["format_version"])
        if version != FORMAT_VERSION:
            raise ConfigError(f"checkpoint {source} has format version {version}, expected {FORMAT_VERSION}")
        exact = str(arrays["backend"]) == "exact"
        basis = None
        if str(arrays["family"]):
            basis = PolynomialBasis.of(str(arrays["family"]), int(arrays["order"]), float(arrays["b"]))
        weights = tuple(arrays[f"W_{k}"] for k in range(int(arrays["num_layers"])))
        scales = ScaleVector(arrays["scales"], float(arrays["s_min"]), float(arrays["s_max"]))
        dropout_rate = float(arrays["dropout"])
        readout = None
        if "W_R1" in arrays:
            readout = Readout(arrays["W_R1"], arrays["W_R2"], bool(arrays["readout_final_relu"]))
    except KeyError as exc:
        raise ConfigError(f"checkpoint {source} is missing key {exc}") from exc

    return Model(
        weights=weights,
        scales=scales,
        basis=basis,
        exact=exact,
        dropout_rate=dropout_rate,
        readout=readout,
    )
