"""Model files: one JSON header line followed by little-endian binary blocks.

The header lists every block as ``{"name", "dtype", "shape"}`` in file
order; block byte lengths follow from dtype and shape.
"""

from __future__ import annotations

import json

import numpy as np
import scipy.sparse as sp

from . import decoder, embedding, regressor
from .pipeline import FittedModel, RunConfig

FORMAT_NAME = "sldl-model"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _blocks(model: FittedModel) -> list[tuple[str, np.ndarray]]:
    Y = model.decoder.train_labels.tocsr()
    return [
        ("mu", model.embeddings.mu.astype("<f8")),
        ("log_var", model.embeddings.log_var.astype("<f8")),
        ("W", model.regression.W.astype("<f8")),
        ("Z_hat", model.decoder.Z_hat.astype("<f8")),
        ("labels_indptr", Y.indptr.astype("<i8")),
        ("labels_indices", Y.indices.astype("<i8")),
    ]


def to_bytes(model: FittedModel) -> bytes:
    blocks = _blocks(model)
    header = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "dims": {
            "q": model.q,
            "c": model.c,
            "latent_dim": model.latent_dim,
            "n_train": model.decoder.Z_hat.shape[0],
            "w_rows": model.regression.W.shape[0],
        },
        "k_neighbors": model.decoder.k_neighbors,
        "epsilon": model.decoder.epsilon,
        "alpha": model.regression.alpha,
        "config": model.config.to_dict(),
        "blocks": [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)} for n, a in blocks],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"
    return head + b"".join(a.tobytes(order="C") for _, a in blocks)


def save_model(path, model: FittedModel) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(model))


def from_bytes(raw: bytes) -> FittedModel:
    nl = raw.find(b"\n")
    if nl < 0:
        raise ModelFormatError("missing model header")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model header: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise ModelFormatError("not an sldl model file")
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {header.get('format_version')!r}; "
                               f"this build reads version {FORMAT_VERSION}")
    arrays = {}
    pos = nl + 1
    for block in header["blocks"]:
        dtype = np.dtype(block["dtype"])
        if dtype.str not in ("<f8", "<i8"):
            raise ModelFormatError(f"unexpected block dtype {block['dtype']!r}")
        shape = tuple(block["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if pos + size > len(raw):
            raise ModelFormatError(f"model file truncated in block {block['name']!r}")
        arrays[block["name"]] = np.frombuffer(raw, dtype=dtype, count=size // dtype.itemsize,
                                             offset=pos).reshape(shape).astype(dtype.newbyteorder("="))
        pos += size
    if pos != len(raw):
        raise ModelFormatError(f"{len(raw) - pos} trailing bytes after the last block")

    dims = header["dims"]
    q, c, dim, n = dims["q"], dims["c"], dims["latent_dim"], dims["n_train"]
    expect = {
        "mu": (c, dim), "log_var": (c, dim), "W": (dims["w_rows"], dim),
        "Z_hat": (n, dim), "labels_indptr": (n + 1,),
    }
    for name, shape in expect.items():
        if name not in arrays or arrays[name].shape != shape:
            raise ModelFormatError(f"block {name!r} has shape {arrays.get(name, np.empty(0)).shape}, expected {shape}")
    cfg = RunConfig.from_dict(header["config"])
    if dims["w_rows"] != q + int(cfg.bias):
        raise ModelFormatError("weight rows do not match feature dimension")
    indptr, indices = arrays["labels_indptr"], arrays["labels_indices"]
    if indptr[-1] != indices.shape[0] or (indices.size and (indices.min() < 0 or indices.max() >= c)):
        raise ModelFormatError("corrupt training label block")
    Y = sp.csr_matrix((np.ones(indices.shape[0]), indices, indptr), shape=(n, c))

    emb = embedding.EmbeddingSet(arrays["mu"], arrays["log_var"])
    reg = regressor.RegressionModel(arrays["W"], header["alpha"])
    dec = decoder.DecoderState(arrays["Z_hat"], Y, header["k_neighbors"], header["epsilon"])
    return FittedModel(cfg, q, c, emb, reg, dec)


def load_model(path) -> FittedModel:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
