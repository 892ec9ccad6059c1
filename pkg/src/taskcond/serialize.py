"""Versioned binary container for trained models.

Layout: 4-byte magic, little-endian uint64 header length, an ASCII JSON
header (kind tag, format version, array manifest, scalar metadata), the
raw array payload in manifest order (C-contiguous, little-endian, float64
for parameters), and a trailing SHA-256 over header plus payload.

The header JSON is serialized with sorted keys and fixed separators, so
save -> load -> save is byte-identical. In-domain models additionally
carry the fingerprint binding the distance measure to the exact feature
extractor and center it was fitted on; the binding is re-checked on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .experts import ExpertModel, InputStats
from .gaussian import GaussianModel
from .indomain import InDomainModel, in_domain_fingerprint
from .lof import LofIndex
from .merge import MergedInDomain
from .nn import DenseNet, Layer

MAGIC = b"TCN1"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised for container violations: bad magic, version, checksum, kind."""


def _net_meta(net: DenseNet):
    return {
        "dims": [net.input_dim] + [l.out_dim for l in net.layers],
        "activations": [l.activation for l in net.layers],
    }


def _net_arrays(prefix, net: DenseNet):
    out = []
    for k, layer in enumerate(net.layers):
        out.append((f"{prefix}W{k}", layer.W))
        out.append((f"{prefix}b{k}", layer.b))
    return out


def _net_from(meta, arrays, prefix):
    layers = []
    for k, act in enumerate(meta["activations"]):
        layers.append(Layer(arrays[f"{prefix}W{k}"], arrays[f"{prefix}b{k}"], act))
    return DenseNet(layers)


def _in_domain_payload(prefix, model: InDomainModel):
    meta = {
        "fe": _net_meta(model.fe),
        "embedding_dim": model.embedding_dim,
        "fingerprint": model.fingerprint,
        "dm_kind": model.dm_kind,
    }
    arrays = _net_arrays(prefix + "fe_", model.fe) + [(prefix + "center", model.center)]
    if isinstance(model.dm, LofIndex):
        meta["lof_k"] = model.dm.k
        arrays += [
            (prefix + "lof_points", model.dm.points),
            (prefix + "lof_kdist", model.dm.kdist),
            (prefix + "lof_lrd", model.dm.lrd),
        ]
    else:
        meta["mahalanobis_eps"] = model.dm.eps
        arrays += [
            (prefix + "gauss_mean", model.dm.mean),
            (prefix + "gauss_inv_cov", model.dm.inv_cov),
        ]
    return meta, arrays


def _in_domain_from(meta, arrays, prefix):
    fe = _net_from(meta["fe"], arrays, prefix + "fe_")
    center = arrays[prefix + "center"]
    if meta["dm_kind"] == "lof":
        dm = LofIndex(
            points=arrays[prefix + "lof_points"],
            k=int(meta["lof_k"]),
            kdist=arrays[prefix + "lof_kdist"],
            lrd=arrays[prefix + "lof_lrd"],
        )
    else:
        dm = GaussianModel(
            mean=arrays[prefix + "gauss_mean"],
            inv_cov=arrays[prefix + "gauss_inv_cov"],
            eps=float(meta["mahalanobis_eps"]),
        )
    model = InDomainModel(
        fe=fe,
        center=center,
        dm=dm,
        embedding_dim=int(meta["embedding_dim"]),
        fingerprint=meta["fingerprint"],
    )
    if in_domain_fingerprint(fe, center) != model.fingerprint:
        raise ModelFormatError(
            "fingerprint mismatch: distance measure is not bound to this "
            "feature extractor and center"
        )
    return model


def _encode(kind, meta, named_arrays):
    manifest = []
    chunks = []
    for name, arr in named_arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii")
    payload = b"".join(chunks)
    digest = hashlib.sha256(header_bytes + payload).digest()
    return MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + payload + digest


def _decode(blob):
    if blob[:4] != MAGIC:
        raise ModelFormatError(f"bad container magic {blob[:4]!r} (expected {MAGIC!r})")
    (header_len,) = struct.unpack("<Q", blob[4:12])
    header_end = 12 + header_len
    header_bytes = blob[12:header_end]
    payload = blob[header_end:-32]
    digest = blob[-32:]
    if hashlib.sha256(header_bytes + payload).digest() != digest:
        raise ModelFormatError("checksum mismatch: container is corrupt")
    header = json.loads(header_bytes.decode("ascii"))
    if header["format_version"] != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format version {header['format_version']} "
            f"(this build reads version {FORMAT_VERSION})"
        )
    arrays = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += count * 8
    return header["kind"], header["meta"], arrays


def save_model(path, model):
    """Serialize an expert, in-domain, or merged in-domain model to ``path``."""
    if isinstance(model, ExpertModel):
        meta = {
            "net": _net_meta(model.net),
            "class_count": model.class_count,
            "task_id": model.task_id,
        }
        arrays = _net_arrays("net_", model.net) + [
            ("stats_mean", model.stats.mean),
            ("stats_std", model.stats.std),
        ]
        blob = _encode("expert", meta, arrays)
    elif isinstance(model, InDomainModel):
        meta, arrays = _in_domain_payload("", model)
        blob = _encode("in_domain", meta, arrays)
    elif isinstance(model, MergedInDomain):
        meta_a, arrays_a = _in_domain_payload("a_", model.a)
        meta_b, arrays_b = _in_domain_payload("b_", model.b)
        meta = {"a": meta_a, "b": meta_b, "weight": model.weight}
        blob = _encode("merged_in_domain", meta, arrays_a + arrays_b)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    Path(path).write_bytes(blob)


def load_model(path, expect_kind=None):
    """Inverse of ``save_model``; optionally require a specific kind tag."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file {path} does not exist")
    kind, meta, arrays = _decode(path.read_bytes())
    if expect_kind is not None and kind != expect_kind:
        raise ModelFormatError(f"kind mismatch: file holds {kind!r}, expected {expect_kind!r}")
    if kind == "expert":
        return ExpertModel(
            net=_net_from(meta["net"], arrays, "net_"),
            class_count=int(meta["class_count"]),
            task_id=int(meta["task_id"]),
            stats=InputStats(mean=arrays["stats_mean"], std=arrays["stats_std"]),
        )
    if kind == "in_domain":
        return _in_domain_from(meta, arrays, "")
    if kind == "merged_in_domain":
        return MergedInDomain(
            a=_in_domain_from(meta["a"], arrays, "a_"),
            b=_in_domain_from(meta["b"], arrays, "b_"),
            weight=float(meta["weight"]),
        )
    raise ModelFormatError(f"unknown model kind {kind!r}")
