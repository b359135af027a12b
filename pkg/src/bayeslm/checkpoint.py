"""Binary checkpoints for every model variant.

Layout (all integers little-endian)::

    bytes 0-7    magic  b"BAYESLM\\0"
    bytes 8-11   format version (uint32)
    bytes 12-19  header length H in bytes (uint64)
    next H bytes UTF-8 JSON header
    remainder    float64 little-endian array data

The header holds the model config, the vocabulary token list, one descriptor
per site and latent layer, free-form ``extra`` metadata and an array table of
``{"name", "shape", "offset"}`` entries (offsets in bytes from the start of
the array data, arrays stored C-contiguous in sorted name order).
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bayes import GaussianVariational
from .corpus.vocab import Vocabulary
from .gp import BASIS, GpActivation
from .latent import LatentOutputLayer
from .nas import MixedSite
from .nnlm.models import build_model
from .nnlm.sites import Activation, Embedding, Gate, PointWeight

MAGIC = b"BAYESLM\0"
VERSION = 1
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class Checkpoint:
    model: object
    vocab: Vocabulary | None = None
    extra: dict = field(default_factory=dict)


def _sub(arrays, prefix):
    pre = prefix + "."
    return {k[len(pre):]: v for k, v in arrays.items() if k.startswith(pre)}


def _source(arrays):
    if "mu" in arrays:
        return GaussianVariational(arrays["mu"], arrays["rho"], arrays["prior_mu"],
                                   arrays["prior_sigma"])
    if "weight" in arrays:
        return PointWeight(arrays["weight"])
    raise CheckpointError(f"no weight arrays among {sorted(arrays)}")


def build_site(name, desc, arrays):
    """Rebuild a site from its descriptor and its (prefix-stripped) arrays."""
    variant, role = desc.get("variant"), desc.get("role")
    if variant == "mixed":
        return MixedSite(name, build_site(name, desc["point"], _sub(arrays, "point")),
                         build_site(name, desc["bayes"], _sub(arrays, "bayes")), arrays["arch"])
    if variant == "gp":
        if list(desc.get("basis", [])) != list(BASIS):
            raise CheckpointError(f"site {name!r}: basis {desc.get('basis')} differs from {BASIS}")
        theta = _source(_sub(arrays, "theta")) if desc.get("theta") else None
        return GpActivation(name, _source(_sub(arrays, "lambda")), theta, desc["base_activation"])
    if role == "gate":
        return Gate(name, _source(arrays), desc["activation"])
    if role == "embedding":
        return Embedding(name, _source(arrays))
    if role == "activation":
        return Activation(name, desc["activation"], desc["width"])
    raise CheckpointError(f"site {name!r}: unknown descriptor {desc}")


def encode_checkpoint(model, vocab=None, extra=None):
    arrays = model.arrays()
    table, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype=_DTYPE)
        table.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = {
        "config": model.config_dict(),
        "vocab": None if vocab is None else list(vocab.tokens),
        "sites": {n: s.descriptor() for n, s in model.sites.items()},
        "latents": {n: l.descriptor() for n, l in model.latents.items()},
        "extra": extra or {},
        "arrays": table,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(blob)) + blob + b"".join(chunks)


def decode_checkpoint(data):
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    if len(data) < 20:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    body = data[20 + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + count * _DTYPE.itemsize
        if end > len(body):
            raise CheckpointError(f"array {entry['name']!r} runs past the end of the file")
        arrays[entry["name"]] = np.frombuffer(body[entry["offset"]:end], dtype=_DTYPE) \
            .reshape(entry["shape"]).astype(np.float64)
    try:
        model = _rebuild(header, arrays)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing entry {exc}") from None
    for name in model.params:
        if name not in arrays:
            raise CheckpointError(f"missing array {name!r}")
        model.params[name].value[...] = arrays[name]
    vocab = None if header["vocab"] is None else Vocabulary(header["vocab"])
    return Checkpoint(model, vocab, header.get("extra", {}))


def _rebuild(header, arrays):
    cfg = dict(header["config"])
    kind, vocab_size = cfg.pop("kind"), cfg.pop("vocab_size")
    model = build_model(kind, vocab_size, **cfg)
    for name, desc in header["sites"].items():
        model.sites[name] = build_site(name, desc, _sub(arrays, name))
    for name, desc in header["latents"].items():
        sub = _sub(arrays, name)
        model.latents[name] = LatentOutputLayer(name, desc["width"], sub["inference"], sub["prior"])
    return model


def save_checkpoint(path, model, vocab=None, extra=None):
    Path(path).write_bytes(encode_checkpoint(model, vocab, extra))


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode_checkpoint(data)
