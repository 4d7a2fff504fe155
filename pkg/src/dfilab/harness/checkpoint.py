"""Single-file checkpoint container.

Layout::

    b"DFILAB1"                magic
    uint32 LE                 format version
    uint32 LE                 header length in bytes
    header                    UTF-8 JSON, sorted keys: kind, specs, meta, arrays
    payload                   float64 little-endian arrays, in header order

Integer arrays (RNG counters) live in the JSON header as plain lists, so every
binary payload is float64 and the round trip is bit exact on any platform.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import MixtureSpec
from ..gan import FeatureTap, GanCheckpoint, GanConfig
from ..inference import InferenceMethod, RefineConfig
from ..nn import NetworkSpec, ParamStore
from ..scgan import FrozenStage, ScganCheckpoint, ScganConfig

MAGIC = b"DFILAB1"
FORMAT_VERSION = 1
KINDS = ("gan", "inference", "scgan")
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointContainer:
    kind: str
    specs: dict = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CheckpointError(f"unknown checkpoint kind {self.kind!r}")

    def to_bytes(self) -> bytes:
        entries, chunks = [], []
        for name, arr in self.arrays.items():
            a = np.ascontiguousarray(arr, dtype=_LE_F64)
            entries.append({"name": name, "shape": list(a.shape)})
            chunks.append(a.tobytes())
        header = {"kind": self.kind, "specs": self.specs, "meta": self.meta, "arrays": entries}
        blob = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
        return MAGIC + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CheckpointContainer":
        if data[: len(MAGIC)] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        pos = len(MAGIC)
        version, hlen = struct.unpack_from("<II", data, pos)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos += 8
        header = json.loads(data[pos : pos + hlen].decode())
        pos += hlen
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * 8
            if pos + nbytes > len(data):
                raise CheckpointError(f"truncated payload for {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(data, dtype=_LE_F64, count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
            pos += nbytes
        if pos != len(data):
            raise CheckpointError("trailing bytes after payload")
        return cls(header["kind"], header["specs"], arrays, header["meta"])

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "CheckpointContainer":
        return cls.from_bytes(Path(path).read_bytes())


# -- ParamStore / model conversions ---------------------------------------


def _put_params(arrays: dict, prefix: str, params: ParamStore) -> None:
    arrays[f"{prefix}/flat"] = params.flat
    for (layer, name), value in sorted(params.buffers.items()):
        arrays[f"{prefix}/buffer/{layer}/{name}"] = value


def _get_params(arrays: dict, prefix: str, spec: NetworkSpec) -> ParamStore:
    flat = arrays[f"{prefix}/flat"]
    if flat.size != spec.num_params():
        raise CheckpointError(f"{prefix}: {flat.size} parameters, spec needs {spec.num_params()}")
    head = f"{prefix}/buffer/"
    buffers = {}
    for key, value in arrays.items():
        if key.startswith(head):
            layer, name = key[len(head) :].split("/", 1)
            buffers[(int(layer), name)] = value
    return ParamStore(flat, spec.layout(), buffers)


def _rng_state_to_json(state) -> dict:
    def conv(v):
        if isinstance(v, np.ndarray):
            return {"__uint_array__": [int(x) for x in v.ravel()], "dtype": str(v.dtype)}
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, np.integer):
            return int(v)
        return v

    return conv(state or {})


def _rng_state_from_json(state) -> dict:
    def conv(v):
        if isinstance(v, dict) and "__uint_array__" in v:
            return np.array(v["__uint_array__"], dtype=v["dtype"])
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v

    return conv(state)


def _put_gan(c: CheckpointContainer, prefix: str, ck: GanCheckpoint) -> None:
    c.specs[f"{prefix}config"] = ck.config.to_dict()
    _put_params(c.arrays, f"{prefix}g", ck.g_params)
    _put_params(c.arrays, f"{prefix}d", ck.d_params)
    c.arrays[f"{prefix}history/d_loss"] = np.asarray(ck.history.get("d_loss", []), dtype=np.float64)
    c.arrays[f"{prefix}history/g_loss"] = np.asarray(ck.history.get("g_loss", []), dtype=np.float64)
    if ck.mixture is not None:
        c.arrays[f"{prefix}mixture/centers"] = ck.mixture.centers
        c.arrays[f"{prefix}mixture/weights"] = ck.mixture.weights
        c.arrays[f"{prefix}mixture/sigma"] = np.array([ck.mixture.sigma])
    c.meta[f"{prefix}iteration"] = ck.iteration
    c.meta[f"{prefix}rng_state"] = _rng_state_to_json(ck.rng_state)


def _get_gan(c: CheckpointContainer, prefix: str) -> GanCheckpoint:
    config = GanConfig.from_dict(c.specs[f"{prefix}config"])
    mixture = None
    if f"{prefix}mixture/centers" in c.arrays:
        mixture = MixtureSpec(
            c.arrays[f"{prefix}mixture/centers"],
            float(c.arrays[f"{prefix}mixture/sigma"][0]),
            c.arrays[f"{prefix}mixture/weights"],
        )
    return GanCheckpoint(
        config=config,
        g_params=_get_params(c.arrays, f"{prefix}g", config.g_spec),
        d_params=_get_params(c.arrays, f"{prefix}d", config.d_spec),
        iteration=c.meta[f"{prefix}iteration"],
        rng_state=_rng_state_from_json(c.meta[f"{prefix}rng_state"]),
        history={
            "d_loss": c.arrays[f"{prefix}history/d_loss"].tolist(),
            "g_loss": c.arrays[f"{prefix}history/g_loss"].tolist(),
        },
        mixture=mixture,
    )


def _put_method(c: CheckpointContainer, prefix: str, m: InferenceMethod) -> None:
    c.specs[f"{prefix}net_spec"] = m.net_spec.to_dict()
    _put_params(c.arrays, f"{prefix}net", m.trained_params)
    c.arrays[f"{prefix}history"] = np.asarray(m.history, dtype=np.float64)
    c.meta[f"{prefix}method"] = {
        "family": m.family,
        "loss": m.loss,
        "checkpoint_id": m.checkpoint_id,
        "taps": None if m.taps is None else list(m.taps.layer_indices),
        "distance": m.distance,
        "refine": None if m.refine is None else vars(m.refine).copy(),
    }


def _get_method(c: CheckpointContainer, prefix: str) -> InferenceMethod:
    spec = NetworkSpec.from_dict(c.specs[f"{prefix}net_spec"])
    info = c.meta[f"{prefix}method"]
    return InferenceMethod(
        family=info["family"],
        loss=info["loss"],
        net_spec=spec,
        trained_params=_get_params(c.arrays, f"{prefix}net", spec),
        checkpoint_id=info["checkpoint_id"],
        taps=None if info["taps"] is None else FeatureTap(tuple(info["taps"])),
        distance=info["distance"],
        refine=None if info["refine"] is None else RefineConfig(**info["refine"]),
        history=c.arrays[f"{prefix}history"].tolist(),
    )


def gan_container(ck: GanCheckpoint, provenance: dict | None = None) -> CheckpointContainer:
    c = CheckpointContainer("gan", meta={"provenance": provenance or {}})
    _put_gan(c, "", ck)
    return c


def inference_container(method: InferenceMethod, provenance: dict | None = None) -> CheckpointContainer:
    c = CheckpointContainer("inference", meta={"provenance": provenance or {}})
    _put_method(c, "", method)
    return c


def scgan_container(ck: ScganCheckpoint, provenance: dict | None = None) -> CheckpointContainer:
    c = CheckpointContainer("scgan", meta={"provenance": provenance or {}})
    c.specs["config"] = ck.config.to_dict()
    _put_params(c.arrays, "g_full", ck.g_full_params)
    _put_params(c.arrays, "d_full", ck.d_full_params)
    c.arrays["history/d_loss"] = np.asarray(ck.history["d_loss"], dtype=np.float64)
    c.arrays["history/g_loss"] = np.asarray(ck.history["g_loss"], dtype=np.float64)
    c.meta["iteration"] = ck.iteration
    c.meta["center_indices"] = list(ck.frozen.center_indices)
    _put_gan(c, "center/", ck.frozen.gan)
    _put_method(c, "center_cn/", ck.frozen.connection)
    return c


def _expect(c: CheckpointContainer, kind: str) -> None:
    if c.kind != kind:
        raise CheckpointError(f"expected a {kind} checkpoint, found {c.kind}")


def gan_from_container(c: CheckpointContainer) -> GanCheckpoint:
    _expect(c, "gan")
    return _get_gan(c, "")


def inference_from_container(c: CheckpointContainer) -> InferenceMethod:
    _expect(c, "inference")
    return _get_method(c, "")


def scgan_from_container(c: CheckpointContainer) -> ScganCheckpoint:
    _expect(c, "scgan")
    config = ScganConfig.from_dict(c.specs["config"])
    frozen = FrozenStage(_get_gan(c, "center/"), _get_method(c, "center_cn/"), tuple(c.meta["center_indices"]))
    return ScganCheckpoint(
        config=config,
        g_full_params=_get_params(c.arrays, "g_full", config.g_full_spec),
        d_full_params=_get_params(c.arrays, "d_full", config.d_full_spec),
        frozen=frozen,
        iteration=c.meta["iteration"],
        history={"d_loss": c.arrays["history/d_loss"].tolist(), "g_loss": c.arrays["history/g_loss"].tolist()},
    )
