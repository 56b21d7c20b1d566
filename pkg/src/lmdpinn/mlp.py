"""Fully connected swish network mapping (x, y, z, t) to temperature."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (
    Jet,
    NonFiniteError,
    Tensor,
    as_tensor,
    pack,
    packed_linear,
    packed_swish,
    seed_inputs,
    sigmoid,
    unpack,
)
from .physics import DomainSpec

LAYER_SIZES = (4, 32, 32, 32, 32, 1)
CHECKPOINT_FORMAT = "lmdpinn-checkpoint-v1"


def parameter_count(sizes=LAYER_SIZES) -> int:
    return sum(n_out * n_in + n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))


@dataclass
class NetworkParams:
    """Per-layer weights (fan_out x fan_in) and biases."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    sizes: tuple[int, ...] = LAYER_SIZES

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.sizes) - 1:
            raise ValueError(f"expected {len(self.sizes) - 1} layers, got {len(self.weights)}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.sizes[i + 1], self.sizes[i])
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} do not match {shape}")
        assert self.size == parameter_count(self.sizes)

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts).astype(np.float64)

    @classmethod
    def unflatten(cls, vec: np.ndarray, sizes=LAYER_SIZES) -> "NetworkParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (parameter_count(sizes),):
            raise ValueError(f"expected {parameter_count(sizes)} parameters, got shape {vec.shape}")
        weights, biases, pos = [], [], 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(vec[pos : pos + n_in * n_out].reshape(n_out, n_in).copy())
            pos += n_in * n_out
            biases.append(vec[pos : pos + n_out].copy())
            pos += n_out
        return cls(weights, biases, tuple(sizes))

    def as_tensors(self) -> list[Tensor]:
        """Leaf tensors in flatten order (w0, b0, w1, b1, ...)."""
        leaves = []
        for w, b in zip(self.weights, self.biases):
            leaves.append(Tensor(w.copy(), requires_grad=True))
            leaves.append(Tensor(b.copy(), requires_grad=True))
        return leaves

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class ScalingSpec:
    """Affine maps between physical inputs and [-1, 1], and raw output and kelvin.

    ``lower``/``upper`` bound (x, y, z, t). Temperature is ``offset + T_c * raw``.
    """

    lower: tuple[float, float, float, float]
    upper: tuple[float, float, float, float]
    T_c: float = 2000.0
    offset: float = 298.0

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if any(u <= lo for lo, u in zip(self.lower, self.upper)):
            raise ValueError(f"upper bounds {self.upper} must exceed lower bounds {self.lower}")
        if not self.T_c > 0:
            raise ValueError("T_c must be positive")

    @classmethod
    def for_domain(cls, domain: DomainSpec, t_end: float, T_c: float = 2000.0, T0: float = 298.0) -> "ScalingSpec":
        return cls((0.0, 0.0, 0.0, 0.0), (domain.Lx, domain.Ly, domain.Lz, t_end), T_c, T0)

    @property
    def gain(self) -> np.ndarray:
        """d(normalized)/d(physical) per input."""
        return 2.0 / (np.asarray(self.upper) - np.asarray(self.lower))

    def normalize(self, coords: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lower)
        return (np.asarray(coords, dtype=np.float64) - lo) * self.gain - 1.0

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lower)
        return (np.asarray(unit, dtype=np.float64) + 1.0) / self.gain + lo

    def to_kelvin(self, raw):
        return self.offset + self.T_c * raw

    def to_raw(self, kelvin):
        return (kelvin - self.offset) / self.T_c

    def in_domain(self, coords: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        u = self.normalize(coords)
        return np.all(np.abs(u) <= 1.0 + tol, axis=-1)


def init_glorot(seed: int, sizes=LAYER_SIZES) -> NetworkParams:
    """Glorot-uniform weights in (-L, L), L = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return NetworkParams(weights, biases, tuple(sizes))


def swish(u):
    """u * sigmoid(u)."""
    u = np.asarray(u, dtype=np.float64)
    out = u * sigmoid(u)
    return float(out) if out.ndim == 0 else out


def _check_layer(layer: int, jet: Jet) -> None:
    for part in (jet.value, jet.first, jet.second):
        if not np.isfinite(part.value).all():
            raise NonFiniteError(f"non-finite activation in layer {layer}", op=f"layer{layer}", value=part.value)


def forward(params, scaling: ScalingSpec, x, y, z, t, check_domain: bool = False) -> Jet:
    """Temperature jet in kelvin at physical points.

    ``params`` is either a :class:`NetworkParams` (derivatives w.r.t. inputs
    only) or the leaf list from :meth:`NetworkParams.as_tensors` when
    parameter gradients are wanted. Derivatives in the returned jet are with
    respect to the physical coordinates.
    """
    if isinstance(params, NetworkParams):
        leaves = [as_tensor(a) for pair in zip(params.weights, params.biases) for a in pair]
    else:
        leaves = list(params)
    scalar = all(np.ndim(c) == 0 for c in (x, y, z, t))
    coords = [np.atleast_1d(np.asarray(c, dtype=np.float64)) for c in (x, y, z, t)]
    if check_domain:
        pts = np.stack(np.broadcast_arrays(*coords), axis=-1)
        outside = ~scaling.in_domain(pts)
        if outside.any():
            import warnings

            warnings.warn(f"{int(outside.sum())} points lie outside the scaled domain (extrapolation)", stacklevel=2)
    inputs = seed_inputs(*coords)
    gain = scaling.gain
    normed = [jet * float(gain[i]) + float(-1.0 - scaling.lower[i] * gain[i]) for i, jet in enumerate(inputs)]
    k = len(normed[0].names)
    h = pack(Jet.stack(normed, axis=-1))
    n_layers = len(leaves) // 2
    for layer in range(n_layers):
        h = packed_linear(h, leaves[2 * layer], leaves[2 * layer + 1])
        if layer < n_layers - 1:
            h = packed_swish(h, k)
        if not np.isfinite(h.value).all():
            raise NonFiniteError(f"non-finite activation in layer {layer}", op=f"layer{layer}", value=h.value)
    raw = unpack(h[..., 0], normed[0].names)
    out = raw * scaling.T_c + scaling.offset
    return out[0] if scalar else out


def forward_reference(params, scaling: ScalingSpec, x, y, z, t) -> Jet:
    """Same map as :func:`forward` built from generic jet arithmetic.

    Slower; kept as an independent route for cross-checking the fused path.
    """
    if isinstance(params, NetworkParams):
        leaves = [as_tensor(a) for pair in zip(params.weights, params.biases) for a in pair]
    else:
        leaves = list(params)
    inputs = seed_inputs(*(np.atleast_1d(np.asarray(c, dtype=np.float64)) for c in (x, y, z, t)))
    gain = scaling.gain
    normed = [jet * float(gain[i]) + float(-1.0 - scaling.lower[i] * gain[i]) for i, jet in enumerate(inputs)]
    h = Jet.stack(normed, axis=-1)
    n_layers = len(leaves) // 2
    for layer in range(n_layers):
        h = h.linear(leaves[2 * layer], leaves[2 * layer + 1])
        if layer < n_layers - 1:
            h = h.swish()
        _check_layer(layer, h)
    return h[..., 0] * scaling.T_c + scaling.offset


def predict(params: NetworkParams, scaling: ScalingSpec, points: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """Plain numpy evaluation of temperatures at an (N, 4) array of physical points."""
    points = np.asarray(points, dtype=np.float64)
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], chunk):
        h = scaling.normalize(points[start : start + chunk])
        for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
            h = h @ w.T + b
            if layer < len(params.weights) - 1:
                h = h * sigmoid(h)
        out[start : start + chunk] = scaling.to_kelvin(h[:, 0])
    return out


# -- checkpoint container ----------------------------------------------------


def save_checkpoint(
    path,
    params: NetworkParams,
    scaling: ScalingSpec,
    seed: int,
    extra: dict | None = None,
    arrays: dict[str, np.ndarray] | None = None,
) -> Path:
    """Write an .npz holding flattened float64 params and JSON metadata.

    ``arrays`` stores optimizer state next to the parameters so a run can
    resume exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "layer_sizes": list(params.sizes),
        "seed": int(seed),
        "scaling": {
            "lower": list(scaling.lower),
            "upper": list(scaling.upper),
            "T_c": scaling.T_c,
            "offset": scaling.offset,
        },
        "extra": extra or {},
    }
    payload = {"params": params.flatten(), "meta": np.array(json.dumps(meta, sort_keys=True))}
    for key, arr in (arrays or {}).items():
        payload[f"state_{key}"] = np.asarray(arr)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


@dataclass
class Checkpoint:
    params: NetworkParams
    scaling: ScalingSpec
    seed: int
    extra: dict = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        sizes = tuple(meta["layer_sizes"])
        params = NetworkParams.unflatten(data["params"], sizes)
        arrays = {k[len("state_") :]: data[k].copy() for k in data.files if k.startswith("state_")}
    sc = meta["scaling"]
    scaling = ScalingSpec(tuple(sc["lower"]), tuple(sc["upper"]), sc["T_c"], sc["offset"])
    return Checkpoint(params, scaling, meta["seed"], meta.get("extra", {}), arrays)
