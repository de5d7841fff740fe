"""Graph-filter-bank policy mapping (channel matrix, node features) to routing
decisions.

Each layer applies a bank of polynomial graph filters sum_k R^k z H_k, realized
by iterated shifts (z, Rz, R^2 z, ...) rather than materialized matrix powers,
followed by a pointwise nonlinearity. The same weights run once per flow, so a
trained policy transfers across node counts and flow counts unchanged. Three
heads turn the final embeddings into decisions:

* keep: bilinear scores masked to the channel support, row-softmax per
  receiver, so each connected receiver's keep row sums to one;
* transmit: per-node softmax across flows against an implicit idle slot, so
  the per-node transmit shares sum to strictly less than one;
* packets: the arrivals plus a rectified linear readout, so committed rates
  never fall below the arrivals.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ContractError, ParameterError
from .netsim import RoutingDecision
from .topology import ChannelMatrix, FlowSpec

NONLINEARITIES = ("relu", "identity")
GSO_NORMALIZATIONS = ("none", "degree")

CHECKPOINT_FORMAT = "oppnet-gnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NodeFeatures:
    """Per-node input signal; for dual-augmented policies the two columns are
    (arrival rate, dual multiplier)."""

    x: np.ndarray  # (n, F0)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise ContractError(f"features must be (n, F0), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ContractError("features must be finite")
        object.__setattr__(self, "x", x)


def build_flow_features(a0: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Stack per-flow feature matrices: shape (F, n, 2), columns (a0, mu)."""
    a0 = np.asarray(a0, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if a0.shape != mu.shape or a0.ndim != 2:
        raise ContractError(
            f"arrivals and duals must share an (n, F) shape, got {a0.shape} and {mu.shape}")
    return np.stack([a0.T, mu.T], axis=2)


@dataclass
class GnnParams:
    """Filter taps per layer plus the three output heads."""

    layers: list[Tensor]          # each (K_l, F_{l-1}, F_l)
    w_r: Tensor                   # (F_L, F_L) keep-head bilinear form
    w_s: Tensor                   # (F_L,) transmit-head readout
    w_a: Tensor                   # (F_L,) packet-head readout
    nonlinearity: str = "relu"
    gso_normalization: str = "none"

    def __post_init__(self):
        if not self.layers:
            raise ContractError("at least one filter layer is required")
        widths = [self.layers[0].shape[1]]
        for idx, taps in enumerate(self.layers):
            if taps.data.ndim != 3:
                raise ContractError(f"layer {idx} taps must be (K, F_in, F_out)")
            if taps.shape[0] < 1:
                raise ContractError(f"layer {idx} needs at least one tap")
            if taps.shape[1] != widths[-1]:
                raise ContractError(
                    f"layer {idx} input width {taps.shape[1]} does not chain "
                    f"from previous width {widths[-1]}")
            widths.append(taps.shape[2])
        out = widths[-1]
        if self.w_r.shape != (out, out):
            raise ContractError(f"w_r must be ({out}, {out}), got {self.w_r.shape}")
        if self.w_s.shape != (out,):
            raise ContractError(f"w_s must be ({out},), got {self.w_s.shape}")
        if self.w_a.shape != (out,):
            raise ContractError(f"w_a must be ({out},), got {self.w_a.shape}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ParameterError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.gso_normalization not in GSO_NORMALIZATIONS:
            raise ParameterError(f"unknown normalization {self.gso_normalization!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple([self.layers[0].shape[1]] + [t.shape[2] for t in self.layers])

    @property
    def taps_per_layer(self) -> tuple[int, ...]:
        return tuple(t.shape[0] for t in self.layers)

    def parameters(self) -> list[Tensor]:
        return [*self.layers, self.w_r, self.w_s, self.w_a]


def init_params(widths: tuple[int, ...] = (2, 16, 8), taps: int = 2, seed: int = 0,
                nonlinearity: str = "relu", gso_normalization: str = "none",
                head_scale: float = 0.1) -> GnnParams:
    """Randomly initialized parameters for a width chain F_0 -> ... -> F_L.

    Tap variance shrinks with fan-in and tap count to keep activations near
    the input scale; head weights start small so the softmax heads begin
    close to uniform.
    """
    if len(widths) < 2:
        raise ParameterError("widths must chain at least F_0 -> F_1")
    if taps < 1:
        raise ParameterError("taps must be >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    for f_in, f_out in zip(widths[:-1], widths[1:]):
        scale = np.sqrt(2.0 / (taps * (f_in + f_out)))
        layers.append(Tensor(rng.normal(0.0, scale, size=(taps, f_in, f_out)),
                             requires_grad=True, name=f"layer{len(layers)}"))
    out = widths[-1]
    w_r = Tensor(rng.normal(0.0, head_scale / out, size=(out, out)),
                 requires_grad=True, name="w_r")
    w_s = Tensor(rng.normal(0.0, head_scale / np.sqrt(out), size=(out,)),
                 requires_grad=True, name="w_s")
    w_a = Tensor(rng.normal(0.0, head_scale / np.sqrt(out), size=(out,)),
                 requires_grad=True, name="w_a")
    return GnnParams(layers=layers, w_r=w_r, w_s=w_s, w_a=w_a,
                     nonlinearity=nonlinearity, gso_normalization=gso_normalization)


def as_gso(channel: ChannelMatrix, normalization: str = "none") -> np.ndarray:
    """Channel matrix as graph shift operator, optionally degree-normalized.

    Degree normalization divides by the largest weighted degree (max row sum),
    bounding the spectral radius by one; the scalar is permutation invariant.
    """
    probs = channel.probs
    if normalization == "none":
        return probs
    if normalization == "degree":
        degree = probs.sum(axis=1).max()
        return probs / degree if degree > 0 else probs
    raise ParameterError(f"unknown normalization {normalization!r}")


def graph_filter(gso, signal, taps) -> Tensor:
    """Polynomial graph filter sum_{k} R^k z H_k via iterated shifts.

    ``gso`` is (n, n); ``signal`` is (..., n, F_in); ``taps`` is (K, F_in, F_out).
    Powers of the shift operator are never materialized: each term reuses the
    previously shifted signal.
    """
    gso = ad.as_tensor(gso)
    signal = ad.as_tensor(signal)
    taps = ad.as_tensor(taps)
    if taps.data.ndim != 3:
        raise ContractError(f"taps must be (K, F_in, F_out), got {taps.shape}")
    if signal.shape[-1] != taps.shape[1]:
        raise ContractError(
            f"signal width {signal.shape[-1]} does not match taps F_in {taps.shape[1]}")
    shifted = signal
    out = ad.matmul(shifted, ad.select_index(taps, 0))
    for k in range(1, taps.shape[0]):
        shifted = ad.matmul(gso, shifted)
        out = ad.add(out, ad.matmul(shifted, ad.select_index(taps, k)))
    return out


def _apply_nonlinearity(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return ad.relu(x)
    if kind == "identity":
        return x
    raise ParameterError(f"unknown nonlinearity {kind!r}")


def gnn_forward(gso, x, params: GnnParams) -> Tensor:
    """Stacked filter banks with pointwise nonlinearities; returns embeddings
    of shape (..., n, F_L)."""
    x = ad.as_tensor(x)
    if x.shape[-1] != params.widths[0]:
        raise ContractError(
            f"input width {x.shape[-1]} does not match the parameter chain "
            f"starting at {params.widths[0]}")
    z = x
    for taps in params.layers:
        z = _apply_nonlinearity(graph_filter(gso, z, taps), params.nonlinearity)
    return z


def decide_tensors(channel: ChannelMatrix, features: np.ndarray,
                   params: GnnParams, a0: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
    """Differentiable decision heads; returns (transmit, keep, packets) tensors.

    ``features`` is the stacked per-flow signal (F, n, F_0); ``a0`` the (n, F)
    arrivals entering the packet head.
    """
    n = channel.n
    if features.ndim != 3 or features.shape[1] != n:
        raise ContractError(f"features must be (F, {n}, F_0), got {features.shape}")
    num_flows = features.shape[0]
    if a0.shape != (n, num_flows):
        raise ContractError(f"arrivals must be ({n}, {num_flows}), got {a0.shape}")
    gso = Tensor(as_gso(channel, params.gso_normalization))
    emb = gnn_forward(gso, Tensor(features), params)           # (F, n, FL)
    out_width = params.widths[-1]

    keep_logits = ad.matmul(ad.matmul(emb, params.w_r), ad.transpose_last2(emb))
    keep = ad.masked_softmax(keep_logits, channel.support[None, :, :])

    w_s = ad.reshape(params.w_s, (out_width, 1))
    send_logits = ad.transpose(ad.reshape(ad.matmul(emb, w_s), (num_flows, n)), (1, 0))
    transmit = ad.idle_softmax(send_logits)                    # (n, F), rows sum < 1

    w_a = ad.reshape(params.w_a, (out_width, 1))
    extra = ad.relu(ad.transpose(ad.reshape(ad.matmul(emb, w_a), (num_flows, n)), (1, 0)))
    packets = ad.add(Tensor(a0), extra)                        # >= a0 entrywise
    return transmit, keep, packets


def decide(channel: ChannelMatrix, a0: np.ndarray, mu: np.ndarray,
           params: GnnParams, spec: FlowSpec | None = None) -> RoutingDecision:
    """Evaluate the policy without recording gradients and package the result."""
    features = build_flow_features(a0, mu)
    transmit, keep, packets = decide_tensors(channel, features, params, a0)
    return RoutingDecision(transmit=transmit.data, keep=keep.data, packets=packets.data)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(params: GnnParams, path: str | Path) -> None:
    """Write parameters plus a self-describing manifest as JSON.

    Values round-trip exactly: floats are serialized with full precision.
    """
    named = {t.name or f"param{idx}": t for idx, t in enumerate(params.parameters())}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "manifest": {
            "widths": list(params.widths),
            "taps": list(params.taps_per_layer),
            "nonlinearity": params.nonlinearity,
            "gso_normalization": params.gso_normalization,
            "feature_columns": ["arrivals", "dual"] if params.widths[0] == 2 else None,
        },
        "tensors": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in named.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path: str | Path) -> GnnParams:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path.name}: not valid JSON: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path.name}: unrecognized checkpoint format")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path.name}: unsupported checkpoint version {doc.get('version')}")
    manifest = doc["manifest"]

    def tensor(name: str) -> Tensor:
        entry = doc["tensors"].get(name)
        if entry is None:
            raise CheckpointError(f"{path.name}: missing tensor {name!r}")
        data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        return Tensor(data, requires_grad=True, name=name)

    num_layers = len(manifest["widths"]) - 1
    layers = [tensor(f"layer{idx}") for idx in range(num_layers)]
    return GnnParams(
        layers=layers,
        w_r=tensor("w_r"),
        w_s=tensor("w_s"),
        w_a=tensor("w_a"),
        nonlinearity=manifest["nonlinearity"],
        gso_normalization=manifest["gso_normalization"],
    )
