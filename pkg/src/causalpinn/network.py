"""Fully-connected networks with per-neuron activation groups and optional
Fourier feature input, evaluable on plain arrays or on Taylor-jet streams.

The jet evaluator propagates a stack of directional streams through the net
in one fused pass per layer: stream 0 carries values, an optional stream
carries the time tangent, and the trailing streams carry the space-direction
Taylor coefficients 1..k (normalized by 1/k!). The whole chain is exposed to
the autodiff graph as a single node with a hand-written reverse sweep, which
keeps the per-epoch working set small enough to stay cache-resident.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

ACTIVATION_TAGS = ("linear", "tanh", "sech2")


@dataclass(frozen=True)
class FourierEmbedding:
    """Periodic input map [1, cos(k x), sin(k x), ..., cos(m k x), sin(m k x)]
    with k = 2*pi/L. Networks fed through it are exactly L-periodic in x."""

    m: int
    L: float

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("harmonic count must be non-negative")
        if self.L <= 0:
            raise ValueError("period must be positive")

    @property
    def width(self) -> int:
        return 2 * self.m + 1

    @property
    def k(self) -> float:
        return 2.0 * math.pi / self.L


def embed(x, emb: FourierEmbedding) -> np.ndarray:
    """Embedding features of x; output shape x.shape + (2m+1,)."""
    x = np.asarray(x, dtype=np.float64)
    feats = [np.ones_like(x)]
    for n in range(1, emb.m + 1):
        feats.append(np.cos(n * emb.k * x))
        feats.append(np.sin(n * emb.k * x))
    return np.stack(feats, axis=-1)


@dataclass(frozen=True)
class LayerSpec:
    """One hidden layer: width plus an (activation, neuron-count) partition."""

    width: int
    activations: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        acts = self.activations or (("tanh", self.width),)
        object.__setattr__(self, "activations", tuple(acts))
        if self.width <= 0:
            raise ValueError("layer width must be positive")
        for tag, count in self.activations:
            if tag not in ACTIVATION_TAGS:
                raise ValueError(f"unknown activation {tag!r}")
            if count <= 0:
                raise ValueError("activation group count must be positive")
        if sum(c for _, c in self.activations) != self.width:
            raise ValueError("activation groups must partition the layer width")

    def column_groups(self) -> tuple[tuple[str, slice], ...]:
        groups, off = [], 0
        for tag, count in self.activations:
            groups.append((tag, slice(off, off + count)))
            off += count
        return tuple(groups)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    output_dim: int = 1
    embedding: FourierEmbedding | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("at least one hidden layer is required")
        if self.output_dim < 1:
            raise ValueError("output_dim must be positive")

    @property
    def input_dim(self) -> int:
        # t enters raw; only x goes through the embedding.
        return 2 if self.embedding is None else 1 + self.embedding.width


def mlp_spec(hidden_layers: int, width: int, *, activation: str = "tanh",
             output_dim: int = 1, embedding: FourierEmbedding | None = None,
             seed: int = 0) -> NetworkSpec:
    """Homogeneous MLP convenience constructor."""
    layers = tuple(LayerSpec(width, ((activation, width),)) for _ in range(hidden_layers))
    return NetworkSpec(layers, output_dim, embedding, seed)


def paf_kdv_spec(seed: int = 0) -> NetworkSpec:
    """Soliton-motivated heterogeneous architecture: a linear widening layer,
    tanh-dominated mixed layers, one sech^2-dominated layer, linear output."""
    mixed_tanh = LayerSpec(128, (("linear", 10), ("tanh", 118)))
    mixed_sech = LayerSpec(128, (("linear", 10), ("sech2", 118)))
    layers = (LayerSpec(120, (("linear", 120),)), mixed_tanh, mixed_tanh,
              mixed_sech, mixed_tanh)
    return NetworkSpec(layers, output_dim=1, embedding=None, seed=seed)


@dataclass
class Network:
    """Parameter container; weights[i] has shape (fan_in, width)."""

    spec: NetworkSpec
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def params_flat(self) -> np.ndarray:
        pieces = []
        for w, b in zip(self.weights, self.biases):
            pieces.append(w.reshape(-1))
            pieces.append(b)
        return np.concatenate(pieces)

    def set_params_flat(self, flat: np.ndarray) -> None:
        off = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[off:off + w.size].reshape(w.shape).copy()
            off += w.size
            self.biases[i] = flat[off:off + b.size].copy()
            off += b.size
        if off != flat.size:
            raise ValueError("parameter vector length mismatch")

    def features(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if self.spec.embedding is None:
            return np.stack([t, x], axis=1)
        return np.concatenate([t[:, None], embed(x, self.spec.embedding)], axis=1)

    def forward(self, t, x) -> np.ndarray:
        """u(t, x) for flat coordinate arrays; returns (n, output_dim)."""
        a = self.features(t, x)
        for layer, w, b in zip(self.spec.layers, self.weights, self.biases):
            z = a @ w + b
            a = _apply_groups_plain(z, layer.column_groups())
        return a @ self.weights[-1] + self.biases[-1]

    def lift(self, graph: ad.Graph) -> "LiftedNetwork":
        return LiftedNetwork(self, graph)


def _apply_groups_plain(z: np.ndarray, groups) -> np.ndarray:
    out = np.empty_like(z)
    for tag, cols in groups:
        if tag == "tanh":
            out[:, cols] = np.tanh(z[:, cols])
        elif tag == "sech2":
            out[:, cols] = ad._sech2_value(z[:, cols])
        else:
            out[:, cols] = z[:, cols]
    return out


def init_xavier(spec: NetworkSpec) -> Network:
    """Xavier-uniform weights, zero biases; bit-reproducible from spec.seed."""
    rng = np.random.default_rng(spec.seed)
    net = Network(spec)
    fan_in = spec.input_dim
    for layer in spec.layers:
        net.weights.append(_xavier_uniform(rng, fan_in, layer.width))
        net.biases.append(np.zeros(layer.width))
        fan_in = layer.width
    net.weights.append(_xavier_uniform(rng, fan_in, spec.output_dim))
    net.biases.append(np.zeros(spec.output_dim))
    return net


def _xavier_uniform(rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class FieldSample:
    """Network output and its input derivatives at a batch of points, all as
    graph Vars of shape (n, channels). Entries the evaluation did not request
    are None. Derivatives are true derivatives (factorials already applied)."""

    u: ad.Var
    u_t: ad.Var | None = None
    u_x: ad.Var | None = None
    u_xx: ad.Var | None = None
    u_xxx: ad.Var | None = None


class Workspace:
    """Shape-keyed buffer cache so repeated evaluations reuse warm memory."""

    def __init__(self):
        self._bufs: dict = {}

    def get(self, key, shape) -> np.ndarray:
        b = self._bufs.get(key)
        if b is None or b.shape != tuple(shape):
            b = np.empty(shape)
            self._bufs[key] = b
        return b


def input_jet_streams(spec: NetworkSpec, t, x, *, x_order: int,
                      with_time: bool) -> np.ndarray:
    """Constant input streams (S, n, input_dim): feature values followed by
    their t- and x-direction Taylor coefficients. Inputs carry no parameters,
    so these are plain arrays."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = t.size
    d = spec.input_dim
    n_streams = 1 + (1 if with_time else 0) + x_order
    out = np.zeros((n_streams, n, d))

    emb = spec.embedding
    if emb is None:
        out[0, :, 0] = t
        out[0, :, 1] = x
        if with_time:
            out[1, :, 0] = 1.0
        if x_order >= 1:
            out[1 + (1 if with_time else 0), :, 1] = 1.0
        return out

    out[0, :, 0] = t
    out[0, :, 1] = 1.0  # constant embedding component
    if with_time:
        out[1, :, 0] = 1.0
    base = 1 + (1 if with_time else 0)
    for h in range(1, emb.m + 1):
        w = h * emb.k
        c, s_ = np.cos(w * x), np.sin(w * x)
        jc, js = 2 * h, 2 * h + 1  # feature columns of cos, sin
        out[0, :, jc] = c
        out[0, :, js] = s_
        if x_order >= 1:
            out[base, :, jc] = -w * s_
            out[base, :, js] = w * c
        if x_order >= 2:
            out[base + 1, :, jc] = -(w * w) * c / 2.0
            out[base + 1, :, js] = -(w * w) * s_ / 2.0
        if x_order >= 3:
            out[base + 2, :, jc] = (w ** 3) * s_ / 6.0
            out[base + 2, :, js] = -(w ** 3) * c / 6.0
    return out


# -- fused chain evaluation ------------------------------------------------

def _group_coeffs(tag, z0, h0, aux_cols, scratch, with_da3: bool, order: int):
    """Normalized activation derivatives at z0: f' and, as needed by `order`,
    f''/2, f'''/6 and (f'''/6)'. Values are written into scratch buffers;
    h0 must already hold f(z0) for the backward call."""
    p, a2, a3, da3, t1, _ = scratch
    if tag == "tanh":
        t = h0
        np.multiply(t, t, out=t1)              # t^2
        np.subtract(1.0, t1, out=p)            # f' = 1 - t^2
        if order >= 2:
            np.multiply(t, p, out=a2)
            np.negative(a2, out=a2)            # f''/2 = -t p
            np.multiply(t1, 3.0, out=a3)
            np.subtract(a3, 1.0, out=a3)
            np.multiply(a3, p, out=a3)
            a3 *= (1.0 / 3.0)                  # f'''/6 = p (3 t^2 - 1)/3
        if with_da3:
            np.multiply(t1, -3.0, out=da3)
            da3 += 2.0
            np.multiply(da3, t, out=da3)
            np.multiply(da3, p, out=da3)
            da3 *= (4.0 / 3.0)                 # (4/3) t p (2 - 3 t^2)
        return
    # sech2: s stored in h0, tanh stored in aux
    s, t = h0, aux_cols
    np.multiply(t, t, out=t1)                  # t^2
    np.multiply(t, s, out=p)
    p *= -2.0                                  # f' = -2 t s
    if order >= 2:
        np.multiply(t1, 2.0, out=a2)
        np.subtract(a2, s, out=a2)
        np.multiply(a2, s, out=a2)             # f''/2 = s (2 t^2 - s)
        np.multiply(s, 2.0, out=a3)
        np.subtract(a3, t1, out=a3)
        np.multiply(a3, t, out=a3)
        np.multiply(a3, s, out=a3)
        a3 *= (4.0 / 3.0)                      # f'''/6 = (4/3) t s (2 s - t^2)
    if with_da3:
        # (f'''/6)' = (4/3) s [(2s - t^2)(s - 2 t^2) - 6 t^2 s]
        np.multiply(s, 2.0, out=da3)
        np.subtract(da3, t1, out=da3)          # 2s - t^2
        q = np.multiply(t1, -2.0)
        q += s                                 # s - 2 t^2
        np.multiply(da3, q, out=da3)
        np.multiply(t1, s, out=q)
        q *= 6.0
        da3 -= q
        np.multiply(da3, s, out=da3)
        da3 *= (4.0 / 3.0)


def _write_sech2(z, out):
    np.clip(z, -ad.SECH_CLAMP, ad.SECH_CLAMP, out=out)
    np.cosh(out, out=out)
    np.multiply(out, out, out=out)
    np.divide(1.0, out, out=out)
    return out


def _act_forward(tag, z3, h3, cols, chain, aux, scratch):
    """Write activation outputs for one neuron group into h3[..., cols].
    Streams 1..S-1 are first-order tangents except the ordered space chain,
    whose entries 2 and 3 get the higher Taylor-composition terms."""
    z0 = z3[0, :, cols]
    if tag == "linear":
        h3[:, :, cols] = z3[:, :, cols]
        return
    h0 = np.tanh(z0, out=h3[0, :, cols]) if tag == "tanh" else _write_sech2(z0, h3[0, :, cols])
    aux_cols = None
    if tag == "sech2":
        aux_cols = np.tanh(z0, out=aux[:, cols])
    p, a2, a3, _, t1, t2 = scratch
    _group_coeffs(tag, z0, h0, aux_cols, scratch, with_da3=False, order=len(chain))
    if z3.shape[0] > 1:
        # every stream k >= 1 carries the diagonal term f'(u0) * u_k
        np.multiply(z3[1:, :, cols], p, out=h3[1:, :, cols])
    if len(chain) >= 2:
        u1 = z3[chain[0], :, cols]
        u1sq = np.multiply(u1, u1, out=t1)
        np.multiply(u1sq, a2, out=t2)
        h3[chain[1], :, cols] += t2
        if len(chain) >= 3:
            u2 = z3[chain[1], :, cols]
            np.multiply(u2, a2, out=t2)
            t2 *= 2.0
            tmp = np.multiply(u1sq, a3, out=u1sq)
            tmp += t2
            tmp *= u1
            h3[chain[2], :, cols] += tmp


def _act_backward(tag, g3, z3, h3, cols, first_order, chain, aux, dz3, scratch):
    """Adjoint of _act_forward: fill dz3[..., cols] given output grads g3."""
    if tag == "linear":
        dz3[:, :, cols] = g3[:, :, cols]
        return
    p, a2, a3, da3, t1, t2 = scratch
    aux_cols = aux[:, cols] if tag == "sech2" else None
    _group_coeffs(tag, z3[0, :, cols], h3[0, :, cols], aux_cols, scratch,
                  with_da3=len(chain) >= 3, order=max(len(chain), 2))
    # diagonal f'(u0) factor on every stream, then z0 cross terms
    np.multiply(g3[:, :, cols], p, out=dz3[:, :, cols])
    acc0 = dz3[0, :, cols]
    for i in first_order:
        tmp = np.multiply(g3[i, :, cols], z3[i, :, cols], out=t1)
        tmp *= a2
        tmp *= 2.0                                    # f'' = 2 (f''/2)
        acc0 += tmp
    if chain:
        u1 = z3[chain[0], :, cols]
        tmp = np.multiply(g3[chain[0], :, cols], u1, out=t1)
        tmp *= a2
        tmp *= 2.0
        acc0 += tmp
    if len(chain) >= 2:
        u2 = z3[chain[1], :, cols]
        g2 = g3[chain[1], :, cols]
        tmp = np.multiply(u1, u1, out=t1)
        tmp = np.multiply(tmp, a3, out=t1)
        tmp *= 3.0                                    # (f''/2)' = 3 (f'''/6)
        q = np.multiply(u2, a2, out=t2)
        q *= 2.0
        tmp += q
        tmp *= g2
        acc0 += tmp
        tmp = np.multiply(g2, u1, out=t1)
        tmp *= a2
        tmp *= 2.0
        dz3[chain[0], :, cols] += tmp
    if len(chain) >= 3:
        u3 = z3[chain[2], :, cols]
        g3c = g3[chain[2], :, cols]
        tmp = np.multiply(u1, u1, out=t1)              # u1^2
        q = np.multiply(tmp, u1, out=t2)
        q = np.multiply(q, da3, out=t2)                # da3 u1^3
        tmp = np.multiply(tmp, a3, out=t1)             # a3 u1^2
        dz1 = tmp * 3.0
        q += 6.0 * (a3 * (u1 * u2))
        q += 2.0 * (a2 * u3)
        q *= g3c
        acc0 += q
        dz1 += 2.0 * (a2 * u2)
        dz1 *= g3c
        dz3[chain[0], :, cols] += dz1
        tmp = np.multiply(g3c, u1, out=t1)
        tmp *= a2
        tmp *= 2.0
        dz3[chain[1], :, cols] += tmp


def _group_scratch(ws: Workspace, li: int, gi: int, n: int, cols: slice):
    # shared by shape so repeated groups reuse cache-warm buffers
    wg = cols.stop - cols.start
    return tuple(ws.get(("scr", wg, k), (n, wg)) for k in range(6))


class LiftedNetwork:
    """Network parameters registered on one graph, for one training step.
    Registration order matches Network.params_flat()."""

    def __init__(self, net: Network, graph: ad.Graph):
        self.spec = net.spec
        self.graph = graph
        self.w_vars = []
        self.b_vars = []
        for w, b in zip(net.weights, net.biases):
            self.w_vars.append(graph.param(w))
            self.b_vars.append(graph.param(b))

    def forward_jets(self, t=None, x=None, *, x_order: int, with_time: bool = True,
                     streams: np.ndarray | None = None,
                     workspace: Workspace | None = None) -> FieldSample:
        """Propagate value + requested derivative streams through the net.
        Either (t, x) or a precomputed `streams` array must be given."""
        if not 0 <= x_order <= 3:
            raise ValueError("x_order must be in 0..3")
        if streams is None:
            streams = input_jet_streams(self.spec, t, x, x_order=x_order,
                                        with_time=with_time)
        ws = workspace if workspace is not None else Workspace()
        spec = self.spec
        S, n, _ = streams.shape
        first_order = (1,) if with_time else ()
        chain = tuple(range(1 + len(first_order), S))

        weights = [w.value for w in self.w_vars]
        biases = [b.value for b in self.b_vars]
        zs, hs, auxs = [], [], []
        # one gemm per stream keeps the value stream's arithmetic identical
        # to the plain forward pass (bit-exact coefficient-0 contract)
        a3 = streams
        for li, layer in enumerate(spec.layers):
            wd = layer.width
            z3 = ws.get(("z", li), (S, n, wd))
            for s_i in range(S):
                np.matmul(a3[s_i], weights[li], out=z3[s_i])
            z3[0] += biases[li]
            h3 = ws.get(("h", li), (S, n, wd))
            aux = (ws.get(("aux", li), (n, wd))
                   if any(tag == "sech2" for tag, _ in layer.activations) else None)
            for gi, (tag, cols) in enumerate(layer.column_groups()):
                scr = _group_scratch(ws, li, gi, n, cols)
                _act_forward(tag, z3, h3, cols, chain, aux, scr)
            zs.append(z3)
            hs.append(h3)
            auxs.append(aux)
            a3 = h3
        out = ws.get(("out",), (S, n, spec.output_dim))
        for s_i in range(S):
            np.matmul(a3[s_i], weights[-1], out=out[s_i])
        out[0] += biases[-1]
        if not np.all(np.isfinite(out)):
            raise ad.NonFiniteError("non-finite network activation")

        layers = spec.layers

        def vjp(g):
            grads = [None] * (2 * len(weights))
            grads[-1] = g[0].sum(axis=0)                      # output bias
            grads[-2] = sum(hs[-1][s_i].T @ g[s_i] for s_i in range(S))
            ga = ws.get(("ga", len(layers) - 1), (S, n, layers[-1].width))
            for s_i in range(S):
                np.matmul(g[s_i], weights[-1].T, out=ga[s_i])
            for li in range(len(layers) - 1, -1, -1):
                dz3 = ws.get(("dz", li), ga.shape)
                for gi, (tag, cols) in enumerate(layers[li].column_groups()):
                    scr = _group_scratch(ws, li, gi, n, cols)
                    _act_backward(tag, ga, zs[li], hs[li], cols,
                                  first_order, chain, auxs[li], dz3, scr)
                grads[2 * li + 1] = dz3[0].sum(axis=0)
                prev = streams if li == 0 else hs[li - 1]
                grads[2 * li] = sum(prev[s_i].T @ dz3[s_i] for s_i in range(S))
                if li > 0:
                    ga = ws.get(("ga", li - 1), (S, n, layers[li - 1].width))
                    for s_i in range(S):
                        np.matmul(dz3[s_i], weights[li].T, out=ga[s_i])
            return tuple(grads)

        parents = []
        for wv, bv in zip(self.w_vars, self.b_vars):
            parents.extend((wv, bv))
        node = self.graph._register(ad.Var(out, self.graph, tuple(parents), vjp))

        sample = FieldSample(u=ad.take_index(node, 0, axis=0))
        s = 1
        if with_time:
            sample.u_t = ad.take_index(node, s, axis=0)
            s += 1
        if x_order >= 1:
            sample.u_x = ad.take_index(node, s, axis=0)
        if x_order >= 2:
            sample.u_xx = ad.take_index(node, s + 1, axis=0) * 2.0
        if x_order >= 3:
            sample.u_xxx = ad.take_index(node, s + 2, axis=0) * 6.0
        return sample


def forward_with_derivs(graph: ad.Graph, net: Network, t, x,
                        space_order: int) -> FieldSample:
    """Value, u_t, and x-derivatives up to `space_order` (1 or 3) at (t, x),
    all parameter-differentiable on `graph`."""
    if space_order not in (1, 3):
        raise ValueError("space_order must be 1 or 3")
    lifted = net.lift(graph)
    return lifted.forward_jets(t, x, x_order=space_order, with_time=True)


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_MAGIC = "#causalpinn-checkpoint v1"


def _layer_token(layer: LayerSpec) -> str:
    return f"{layer.width}:" + "+".join(f"{tag}*{n}" for tag, n in layer.activations)


def _parse_layer_token(tok: str) -> LayerSpec:
    width_s, acts_s = tok.split(":")
    acts = []
    for part in acts_s.split("+"):
        tag, n = part.split("*")
        acts.append((tag, int(n)))
    return LayerSpec(int(width_s), tuple(acts))


def save_checkpoint(net: Network, path, meta: dict | None = None) -> None:
    """Text container: spec header then the parameter vector in layer order.
    Floats use repr() so the file round-trips bit-exactly."""
    spec = net.spec
    lines = [CHECKPOINT_MAGIC]
    for k, v in (meta or {}).items():
        lines.append(f"meta.{k}={v}")
    lines.append(f"seed={spec.seed}")
    lines.append(f"output_dim={spec.output_dim}")
    if spec.embedding is None:
        lines.append("embedding=none")
    else:
        lines.append(f"embedding={spec.embedding.m}:{spec.embedding.L!r}")
    lines.append("layers=" + ",".join(_layer_token(l) for l in spec.layers))
    flat = net.params_flat()
    lines.append(f"#params {flat.size}")
    lines.extend(repr(float(v)) for v in flat)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[Network, dict]:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    meta: dict[str, str] = {}
    header: dict[str, str] = {}
    i = 1
    while not lines[i].startswith("#params"):
        key, val = lines[i].split("=", 1)
        if key.startswith("meta."):
            meta[key[5:]] = val
        else:
            header[key] = val
        i += 1
    n = int(lines[i].split()[1])
    values = np.array([float(v) for v in lines[i + 1:i + 1 + n]])
    if values.size != n:
        raise ValueError(f"{path}: truncated parameter block")

    embedding = None
    if header["embedding"] != "none":
        m_s, L_s = header["embedding"].split(":")
        embedding = FourierEmbedding(int(m_s), float(L_s))
    layers = tuple(_parse_layer_token(tok) for tok in header["layers"].split(","))
    spec = NetworkSpec(layers, int(header["output_dim"]), embedding,
                       int(header["seed"]))
    net = init_xavier(spec)
    net.set_params_flat(values)
    return net, meta
