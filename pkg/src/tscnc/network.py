"""Masked feed-forward networks with exact reverse-mode gradients.

Layers are plain dataclasses, parameters are float64 numpy arrays, and every
parameterized layer carries a binary mask Z applied multiplicatively on each
forward pass.  Convolution weights are stored pre-flattened as
(c_out, c_in*k*k) so the matrix view used by the condition-number and
saliency paths is the storage layout itself.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, StateError, ValidationError
from .tensor_ops import as_tensor, im2col_indices

_PARAM_KINDS = ("linear", "conv2d")


@dataclass
class MaskedLayer:
    """One layer of a network.

    kind is one of "linear", "conv2d", "relu", "flatten".  Parameterized
    kinds carry W, Z, b; the others carry no state.  Linear weights are
    stored (fan_in, fan_out) so a batch forward is x @ W + b; conv weights
    are stored (c_out, c_in*k*k).
    """

    kind: str
    W: np.ndarray | None = None
    Z: np.ndarray | None = None
    b: np.ndarray | None = None
    kernel_size: int = 0
    stride: int = 1
    pad: int = 0
    in_channels: int = 0
    out_channels: int = 0
    prunable: bool = False
    # memoized im2col plan, keyed by input (h, w)
    _plan: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def parameterized(self) -> bool:
        return self.kind in _PARAM_KINDS

    def effective_weight(self) -> np.ndarray:
        """W with the mask applied; the only weights the function ever sees."""
        return self.W * self.Z

    def conv_plan(self, h: int, w: int):
        key = (h, w)
        if key not in self._plan:
            self._plan[key] = im2col_indices(
                self.in_channels, h, w, self.kernel_size, self.stride, self.pad
            )
        return self._plan[key]


@dataclass
class Network:
    layers: list
    input_shape: tuple
    class_count: int
    # bumped on every in-place parameter mutation; guards stale caches
    version: int = 0

    def bump(self) -> None:
        self.version += 1

    def parameterized_indices(self) -> list:
        return [i for i, l in enumerate(self.layers) if l.parameterized]

    def prunable_indices(self) -> list:
        return [i for i, l in enumerate(self.layers) if l.parameterized and l.prunable]

    def clone(self) -> "Network":
        return copy.deepcopy(self)


@dataclass
class ForwardCache:
    """Per-layer inputs retained by forward for the matching backward."""

    net_id: int
    version: int
    inputs: list
    cols: dict
    batch: int


@dataclass
class LayerGrads:
    weight: np.ndarray | None
    bias: np.ndarray | None
    input: np.ndarray


@dataclass
class Gradients:
    layers: list
    input: np.ndarray


def forward(net: Network, x) -> tuple:
    """Run the network on a batch, returning (logits, cache).

    x has shape (batch,) + net.input_shape.  The cache holds every layer
    input needed by backward and is invalidated by any mutation of the
    network's parameters.
    """
    x = as_tensor(x)
    if x.shape[1:] != tuple(net.input_shape):
        raise DimensionError(
            f"input shape {x.shape[1:]} does not match network input "
            f"shape {tuple(net.input_shape)}"
        )
    batch = x.shape[0]
    inputs = []
    cols = {}
    a = x
    for li, layer in enumerate(net.layers):
        inputs.append(a)
        if layer.kind == "linear":
            if a.ndim != 2 or a.shape[1] != layer.W.shape[0]:
                raise DimensionError(
                    f"linear layer {li} expects (batch, {layer.W.shape[0]}), "
                    f"got {a.shape}"
                )
            a = a @ layer.effective_weight() + layer.b
        elif layer.kind == "conv2d":
            if a.ndim != 4 or a.shape[1] != layer.in_channels:
                raise DimensionError(
                    f"conv layer {li} expects (batch, {layer.in_channels}, h, w), "
                    f"got {a.shape}"
                )
            idx, (oh, ow) = layer.conv_plan(a.shape[2], a.shape[3])
            padded = np.pad(
                a, ((0, 0), (0, 0), (layer.pad, layer.pad), (layer.pad, layer.pad))
            )
            flat = padded.reshape(batch, -1)
            c = flat[:, idx]  # (batch, c_in*k*k, oh*ow)
            cols[li] = (c, a.shape, padded.shape)
            z = np.matmul(layer.effective_weight(), c) + layer.b[:, None]
            a = z.reshape(batch, layer.out_channels, oh, ow)
        elif layer.kind == "relu":
            a = np.maximum(a, 0.0)
        elif layer.kind == "flatten":
            a = a.reshape(batch, -1)
        else:
            raise ValidationError(f"unknown layer kind {layer.kind!r}")
    if a.ndim != 2 or a.shape[1] != net.class_count:
        raise DimensionError(
            f"network produced shape {a.shape}, expected (batch, {net.class_count})"
        )
    cache = ForwardCache(
        net_id=id(net), version=net.version, inputs=inputs, cols=cols, batch=batch
    )
    return a, cache


def cross_entropy(logits, labels) -> tuple:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    Stabilized by row-max subtraction.  Labels must lie in [0, c).
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got shape {logits.shape}")
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(
            f"labels shape {labels.shape} does not match batch {logits.shape[0]}"
        )
    c = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValidationError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def backward(net: Network, cache: ForwardCache, grad_logits) -> Gradients:
    """Reverse-mode pass returning per-layer dW, db, dx.

    Weight gradients are w.r.t. the effective (masked) weights; entries under
    Z=0 are reported as-is and the optimizer gates the update by Z.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise StateError("forward cache is stale: network mutated since forward")
    grad = as_tensor(grad_logits)
    if grad.shape != (cache.batch, net.class_count):
        raise DimensionError(
            f"grad_logits shape {grad.shape}, expected "
            f"({cache.batch}, {net.class_count})"
        )
    per_layer = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        a = cache.inputs[li]
        if layer.kind == "linear":
            dW = a.T @ grad
            db = grad.sum(axis=0)
            grad = grad @ layer.effective_weight().T
            per_layer[li] = LayerGrads(weight=dW, bias=db, input=grad)
        elif layer.kind == "conv2d":
            c, in_shape, padded_shape = cache.cols[li]
            batch = in_shape[0]
            dz = grad.reshape(batch, layer.out_channels, -1)
            dW = np.einsum("bos,bks->ok", dz, c)
            db = dz.sum(axis=(0, 2))
            dcols = np.matmul(layer.effective_weight().T, dz)
            idx, _ = layer.conv_plan(in_shape[2], in_shape[3])
            dflat = np.zeros((batch, padded_shape[1] * padded_shape[2] * padded_shape[3]))
            np.add.at(dflat, (np.arange(batch)[:, None, None], idx[None]), dcols)
            dpad = dflat.reshape(padded_shape)
            p = layer.pad
            grad = dpad[:, :, p : padded_shape[2] - p, p : padded_shape[3] - p]
            per_layer[li] = LayerGrads(weight=dW, bias=db, input=grad)
        elif layer.kind == "relu":
            grad = grad * (a > 0.0)
            per_layer[li] = LayerGrads(weight=None, bias=None, input=grad)
        elif layer.kind == "flatten":
            grad = grad.reshape(a.shape)
            per_layer[li] = LayerGrads(weight=None, bias=None, input=grad)
    return Gradients(layers=per_layer, input=grad)


def input_gradient(net: Network, x, y) -> np.ndarray:
    """Gradient of the mean cross-entropy loss w.r.t. the input batch."""
    logits, cache = forward(net, x)
    _, grad_logits = cross_entropy(logits, y)
    return backward(net, cache, grad_logits).input


def apply_scaling(net: Network, layer: int, mu: float) -> Network:
    """Scale layer `layer` by mu and the next parameterized layer by 1/mu.

    With only ReLU (and reshape) in between the network function is
    unchanged for mu > 0.  Returns a new network; the argument is untouched.
    """
    if mu <= 0.0:
        raise ValidationError(f"scaling factor must be positive, got {mu}")
    if layer < 0 or layer >= len(net.layers) or not net.layers[layer].parameterized:
        raise ValidationError(f"layer {layer} is not a parameterized layer")
    nxt = None
    for j in range(layer + 1, len(net.layers)):
        if net.layers[j].parameterized:
            nxt = j
            break
        if net.layers[j].kind not in ("relu", "flatten"):
            raise ValidationError(
                f"layer {j} ({net.layers[j].kind}) between scaled layers is not "
                "positively homogeneous"
            )
    if nxt is None:
        raise ValidationError(f"no parameterized layer follows layer {layer}")
    out = net.clone()
    out.layers[layer].W = out.layers[layer].W * mu
    out.layers[layer].b = out.layers[layer].b * mu
    out.layers[nxt].W = out.layers[nxt].W / mu
    out.bump()
    return out


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_mlp(input_dim: int, hidden, class_count: int, seed: int = 0) -> Network:
    """Fully-connected ReLU network: input_dim -> hidden... -> class_count."""
    rng = np.random.default_rng(seed)
    layers = []
    widths = [input_dim] + list(hidden) + [class_count]
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        layers.append(
            MaskedLayer(
                kind="linear",
                W=_kaiming_uniform(rng, (fan_in, fan_out), fan_in),
                Z=np.ones((fan_in, fan_out)),
                b=np.zeros(fan_out),
                prunable=True,
            )
        )
        if i < len(widths) - 2:
            layers.append(MaskedLayer(kind="relu"))
    return Network(layers=layers, input_shape=(input_dim,), class_count=class_count)


def build_cnn(
    input_shape,
    channels,
    fc_width: int,
    class_count: int,
    seed: int = 0,
    kernel_size: int = 3,
    stride: int = 1,
    pad: int = 1,
) -> Network:
    """Two conv + two fc network on (c, h, w) inputs.

    Spatial size is preserved by the default stride/pad, so the flatten
    width is channels[-1] * h * w.
    """
    c_in, h, w = input_shape
    rng = np.random.default_rng(seed)
    layers = []
    prev = c_in
    oh, ow = h, w
    for c_out in channels:
        fan_in = prev * kernel_size * kernel_size
        layers.append(
            MaskedLayer(
                kind="conv2d",
                W=_kaiming_uniform(rng, (c_out, fan_in), fan_in),
                Z=np.ones((c_out, fan_in)),
                b=np.zeros(c_out),
                kernel_size=kernel_size,
                stride=stride,
                pad=pad,
                in_channels=prev,
                out_channels=c_out,
                prunable=True,
            )
        )
        layers.append(MaskedLayer(kind="relu"))
        oh = (oh + 2 * pad - kernel_size) // stride + 1
        ow = (ow + 2 * pad - kernel_size) // stride + 1
        prev = c_out
    layers.append(MaskedLayer(kind="flatten"))
    flat = prev * oh * ow
    layers.append(
        MaskedLayer(
            kind="linear",
            W=_kaiming_uniform(rng, (flat, fc_width), flat),
            Z=np.ones((flat, fc_width)),
            b=np.zeros(fc_width),
            prunable=True,
        )
    )
    layers.append(MaskedLayer(kind="relu"))
    layers.append(
        MaskedLayer(
            kind="linear",
            W=_kaiming_uniform(rng, (fc_width, class_count), fc_width),
            Z=np.ones((fc_width, class_count)),
            b=np.zeros(class_count),
            prunable=True,
        )
    )
    return Network(layers=layers, input_shape=tuple(input_shape), class_count=class_count)


def build_network(arch: str, input_shape, class_count: int, seed: int = 0) -> Network:
    """Construct a network from an architecture id.

    "mlp-64x32" is a ReLU MLP with hidden widths 64 and 32 ("mlp" alone is
    logistic regression); "cnn-8x16-32" is two 3x3 convs with 8 and 16
    channels followed by a 32-wide fc layer.  Non-flat input to an mlp gets
    a flatten layer prepended.
    """
    input_shape = tuple(input_shape)
    name, _, rest = arch.partition("-")
    if name == "mlp":
        try:
            hidden = [int(t) for t in rest.split("x")] if rest else []
        except ValueError:
            raise ValidationError(f"bad mlp architecture id {arch!r}")
        dim = int(np.prod(input_shape))
        net = build_mlp(dim, hidden, class_count, seed=seed)
        if len(input_shape) > 1:
            net.layers.insert(0, MaskedLayer(kind="flatten"))
            net.input_shape = input_shape
        return net
    if name == "cnn":
        parts = rest.split("-")
        if len(parts) != 2:
            raise ValidationError(f"bad cnn architecture id {arch!r}")
        try:
            channels = [int(t) for t in parts[0].split("x")]
            fc_width = int(parts[1])
        except ValueError:
            raise ValidationError(f"bad cnn architecture id {arch!r}")
        if len(input_shape) != 3:
            raise ValidationError(
                f"cnn architecture needs (c, h, w) input, got {input_shape}"
            )
        return build_cnn(input_shape, channels, fc_width, class_count, seed=seed)
    raise ValidationError(f"unknown architecture id {arch!r}")
