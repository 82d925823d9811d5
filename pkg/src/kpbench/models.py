"""Network descriptions, parameter accounting, execution and the weight file.

A model is a flat, ordered list of ``LayerSpec``. Tensor ``0`` is the model
input and tensor ``i + 1`` is the output of layer ``i``; an ``add_residual``
layer adds tensor ``source`` to its input, which is all the branching an
inverted-residual trunk needs.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

import numpy as np

from . import tensor as T
from .dataset import N_COORDS

KINDS = frozenset({
    "conv", "depthwise_conv", "pointwise_conv", "dense", "relu", "relu6",
    "max_pool", "global_avg_pool", "batch_norm", "add_residual", "flatten", "dropout",
})


class ModelSpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    filters: Optional[int] = None  # conv/pointwise output channels, dense units
    kernel: int = 3
    stride: int = 1
    padding: str = "same"
    use_bias: bool = True
    expansion: int = 1  # pointwise expand: filters = expansion * in_channels
    rate: float = 0.0
    source: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelSpecError(f"{self.name}: unknown layer kind {self.kind!r}")
        if self.expansion < 1:
            raise ModelSpecError(f"{self.name}: expansion factor must be >= 1")
        if self.stride < 1 or self.kernel < 1:
            raise ModelSpecError(f"{self.name}: kernel and stride must be >= 1")
        if self.padding not in ("same", "valid"):
            raise ModelSpecError(f"{self.name}: padding must be 'same' or 'valid'")
        if not 0.0 <= self.rate < 1.0:
            raise ModelSpecError(f"{self.name}: dropout rate must lie in [0, 1)")
        if self.kind == "add_residual" and self.source is None:
            raise ModelSpecError(f"{self.name}: add_residual needs a source tensor index")

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "depthwise_conv", "pointwise_conv", "dense", "batch_norm")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple  # (C, H, W)
    layers: tuple

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ModelSpecError(f"{self.name}: duplicate layer names")
        shapes = infer_shapes(self)
        if shapes[-1] != (N_COORDS,):
            raise ModelSpecError(f"{self.name}: output shape {shapes[-1]} is not ({N_COORDS},)")

    @property
    def head_start(self) -> int:
        """Index of the final global average pool; the head is everything from it on."""
        for i in range(len(self.layers) - 1, -1, -1):
            if self.layers[i].kind == "global_avg_pool":
                return i
        return len(self.layers)


def _out_channels(layer: LayerSpec, c: int) -> int:
    if layer.kind == "pointwise_conv" and layer.filters is None:
        return c * layer.expansion
    return layer.filters


def infer_shapes(spec: ModelSpec) -> list[tuple]:
    """Per-tensor shapes without the batch axis; entry 0 is the input."""
    shapes = [tuple(spec.input_shape)]
    for i, layer in enumerate(spec.layers):
        s = shapes[-1]
        k = layer.kind
        where = f"{spec.name}/{layer.name}"
        if k in ("conv", "pointwise_conv", "depthwise_conv", "max_pool", "global_avg_pool") and len(s) != 3:
            raise ModelSpecError(f"{where}: expects a (C, H, W) input, got {s}")
        if k in ("conv", "pointwise_conv"):
            kern = 1 if k == "pointwise_conv" else layer.kernel
            try:
                h = T.conv_output_size(s[1], kern, layer.stride, layer.padding)
                w = T.conv_output_size(s[2], kern, layer.stride, layer.padding)
            except T.ShapeError as e:
                raise ModelSpecError(f"{where}: {e}") from None
            out = _out_channels(layer, s[0])
            if not out or out < 1:
                raise ModelSpecError(f"{where}: filters must be >= 1")
            s = (out, h, w)
        elif k == "depthwise_conv":
            h = T.conv_output_size(s[1], layer.kernel, layer.stride, layer.padding)
            w = T.conv_output_size(s[2], layer.kernel, layer.stride, layer.padding)
            s = (s[0], h, w)
        elif k == "max_pool":
            if s[1] < 2 or s[2] < 2:
                raise ModelSpecError(f"{where}: spatial extent {s[1:]} too small to pool")
            s = (s[0], s[1] // 2, s[2] // 2)
        elif k == "global_avg_pool":
            s = (s[0],)
        elif k == "flatten":
            s = (int(np.prod(s)),)
        elif k == "dense":
            if len(s) != 1:
                raise ModelSpecError(f"{where}: dense expects a flat input, got {s}")
            if not layer.filters or layer.filters < 1:
                raise ModelSpecError(f"{where}: units must be >= 1")
            s = (layer.filters,)
        elif k == "add_residual":
            if not 0 <= layer.source <= i:
                raise ModelSpecError(f"{where}: residual source {layer.source} out of range")
            if shapes[layer.source] != s:
                raise ModelSpecError(f"{where}: residual shapes differ {shapes[layer.source]} vs {s}")
        shapes.append(s)
    return shapes


def param_shapes(spec: ModelSpec) -> dict[str, dict[str, tuple]]:
    """Tensor shapes per parameterised layer, in layer order."""
    shapes = infer_shapes(spec)
    out = {}
    for i, layer in enumerate(spec.layers):
        cin, cout = shapes[i][0], shapes[i + 1][0]
        k = layer.kind
        if k == "conv":
            p = {"weights": (cout, cin, layer.kernel, layer.kernel)}
        elif k == "pointwise_conv":
            p = {"weights": (cout, cin, 1, 1)}
        elif k == "depthwise_conv":
            p = {"weights": (cin, 1, layer.kernel, layer.kernel)}
        elif k == "dense":
            p = {"weights": (cin, cout)}
        elif k == "batch_norm":
            p = {n: (cin,) for n in ("bn_gamma", "bn_beta", "bn_mean", "bn_var")}
            out[layer.name] = p
            continue
        else:
            continue
        if layer.use_bias:
            p["bias"] = (cout,)
        out[layer.name] = p
    return out


@dataclass
class Model:
    spec: ModelSpec
    params: dict = field(default_factory=dict)  # layer name -> LayerParams

    @property
    def dtype(self):
        for p in self.params.values():
            for t in p.tensors().values():
                return t.dtype
        return T.DTYPE

    def astype(self, dtype) -> "Model":
        return Model(self.spec, {
            name: T.LayerParams(**{k: v.astype(dtype) for k, v in p.tensors().items()}, trainable=dict(p.trainable))
            for name, p in self.params.items()})

    def copy(self) -> "Model":
        return self.astype(self.dtype)

    def named_tensors(self):
        """Yield ``(layer, tensor_name, array)`` in spec order."""
        for layer in self.spec.layers:
            p = self.params.get(layer.name)
            if p is None:
                continue
            for tname, arr in p.tensors().items():
                yield layer.name, tname, arr


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def init_model(spec: ModelSpec, seed: int = 0, dtype=T.DTYPE) -> Model:
    """He-normal kernels, zero biases, identity batch-norm.

    The last dense layer uses a fan-in scaled (LeCun) normal so the initial
    coordinate predictions stay near the image centre.
    """
    rng = np.random.default_rng(seed)
    shapes = param_shapes(spec)
    last_dense = max((l.name for l in spec.layers if l.kind == "dense"), default=None,
                     key=lambda n: [l.name for l in spec.layers].index(n))
    params = {}
    for layer in spec.layers:
        if layer.name not in shapes:
            continue
        ps = shapes[layer.name]
        if layer.kind == "batch_norm":
            c = ps["bn_gamma"][0]
            params[layer.name] = T.LayerParams(
                bn_gamma=np.ones(c, dtype), bn_beta=np.zeros(c, dtype),
                bn_mean=np.zeros(c, dtype), bn_var=np.ones(c, dtype))
            continue
        wshape = ps["weights"]
        fan_in = int(np.prod(wshape[1:])) if layer.kind != "dense" else wshape[0]
        gain = 1.0 if layer.name == last_dense else 2.0
        w = rng.normal(0.0, np.sqrt(gain / fan_in), size=wshape).astype(dtype)
        b = np.zeros(ps["bias"], dtype) if "bias" in ps else None
        params[layer.name] = T.LayerParams(weights=w, bias=b)
    return Model(spec, params)


def _conv_block(name, filters):
    return [LayerSpec("conv", f"{name}_conv", filters=filters, kernel=3),
            LayerSpec("relu", f"{name}_relu"),
            LayerSpec("max_pool", f"{name}_pool")]


def regression_head(hidden: Optional[int] = None, dropout: float = 0.0) -> list[LayerSpec]:
    layers = [LayerSpec("global_avg_pool", "gap")]
    if hidden:
        layers += [LayerSpec("dense", "fc_hidden", filters=hidden), LayerSpec("relu", "fc_hidden_relu")]
    if dropout:
        layers.append(LayerSpec("dropout", "head_dropout", rate=dropout))
    layers.append(LayerSpec("dense", "regression", filters=N_COORDS))
    return layers


def custom_cnn_spec(name: str, filters, dense_width: Optional[int] = None) -> ModelSpec:
    """Plain conv/relu/pool stack with a GAP + dense head.

    Each entry of ``filters`` is one 3x3 conv + relu + 2x2 max-pool stage.
    """
    layers = []
    for i, f in enumerate(filters):
        layers += _conv_block(f"block{i + 1}", f)
    layers += regression_head(dense_width)
    return ModelSpec(name, (1, 96, 96), tuple(layers))


BASELINE_FILTERS = (32, 64, 128, 256, 640)
MANUAL_FILTERS = (16, 32, 64, 128, 120)


def baseline_cnn_spec() -> ModelSpec:
    return custom_cnn_spec("baseline", BASELINE_FILTERS)


def manual_cnn_spec() -> ModelSpec:
    return custom_cnn_spec("manual", MANUAL_FILTERS)


def build_baseline_cnn(seed: int = 0) -> Model:
    return init_model(baseline_cnn_spec(), seed)


def build_manual_cnn(seed: int = 0) -> Model:
    return init_model(manual_cnn_spec(), seed)


# (expansion t, channels c, repeats n, first stride s)
MOBILENETV2_BLOCKS = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)


def make_divisible(v: float, divisor: int = 8) -> int:
    new_v = max(divisor, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


def mobilenetv2_spec(width_multiplier: float = 1.0, input_size: int = 96) -> ModelSpec:
    if width_multiplier <= 0:
        raise ModelSpecError("width_multiplier must be > 0")
    layers: list[LayerSpec] = []

    def add(kind, name, **kw):
        layers.append(LayerSpec(kind, name, **kw))

    stem = make_divisible(32 * width_multiplier)
    add("conv", "stem_conv", filters=stem, kernel=3, stride=2, use_bias=False)
    add("batch_norm", "stem_bn")
    add("relu6", "stem_relu")
    channels = stem
    block = 0
    for t, c, n, s in MOBILENETV2_BLOCKS:
        out = make_divisible(c * width_multiplier)
        for r in range(n):
            stride = s if r == 0 else 1
            block_input = len(layers)  # tensor index of the block input
            p = f"block{block}"
            if t != 1:
                add("pointwise_conv", f"{p}_expand", expansion=t, use_bias=False)
                add("batch_norm", f"{p}_expand_bn")
                add("relu6", f"{p}_expand_relu")
            add("depthwise_conv", f"{p}_depthwise", kernel=3, stride=stride, use_bias=False)
            add("batch_norm", f"{p}_depthwise_bn")
            add("relu6", f"{p}_depthwise_relu")
            add("pointwise_conv", f"{p}_project", filters=out, use_bias=False)
            add("batch_norm", f"{p}_project_bn")
            if stride == 1 and channels == out:
                add("add_residual", f"{p}_add", source=block_input)
            channels = out
            block += 1
    last = make_divisible(1280 * width_multiplier) if width_multiplier > 1.0 else 1280
    add("pointwise_conv", "top_conv", filters=last, use_bias=False)
    add("batch_norm", "top_bn")
    add("relu6", "top_relu")
    layers += regression_head()
    return ModelSpec(f"mobilenetv2_{width_multiplier:g}", (3, input_size, input_size), tuple(layers))


def build_mobilenetv2_regressor(width_multiplier: float = 1.0, seed: int = 0) -> Model:
    return init_model(mobilenetv2_spec(width_multiplier), seed)


BUILDERS = {
    "baseline": build_baseline_cnn,
    "manual": build_manual_cnn,
    "mobilenetv2": lambda seed=0: build_mobilenetv2_regressor(1.0, seed),
}


def build(name: str, seed: int = 0) -> Model:
    try:
        return BUILDERS[name](seed=seed)
    except KeyError:
        raise ModelSpecError(f"unknown model {name!r}; choose from {sorted(BUILDERS)}") from None


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def prepare_input(spec: ModelSpec, batch: np.ndarray, dtype) -> np.ndarray:
    """Cast and replicate grayscale to the channel count the model expects."""
    batch = np.asarray(batch)
    c, h, w = spec.input_shape
    if batch.ndim != 4 or batch.shape[2:] != (h, w):
        raise T.ShapeError(spec.name, "input batch shape", ("B", c, h, w), batch.shape)
    if batch.shape[1] == 1 and c > 1:
        batch = np.repeat(batch, c, axis=1)
    elif batch.shape[1] != c:
        raise T.ShapeError(spec.name, "input channels", c, batch.shape[1])
    return batch.astype(dtype, copy=False)


def _run(model: Model, x, training: bool, rng, keep_caches: bool):
    spec = model.spec
    acts = [x]
    caches = []
    bn_updates = {}
    sources = {l.source for l in spec.layers if l.kind == "add_residual"}
    for layer in spec.layers:
        inp = acts[-1]
        p = model.params.get(layer.name)
        k = layer.kind
        if k in ("conv", "pointwise_conv"):
            out, cache = T.conv2d_forward(inp, p.weights, p.bias, layer.stride,
                                          "same" if k == "pointwise_conv" else layer.padding)
            cache.kind = k
        elif k == "depthwise_conv":
            out, cache = T.depthwise_conv2d_forward(inp, p.weights, p.bias, layer.stride, layer.padding)
        elif k == "dense":
            out, cache = T.dense_forward(inp, p.weights, p.bias)
        elif k == "relu":
            out, cache = T.relu_forward(inp)
        elif k == "relu6":
            out, cache = T.relu6_forward(inp)
        elif k == "max_pool":
            out, cache = T.max_pool2d_forward(inp)
        elif k == "global_avg_pool":
            out, cache = T.global_average_pool_forward(inp)
        elif k == "flatten":
            out, cache = T.flatten_forward(inp)
        elif k == "dropout":
            out, cache = T.dropout_forward(inp, layer.rate, rng, training)
        elif k == "batch_norm":
            out, cache, m, v = T.batch_norm_forward(inp, p.bn_gamma, p.bn_beta, p.bn_mean, p.bn_var, training)
            if training:
                bn_updates[layer.name] = (m, v)
        elif k == "add_residual":
            out, cache = T.add_forward(inp, acts[layer.source])
        acts.append(out)
        if keep_caches:
            caches.append(cache)
        elif len(acts) - 2 not in sources:
            acts[-2] = None
    return acts[-1], caches, bn_updates


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Inference-mode forward pass; returns (B, 30) normalised coordinates."""
    x = prepare_input(model.spec, batch, model.dtype)
    return _run(model, x, training=False, rng=None, keep_caches=False)[0]


def forward_train(model: Model, batch: np.ndarray, rng=None, training: bool = True):
    """Forward pass keeping caches; returns ``(output, caches, bn_updates)``."""
    x = prepare_input(model.spec, batch, model.dtype)
    return _run(model, x, training=training, rng=rng, keep_caches=True)


def backward_model(model: Model, caches: list, grad: np.ndarray, input_grad: bool = False):
    """Parameter gradients ``{layer: {tensor: grad}}`` (plus the input gradient if asked)."""
    layers = model.spec.layers
    if len(caches) != len(layers):
        raise T.MissingCacheError("backward_model needs the caches of a full forward_train call")
    grads_t: list = [None] * (len(layers) + 1)
    grads_t[-1] = grad
    param_grads = {}
    for i in range(len(layers) - 1, -1, -1):
        g = grads_t[i + 1]
        grads_t[i + 1] = None
        if g is None:
            continue
        layer = layers[i]
        if layer.kind == "add_residual":
            dx = g
            src = layer.source
            grads_t[src] = g if grads_t[src] is None else grads_t[src] + g
        else:
            if i == 0 and not input_grad and layer.kind in ("conv", "pointwise_conv"):
                # the input gradient of the first layer is never used
                param_grads[layer.name] = T.conv2d_weight_grads(caches[i], g)
                continue
            dx, pg = T.backward(caches[i], g)
            if pg:
                param_grads[layer.name] = pg
        grads_t[i] = dx if grads_t[i] is None else grads_t[i] + dx
    if input_grad:
        return param_grads, grads_t[0]
    return param_grads


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------

def count_parameters(model_or_spec, part: str = "all") -> dict:
    """Trainable / non-trainable / total counts.

    ``part`` selects ``"all"``, ``"trunk"`` (layers before the head) or
    ``"head"``. Batch-norm running statistics are non-trainable.
    """
    spec = model_or_spec.spec if isinstance(model_or_spec, Model) else model_or_spec
    head = spec.head_start
    names = [l.name for l in spec.layers]
    trainable = non_trainable = 0
    for lname, tensors in param_shapes(spec).items():
        idx = names.index(lname)
        if (part == "trunk" and idx >= head) or (part == "head" and idx < head):
            continue
        for tname, shape in tensors.items():
            n = int(np.prod(shape))
            if tname in ("bn_mean", "bn_var"):
                non_trainable += n
            else:
                trainable += n
    return {"trainable": trainable, "non_trainable": non_trainable, "total": trainable + non_trainable}


def describe(model_or_spec) -> str:
    spec = model_or_spec.spec if isinstance(model_or_spec, Model) else model_or_spec
    shapes = infer_shapes(spec)
    pshapes = param_shapes(spec)
    rows = [f"{'#':>3}  {'layer':<28} {'kind':<16} {'output':<18} {'params':>10}"]
    for i, layer in enumerate(spec.layers):
        n = sum(int(np.prod(s)) for s in pshapes.get(layer.name, {}).values())
        rows.append(f"{i:>3}  {layer.name:<28} {layer.kind:<16} {str(shapes[i + 1]):<18} {n:>10,}")
    counts = count_parameters(spec)
    trunk = count_parameters(spec, "trunk")
    size = model_size_bytes(spec)
    rows.append("")
    rows.append(f"input {spec.input_shape}")
    rows.append(f"trainable {counts['trainable']:,}  non-trainable {counts['non_trainable']:,}  "
                f"total {counts['total']:,}  (trunk {trunk['total']:,})")
    rows.append(f"weight file {size:,} bytes = {size / 1e6:.2f} MB")
    return "\n".join(rows)


# ---------------------------------------------------------------------------
# weight file
# ---------------------------------------------------------------------------

MAGIC = b"KPBW"
FORMAT_VERSION = 1


class WeightFileError(ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class WeightShapeError(WeightFileError):
    pass


class TruncatedWeightFileError(WeightFileError):
    pass


def _entries(spec: ModelSpec):
    for lname, tensors in param_shapes(spec).items():
        for tname, shape in tensors.items():
            yield f"{lname}/{tname}", shape


def header_bytes(spec: ModelSpec) -> int:
    """Bytes of everything except the raw float32 payload."""
    n = 4 + 2 + 4
    for name, shape in _entries(spec):
        n += 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape)
    return n


def model_size_bytes(model_or_spec) -> int:
    spec = model_or_spec.spec if isinstance(model_or_spec, Model) else model_or_spec
    return header_bytes(spec) + 4 * count_parameters(spec)["total"]


def save_weights(model: Model, sink: BinaryIO) -> int:
    """Write the model; returns the number of bytes written.

    Layout (little-endian): ``KPBW``, u16 version, u32 entry count, then per
    tensor: u16 name length, UTF-8 name, u8 rank, u32 extents, float32 data.
    """
    entries = [(f"{l}/{t}", a) for l, t, a in model.named_tensors()]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", FORMAT_VERSION, len(entries)))
    for name, arr in entries:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    data = buf.getvalue()
    sink.write(data)
    return len(data)


def _read(src: BinaryIO, n: int) -> bytes:
    b = src.read(n)
    if len(b) != n:
        raise TruncatedWeightFileError(f"weight file truncated (wanted {n} bytes, got {len(b)})")
    return b


def load_weights(spec: ModelSpec, source: BinaryIO) -> Model:
    if _read(source, 4) != MAGIC:
        raise BadMagicError("not a KPBW weight file")
    version, count = struct.unpack("<HI", _read(source, 6))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"weight file version {version}, expected {FORMAT_VERSION}")
    expected = list(_entries(spec))
    if count != len(expected):
        raise WeightShapeError(f"weight file has {count} tensors, {spec.name} needs {len(expected)}")
    tensors: dict = {}
    for want_name, want_shape in expected:
        (nlen,) = struct.unpack("<H", _read(source, 2))
        name = _read(source, nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", _read(source, 1))
        shape = struct.unpack(f"<{rank}I", _read(source, 4 * rank))
        if name != want_name or tuple(shape) != tuple(want_shape):
            raise WeightShapeError(f"tensor {name} {shape} does not match {want_name} {tuple(want_shape)}")
        n = int(np.prod(shape))
        arr = np.frombuffer(_read(source, 4 * n), dtype="<f4").astype(np.float32).reshape(shape)
        lname, tname = name.split("/", 1)
        tensors.setdefault(lname, {})[tname] = arr
    if source.read(1):
        raise WeightFileError("trailing bytes after last tensor")
    return Model(spec, {l: T.LayerParams(**t) for l, t in tensors.items()})


def save_weights_file(model: Model, path) -> int:
    with open(path, "wb") as fh:
        return save_weights(model, fh)


def load_weights_file(spec: ModelSpec, path) -> Model:
    with open(path, "rb") as fh:
        return load_weights(spec, fh)


def spec_from_name(name: str) -> ModelSpec:
    if name == "baseline":
        return baseline_cnn_spec()
    if name == "manual":
        return manual_cnn_spec()
    if name in ("mobilenetv2", "mobilenetv2_1"):
        return mobilenetv2_spec(1.0)
    raise ModelSpecError(f"unknown model {name!r}")


def spec_to_dict(spec: ModelSpec) -> dict:
    """JSON-friendly form of a spec; fields left at their defaults are omitted."""
    defaults = LayerSpec("relu", "_")
    layers = []
    for l in spec.layers:
        d = {"kind": l.kind, "name": l.name}
        for f in ("filters", "kernel", "stride", "padding", "use_bias", "expansion", "rate", "source"):
            v = getattr(l, f)
            if v != getattr(defaults, f):
                d[f] = v
        layers.append(d)
    return {"name": spec.name, "input_shape": list(spec.input_shape), "layers": layers}


def spec_from_dict(d: dict) -> ModelSpec:
    try:
        layers = tuple(LayerSpec(**l) for l in d["layers"])
        return ModelSpec(d["name"], tuple(d["input_shape"]), layers)
    except (KeyError, TypeError) as e:
        raise ModelSpecError(f"malformed model spec: {e}") from None
