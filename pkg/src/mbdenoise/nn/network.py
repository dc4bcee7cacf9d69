"""The five-layer DnCNN-style denoiser and its checkpoint format.

Layout: grouped 3x3 conv + ReLU -> 3 x (conv + BN + ReLU) -> linear conv
to one channel. In residual mode the network output is read as a noise
estimate that is subtracted from the target-b input channel; in direct
mode it is the denoised image itself.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from mbdenoise.nn.layers import BatchNorm2d, Conv2d, ReLU

FEATURES = 54
DEPTH = 5
MODES = ("residual", "direct")
LAYER_KINDS = ("grouped_conv_relu", "conv_bn_relu", "conv_linear")
CHECKPOINT_MAGIC = b"MBDCKPT1"


class ConfigError(ValueError):
    """Invalid network / method wiring."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    groups: int = 1
    kernel: int = 3


def layer_specs(n_inputs: int, features: int = FEATURES) -> list:
    if features % n_inputs:
        raise ConfigError(f"{features} features cannot be split into {n_inputs} equal groups")
    return (
        [LayerSpec("grouped_conv_relu", n_inputs, features, groups=n_inputs)]
        + [LayerSpec("conv_bn_relu", features, features) for _ in range(DEPTH - 2)]
        + [LayerSpec("conv_linear", features, 1)]
    )


def _build_block(spec: LayerSpec, rng, dtype):
    bias = spec.kind != "conv_bn_relu"
    conv = Conv2d(spec.in_channels, spec.out_channels, spec.groups, rng=rng, dtype=dtype, bias=bias)
    if spec.kind == "grouped_conv_relu":
        return [conv, ReLU()]
    if spec.kind == "conv_bn_relu":
        return [conv, BatchNorm2d(spec.out_channels, dtype=dtype), ReLU()]
    if spec.kind == "conv_linear":
        return [conv]
    raise ConfigError(f"unknown layer kind {spec.kind!r}")


class Network:
    """Denoising CNN wired to named b-value input channels.

    Parameters
    ----------
    input_bvalues : sequence of float
        b-value of each input channel, in channel order.
    target_bvalue : float
        b-value of the image the network predicts.
    mode : {"residual", "direct"}
    seed : int
        Seed for the weight initialization.
    input_scale : float or sequence of float
        Per-channel divisor applied to the inputs before the first layer.
    output_scale : float
        Multiplier applied to the raw last-layer output, so that the
        randomly initialized network starts at the right order of magnitude
        (noise level in residual mode, image intensity in direct mode).
    """

    def __init__(
        self,
        input_bvalues,
        target_bvalue,
        mode="residual",
        seed=0,
        dtype=np.float64,
        input_scale=1.0,
        output_scale=1.0,
        features=FEATURES,
    ):
        self.input_bvalues = tuple(float(b) for b in input_bvalues)
        self.target_bvalue = float(target_bvalue)
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not self.input_bvalues:
            raise ConfigError("network needs at least one input channel")
        if mode == "residual" and self.target_bvalue not in self.input_bvalues:
            raise ConfigError("residual mode needs the target b-value among the inputs")
        self.mode = mode
        self.dtype = np.dtype(dtype)
        self.input_scale = np.broadcast_to(np.asarray(input_scale, dtype=np.float64), (len(self.input_bvalues),)).copy()
        self.output_scale = float(output_scale)
        if np.any(self.input_scale <= 0) or self.output_scale <= 0:
            raise ConfigError("scales must be positive")
        self.features = int(features)
        self.specs = layer_specs(len(self.input_bvalues), self.features)
        rng = np.random.default_rng(seed)
        self.blocks = [_build_block(s, rng, self.dtype) for s in self.specs]

    @property
    def target_index(self) -> int:
        return self.input_bvalues.index(self.target_bvalue)

    def layers(self):
        for block in self.blocks:
            yield from block

    def named_parameters(self):
        for bi, block in enumerate(self.blocks):
            for li, layer in enumerate(block):
                for key in sorted(layer.params):
                    yield f"{bi}.{li}.{key}", layer, key

    def parameters(self) -> list:
        return [layer.params[key] for _, layer, key in self.named_parameters()]

    def gradients(self) -> list:
        return [layer.grads[key] for _, layer, key in self.named_parameters()]

    def state(self) -> dict:
        """All parameters and BN running statistics, copied."""
        out = {}
        for bi, block in enumerate(self.blocks):
            for li, layer in enumerate(block):
                for key, val in layer.params.items():
                    out[f"{bi}.{li}.{key}"] = val.copy()
                if isinstance(layer, BatchNorm2d):
                    out[f"{bi}.{li}.running_mean"] = layer.running_mean.copy()
                    out[f"{bi}.{li}.running_var"] = layer.running_var.copy()
        return out

    def load_state(self, state: dict) -> None:
        for bi, block in enumerate(self.blocks):
            for li, layer in enumerate(block):
                for key in layer.params:
                    layer.params[key] = np.array(state[f"{bi}.{li}.{key}"], dtype=self.dtype).reshape(layer.params[key].shape)
                if isinstance(layer, BatchNorm2d):
                    layer.running_mean = np.array(state[f"{bi}.{li}.running_mean"], dtype=self.dtype)
                    layer.running_var = np.array(state[f"{bi}.{li}.running_var"], dtype=self.dtype)

    def _raw(self, x, train):
        h = x
        for layer in self.layers():
            h = layer.forward(h, train=train)
        return h

    def _check_input(self, x):
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != len(self.input_bvalues):
            raise ConfigError(f"expected input (B, {len(self.input_bvalues)}, H, W), got {x.shape}")
        return x

    def noise_and_output(self, x, train=False):
        """Raw estimate (scaled to intensity units) and final output, both (B, 1, H, W)."""
        x = self._check_input(x)
        h = (x.transpose(0, 2, 3, 1) / self.input_scale).astype(self.dtype, copy=False)
        est = self._raw(h, train).transpose(0, 3, 1, 2) * self.output_scale
        if self.mode == "residual":
            xt = x[:, self.target_index : self.target_index + 1].astype(self.dtype, copy=False)
            return est, xt - est
        return est, est

    def forward(self, x, train=False):
        return self.noise_and_output(x, train)[1]

    def backward(self, dout):
        """Back-propagate dL/d(output) (B, 1, H, W); fills every layer's grads."""
        d = np.asarray(dout, dtype=self.dtype).transpose(0, 2, 3, 1) * self.output_scale
        if self.mode == "residual":
            d = -d
        for layer in reversed(list(self.layers())):
            d = layer.backward(d)
        return d

    def predict(self, x, batch_size=8):
        """Inference-mode forward in batches (BN uses running statistics)."""
        x = self._check_input(x)
        out = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    def describe(self) -> dict:
        return {
            "layers": [asdict(s) for s in self.specs],
            "input_bvalues": list(self.input_bvalues),
            "target_bvalue": self.target_bvalue,
            "mode": self.mode,
            "input_scale": self.input_scale.tolist(),
            "output_scale": self.output_scale,
            "features": self.features,
        }


def save_checkpoint(net: Network, path) -> None:
    """Magic, little-endian u64 header length, JSON header, raw f32 blocks."""
    state = net.state()
    blocks, offset = [], 0
    for name, arr in state.items():
        blocks.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4
    header = dict(net.describe(), format="mbdenoise-checkpoint", version=1, dtype="f32le", blocks=blocks)
    hbytes = json.dumps(header).encode()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for arr in state.values():
            fh.write(np.asarray(arr, dtype="<f4").tobytes())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n))


def load_checkpoint(path, dtype=np.float64) -> Network:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing checkpoint {p}")
    header = read_checkpoint_header(p)
    net = Network(
        header["input_bvalues"],
        header["target_bvalue"],
        header["mode"],
        dtype=dtype,
        input_scale=header["input_scale"],
        output_scale=header["output_scale"],
        features=header["features"],
    )
    specs = [LayerSpec(**s) for s in header["layers"]]
    if specs != net.specs:
        raise ConfigError("checkpoint layer specs do not match the rebuilt network")
    with open(p, "rb") as fh:
        fh.seek(len(CHECKPOINT_MAGIC))
        (n,) = struct.unpack("<Q", fh.read(8))
        fh.seek(len(CHECKPOINT_MAGIC) + 8 + n)
        raw = fh.read()
    state = {}
    for blk in header["blocks"]:
        count = int(np.prod(blk["shape"])) if blk["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=blk["offset"])
        state[blk["name"]] = arr.reshape(blk["shape"])
    net.load_state(state)
    return net
