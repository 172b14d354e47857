"""Reference encoder + task heads, and the online/momentum parameter state."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import Sequential, forward, mlp
from .tensor import Tensor

# ImageNet statistics, applied to [0, 1] pixels before the encoder
PIXEL_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
PIXEL_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class ArchConfig:
    in_dim: int = 32 * 32 * 3
    enc_hidden: tuple = (256, 128)
    feat_dim: int = 64
    jig_hidden: int = 128
    trav_hidden: int = 32
    ins_hidden: int = 64
    proj_dim: int = 32
    num_jigsaw: int = 27

    def to_dict(self):
        d = asdict(self)
        d["enc_hidden"] = list(self.enc_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["enc_hidden"] = tuple(d["enc_hidden"])
        return cls(**d)


class Model:
    """Online encoder and the three heads; ``ins`` stops before L2 normalization."""

    def __init__(self, arch: ArchConfig, rng, dtype=np.float32):
        self.arch = arch
        self.enc = mlp([arch.in_dim, *arch.enc_hidden, arch.feat_dim], rng, dtype, name="enc")
        self.jig = mlp([2 * arch.feat_dim, arch.jig_hidden, arch.num_jigsaw], rng, dtype, name="jig")
        self.trav = mlp([arch.feat_dim, arch.trav_hidden, 1], rng, dtype, name="trav")
        self.ins = mlp([arch.feat_dim, arch.ins_hidden, arch.proj_dim], rng, dtype, name="ins")

    @property
    def modules(self) -> dict[str, Sequential]:
        return {"enc": self.enc, "jig": self.jig, "trav": self.trav, "ins": self.ins}

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for m in self.modules.values():
            out.update(m.named_parameters())
        return out


def _frozen_copy(seq: Sequential, dims, dtype, name):
    copy = mlp(dims, None, dtype, name=name)
    for src, dst in zip(seq.parameters(), copy.parameters()):
        dst.data = src.data.copy()
        dst.requires_grad = False
    return copy


class EncoderState:
    """Online parameters (theta), momentum copies of enc/ins (theta_hat), and SGD velocities."""

    def __init__(self, arch: ArchConfig, seed: int, dtype=np.float32):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.model = Model(arch, rng, dtype)
        self.momentum_enc = _frozen_copy(
            self.model.enc, [arch.in_dim, *arch.enc_hidden, arch.feat_dim], dtype, "enc")
        self.momentum_ins = _frozen_copy(
            self.model.ins, [arch.feat_dim, arch.ins_hidden, arch.proj_dim], dtype, "ins")
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.theta.items()}

    @property
    def theta(self) -> dict[str, Tensor]:
        return self.model.named_parameters()

    @property
    def theta_hat(self) -> dict[str, Tensor]:
        out = dict(self.momentum_enc.named_parameters())
        out.update(self.momentum_ins.named_parameters())
        return out

    def encode(self, x, record=True):
        return forward(self.model.enc, x, record)

    def encode_momentum(self, x):
        return forward(self.momentum_enc, x, record=False)

    def project_momentum(self, x):
        return forward(self.momentum_ins, self.encode_momentum(x), record=False)

    def zero_grad(self):
        for p in self.theta.values():
            p.grad = None

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every array that defines the state, in a stable order (for checkpoints)."""
        out = [(f"theta/{k}", p.data) for k, p in self.theta.items()]
        out += [(f"theta_hat/{k}", p.data) for k, p in self.theta_hat.items()]
        out += [(f"velocity/{k}", v) for k, v in self.velocity.items()]
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for k, p in self.theta.items():
            p.data = _checked(arrays, f"theta/{k}", p.data)
        for k, p in self.theta_hat.items():
            p.data = _checked(arrays, f"theta_hat/{k}", p.data)
        for k, v in list(self.velocity.items()):
            self.velocity[k] = _checked(arrays, f"velocity/{k}", v)


def _checked(arrays, key, like):
    if key not in arrays:
        raise ValueError(f"checkpoint is missing tensor {key!r}")
    arr = arrays[key]
    if arr.shape != like.shape:
        raise ValueError(f"tensor {key!r} has shape {arr.shape}, expected {like.shape}")
    return arr.astype(like.dtype, copy=True)


def preprocess(pixels, dtype=np.float32) -> np.ndarray:
    """(N, H, W, 3) images in [0, 1] -> normalized, flattened (N, H*W*3) rows."""
    x = (np.asarray(pixels, dtype=dtype) - PIXEL_MEAN.astype(dtype)) / PIXEL_STD.astype(dtype)
    return x.reshape(x.shape[0], -1)
