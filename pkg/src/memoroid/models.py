"""Linear Transformer, S5, LRU and FFM written as memoroids.

Parameters are small dataclasses of torch tensors.  All lifts, combines and
readouts broadcast over leading axes, so the same definition serves a single
element, a ``(T, d_o)`` sequence or a ``(T, B, d_o)`` batch of sequences.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .core import MemoroidDefinition, PartialTransition
from .scan import AssociativeOperator

__all__ = [
    "NumericalDegeneracyError",
    "LinAttnParams",
    "S5Params",
    "LRUParams",
    "FFMParams",
    "linattn_memoroid",
    "s5_memoroid",
    "lru_memoroid",
    "ffm_memoroid",
    "init_params",
    "build_memoroid",
    "MODEL_KINDS",
    "save_tensors",
    "load_tensors",
    "save_checkpoint",
    "load_checkpoint",
]

DENOM_EPS = 1e-8


class NumericalDegeneracyError(ArithmeticError):
    pass


def phi(z):
    return 1.0 + F.elu(z)


def gelu(z):
    return F.gelu(z, approximate="tanh")


def mlp(x, W1, b1, W2, b2):
    return F.linear(F.leaky_relu(F.linear(x, W1, b1)), W2, b2)


def _uniform(gen, shape, scale, dtype):
    return (torch.rand(shape, generator=gen, dtype=dtype) * 2.0 - 1.0) * scale


def _linear_init(gen, out_dim, in_dim, dtype):
    s = 1.0 / math.sqrt(in_dim)
    return _uniform(gen, (out_dim, in_dim), s, dtype), _uniform(gen, (out_dim,), s, dtype)


class _Params:
    """Mixin giving dataclass params a flat name -> tensor view."""

    def tensors(self) -> dict[str, torch.Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}

    @classmethod
    def from_tensors(cls, tensors: dict[str, torch.Tensor]):
        return cls(**{f.name: tensors.get(f.name) for f in fields(cls)})


# --- Linear Transformer -------------------------------------------------------

@dataclass
class LinAttnParams(_Params):
    W_k: torch.Tensor  # (j, d_o)
    W_v: torch.Tensor  # (d_o, d_o); value width must equal d_o for the skip term
    W_q: torch.Tensor  # (j, d_o)
    mlp_W1: torch.Tensor | None = None
    mlp_b1: torch.Tensor | None = None
    mlp_W2: torch.Tensor | None = None
    mlp_b2: torch.Tensor | None = None

    @classmethod
    def init(cls, gen, d_o, j, d_s, hidden=None, dtype=torch.float64):
        hidden = hidden or d_s
        s = 1.0 / math.sqrt(d_o)
        W1, b1 = _linear_init(gen, hidden, d_o, dtype)
        W2, b2 = _linear_init(gen, d_s, hidden, dtype)
        return cls(
            W_k=_uniform(gen, (j, d_o), s, dtype),
            W_v=_uniform(gen, (d_o, d_o), s, dtype),
            W_q=_uniform(gen, (j, d_o), s, dtype),
            mlp_W1=W1, mlp_b1=b1, mlp_W2=W2, mlp_b2=b2,
        )


def _add(x, y):
    return tuple(a + b for a, b in zip(x, y))


def linattn_memoroid(params: LinAttnParams, residual: bool = True) -> MemoroidDefinition:
    """Outer-product accumulator ``(X, x)`` under elementwise addition.

    Without MLP weights the readout is the raw normalised attention output.
    """
    j, d_o = params.W_k.shape
    k = params.W_v.shape[0]
    dtype = params.W_k.dtype
    identity = (torch.zeros(j, k, dtype=dtype), torch.zeros(j, dtype=dtype))

    def lift(p: PartialTransition):
        key = phi(F.linear(p.o, params.W_k))
        value = F.linear(p.o, params.W_v)
        return key.unsqueeze(-1) * value.unsqueeze(-2), key

    def readout(h, p: PartialTransition):
        X, x = h
        q = phi(F.linear(p.o, params.W_q))
        num = torch.einsum("...jk,...j->...k", X, q)
        den = (x * q).sum(-1)
        if bool((den < DENOM_EPS).any()):
            raise NumericalDegeneracyError("attention normaliser below 1e-8; readout of an empty state?")
        z = num / den.unsqueeze(-1)
        if residual:
            z = z + p.o
        if params.mlp_W1 is None:
            return z
        return mlp(z, params.mlp_W1, params.mlp_b1, params.mlp_W2, params.mlp_b2)

    return MemoroidDefinition(AssociativeOperator(identity, _add), lift, readout)


# --- diagonal linear recurrences (S5, LRU) --------------------------------------

def _complex(re, im):
    return torch.complex(re, im)


def _diag_combine(x, y):
    X, h = x
    Y, g = y
    return Y * X, Y * h + g


def _dense_combine(x, y):
    X, h = x
    Y, g = y
    return Y @ X, (Y @ h.unsqueeze(-1)).squeeze(-1) + g


def _diag_recurrence(W_X, W_x, dense: bool):
    """Monoid and lift shared by S5 and LRU: ``x_t = diag(W_X) x_{t-1} + W_x o_t``."""
    m = W_X.shape[0]
    if dense:
        identity = (torch.eye(m, dtype=W_X.dtype), torch.zeros(m, dtype=W_X.dtype))
        combine = _dense_combine
    else:
        identity = (torch.ones(m, dtype=W_X.dtype), torch.zeros(m, dtype=W_X.dtype))
        combine = _diag_combine

    def lift(p: PartialTransition):
        drive = p.o.to(W_x.dtype) @ W_x.transpose(-1, -2)
        trans = torch.diag(W_X) if dense else W_X
        return trans.expand(drive.shape[:-1] + trans.shape), drive

    return AssociativeOperator(identity, combine), lift


def _sample_eigenvalues(gen, m, r_min, r_max, dtype, ring: bool):
    u1 = torch.rand(m, generator=gen, dtype=dtype)
    u2 = torch.rand(m, generator=gen, dtype=dtype)
    if ring:
        # uniform over the annulus area
        mag = torch.sqrt(u1 * (r_max ** 2 - r_min ** 2) + r_min ** 2)
    else:
        mag = r_min + u1 * (r_max - r_min)
    phase = 2.0 * math.pi * u2
    return mag * torch.cos(phase), mag * torch.sin(phase)


@dataclass
class S5Params(_Params):
    W_X_re: torch.Tensor  # (m,)
    W_X_im: torch.Tensor
    W_x_re: torch.Tensor  # (m, d_o)
    W_x_im: torch.Tensor
    W_c: torch.Tensor  # (h, m)
    W_1: torch.Tensor  # (d_s, h)
    b_1: torch.Tensor
    W_2: torch.Tensor
    b_2: torch.Tensor

    @classmethod
    def init(cls, gen, d_o, m, d_s, hidden=None, dtype=torch.float64, r_min=0.4, r_max=0.99):
        hidden = hidden or d_s
        re, im = _sample_eigenvalues(gen, m, r_min, r_max, dtype, ring=False)
        s = 1.0 / math.sqrt(d_o)
        W_c, _ = _linear_init(gen, hidden, m, dtype)
        W_1, b_1 = _linear_init(gen, d_s, hidden, dtype)
        W_2, b_2 = _linear_init(gen, d_s, hidden, dtype)
        return cls(
            W_X_re=re, W_X_im=im,
            W_x_re=_uniform(gen, (m, d_o), s, dtype), W_x_im=_uniform(gen, (m, d_o), s, dtype),
            W_c=W_c, W_1=W_1, b_1=b_1, W_2=W_2, b_2=b_2,
        )


def s5_memoroid(params: S5Params, dense: bool = False) -> MemoroidDefinition:
    """Diagonal S5.  ``dense=True`` stores the transition as a full matrix
    (reference variant for small ``m``)."""
    W_X = _complex(params.W_X_re, params.W_X_im)
    W_x = _complex(params.W_x_re, params.W_x_im)
    monoid, lift = _diag_recurrence(W_X, W_x, dense)

    def readout(h, p: PartialTransition):
        u = gelu(F.linear(h[1].real, params.W_c))
        return F.linear(u, params.W_1, params.b_1) * torch.sigmoid(F.linear(u, params.W_2, params.b_2))

    return MemoroidDefinition(monoid, lift, readout)


@dataclass
class LRUParams(_Params):
    W_X_re: torch.Tensor
    W_X_im: torch.Tensor
    W_x_re: torch.Tensor
    W_x_im: torch.Tensor
    mlp_W1: torch.Tensor  # (h, 2m)
    mlp_b1: torch.Tensor
    mlp_W2: torch.Tensor  # (d_s, h)
    mlp_b2: torch.Tensor

    @classmethod
    def init(cls, gen, d_o, m, d_s, hidden=None, dtype=torch.float64, r_min=0.4, r_max=0.99):
        hidden = hidden or d_s
        re, im = _sample_eigenvalues(gen, m, r_min, r_max, dtype, ring=True)
        # input normalisation sqrt(1 - |lambda|^2) keeps the state variance bounded
        gamma = torch.sqrt(1.0 - (re ** 2 + im ** 2)).unsqueeze(-1)
        scale = 1.0 / math.sqrt(2 * d_o)
        W_x_re = torch.randn((m, d_o), generator=gen, dtype=dtype) * scale * gamma
        W_x_im = torch.randn((m, d_o), generator=gen, dtype=dtype) * scale * gamma
        W1, b1 = _linear_init(gen, hidden, 2 * m, dtype)
        W2, b2 = _linear_init(gen, d_s, hidden, dtype)
        return cls(re, im, W_x_re, W_x_im, W1, b1, W2, b2)


def lru_memoroid(params: LRUParams, dense: bool = False) -> MemoroidDefinition:
    W_X = _complex(params.W_X_re, params.W_X_im)
    W_x = _complex(params.W_x_re, params.W_x_im)
    monoid, lift = _diag_recurrence(W_X, W_x, dense)

    def readout(h, p: PartialTransition):
        x = h[1]
        return mlp(torch.cat([x.real, x.imag], dim=-1), params.mlp_W1, params.mlp_b1, params.mlp_W2, params.mlp_b2)

    return MemoroidDefinition(monoid, lift, readout)


# --- Fast and Forgetful Memory --------------------------------------------------

@dataclass
class FFMParams(_Params):
    alpha: torch.Tensor  # (m,) decay rates, > 0
    omega: torch.Tensor  # (c,) frequencies
    W_1: torch.Tensor  # (m, d_o)
    b_1: torch.Tensor
    W_2: torch.Tensor  # (m, d_o)
    b_2: torch.Tensor
    W_3: torch.Tensor  # (d_o, 2 m c)
    b_3: torch.Tensor
    mlp_W1: torch.Tensor  # (d_o, d_o)
    mlp_b1: torch.Tensor
    mlp_W2: torch.Tensor
    mlp_b2: torch.Tensor
    W_4: torch.Tensor  # (d_o, d_o)
    b_4: torch.Tensor

    @classmethod
    def init(cls, gen, d_o, m, c, dtype=torch.float64, alpha_range=(0.01, 1.0)):
        lo, hi = (math.log(a) for a in alpha_range)
        alpha = torch.exp(lo + (hi - lo) * torch.rand(m, generator=gen, dtype=dtype))
        omega = torch.linspace(0.0, math.pi, c, dtype=dtype)
        W_1, b_1 = _linear_init(gen, m, d_o, dtype)
        W_2, b_2 = _linear_init(gen, m, d_o, dtype)
        W_3, b_3 = _linear_init(gen, d_o, 2 * m * c, dtype)
        mW1, mb1 = _linear_init(gen, d_o, d_o, dtype)
        mW2, mb2 = _linear_init(gen, d_o, d_o, dtype)
        W_4, b_4 = _linear_init(gen, d_o, d_o, dtype)
        return cls(alpha, omega, W_1, b_1, W_2, b_2, W_3, b_3, mW1, mb1, mW2, mb2, W_4, b_4)


class _FFMCombine:
    def __init__(self, rate):
        self.rate = rate  # (m, c) complex: -|alpha| (+) i omega

    def __call__(self, x, y):
        X, t = x
        Y, u = y
        decay = torch.exp(u.unsqueeze(-1).unsqueeze(-1) * self.rate)
        return X * decay + Y, t + u


def ffm_decay_rate(alpha, omega):
    """``-|alpha| (+) i omega`` as an ``(m, c)`` complex matrix."""
    return _complex(-alpha.abs().unsqueeze(-1).expand(-1, omega.shape[0]),
                    omega.unsqueeze(0).expand(alpha.shape[0], -1))


def ffm_memoroid(params: FFMParams) -> MemoroidDefinition:
    """Trace ``X`` (m x c, complex) and element count ``t``.

    Combining decays the left trace by ``exp(t' (-|alpha| + i omega))``, so no
    factor with modulus above one is ever formed.
    """
    if not bool((params.alpha > 0).all()):
        raise ValueError("FFM decay rates alpha must be strictly positive")
    m, c = params.alpha.shape[0], params.omega.shape[0]
    rate = ffm_decay_rate(params.alpha, params.omega)
    cdtype = rate.dtype
    rdtype = params.alpha.dtype
    identity = (torch.zeros(m, c, dtype=cdtype), torch.zeros((), dtype=rdtype))

    def lift(p: PartialTransition):
        gate = F.linear(p.o, params.W_1, params.b_1) * torch.sigmoid(F.linear(p.o, params.W_2, params.b_2))
        X = gate.unsqueeze(-1).expand(gate.shape + (c,)).to(cdtype)
        return X, torch.ones(gate.shape[:-1], dtype=rdtype)

    def readout(h, p: PartialTransition):
        X = h[0]
        flat = torch.cat([X.real.flatten(-2), X.imag.flatten(-2)], dim=-1)
        z = F.linear(flat, params.W_3, params.b_3)
        z = F.layer_norm(z, z.shape[-1:])
        z = mlp(z, params.mlp_W1, params.mlp_b1, params.mlp_W2, params.mlp_b2)
        gate = torch.sigmoid(F.linear(p.o, params.W_4, params.b_4))
        return z * gate + (1.0 - gate) * p.o

    return MemoroidDefinition(AssociativeOperator(identity, _FFMCombine(rate)), lift, readout)


# --- registry ------------------------------------------------------------------

MODEL_KINDS = ("linattn", "s5", "lru", "ffm")


def init_params(kind: str, gen: torch.Generator, d_o: int, m: int = 16, c: int = 4,
                d_s: int | None = None, dtype=torch.float64):
    """Fresh parameters for one model kind.  FFM's Markov state width is ``d_o``."""
    d_s = d_s or d_o
    if kind == "linattn":
        return LinAttnParams.init(gen, d_o, m, d_s, dtype=dtype)
    if kind == "s5":
        return S5Params.init(gen, d_o, m, d_s, dtype=dtype)
    if kind == "lru":
        return LRUParams.init(gen, d_o, m, d_s, dtype=dtype)
    if kind == "ffm":
        return FFMParams.init(gen, d_o, m, c, dtype=dtype)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


_PARAM_TYPES = {"linattn": LinAttnParams, "s5": S5Params, "lru": LRUParams, "ffm": FFMParams}
_BUILDERS = {"linattn": linattn_memoroid, "s5": s5_memoroid, "lru": lru_memoroid, "ffm": ffm_memoroid}


def params_type(kind: str):
    return _PARAM_TYPES[kind]


def build_memoroid(kind: str, tensors: dict[str, torch.Tensor]) -> MemoroidDefinition:
    """Memoroid for ``kind`` from a flat dict of named tensors.

    FFM receives ``|alpha|``: the trainable tensor is free to change sign, only
    its magnitude acts as a decay rate.
    """
    params = _PARAM_TYPES[kind].from_tensors(tensors)
    if kind == "ffm":
        params.alpha = params.alpha.abs()
    return _BUILDERS[kind](params)


# --- persistence -----------------------------------------------------------------
#
# Tensor container, all integers little-endian:
#   magic  b"MMRD"  | u32 version (1) | u32 count
#   per tensor: u32 name_len | name (utf-8) | u32 ndim | u64 * ndim shape
#               | float64 payload (row-major, little-endian)

_MAGIC = b"MMRD"
_VERSION = 1


def save_tensors(path, tensors: dict[str, torch.Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(tensors)))
        for name in sorted(tensors):
            t = tensors[name].detach().to(torch.float64).contiguous()
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}Q", *t.shape))
            fh.write(t.numpy().astype("<f8").tobytes())


def load_tensors(path) -> dict[str, torch.Tensor]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a tensor container")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = math.prod(shape)
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        out[name] = torch.from_numpy(arr.copy())
    return out


def save_checkpoint(path, tensors: dict[str, torch.Tensor], metadata: dict) -> None:
    """Write ``<path>`` (tensor container) and ``<path>.json`` (metadata)."""
    path = Path(path)
    save_tensors(path, tensors)
    path.with_name(path.name + ".json").write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path):
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    return load_tensors(path), meta
