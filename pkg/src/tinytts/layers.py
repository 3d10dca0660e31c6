"""Parameter-holding layers assembled into the synthesis model.

Weights initialize uniform(-s, s) with s = 1/sqrt(fan_in); biases start at
zero, layer-norm at gamma=1/beta=0, embeddings normal scaled by 1/sqrt(d).
Construction order fixes the random draw order, so one seed reproduces the
same parameters bit for bit.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Rng, Tensor


class Module:
    """Base with recursive, insertion-ordered parameter discovery."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _uniform_init(rng: Rng, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape, dtype=dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: Rng, dtype=np.float32):
        self.weight = _uniform_init(rng, (in_dim, out_dim), in_dim, dtype)
        self.bias = _zeros((out_dim,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: Rng,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_ch // groups) * kernel
        self.weight = _uniform_init(rng, (out_ch, in_ch // groups, kernel), fan_in, dtype)
        self.bias = _zeros((out_ch,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, groups=self.groups)


class ConvTranspose1d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: Rng,
                 stride: int = 1, dtype=np.float32):
        self.stride = stride
        self.weight = _uniform_init(rng, (in_ch, out_ch, kernel), in_ch * kernel, dtype)
        self.bias = _zeros((out_ch,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d_transpose(x, self.weight, self.bias, stride=self.stride)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = _zeros((dim,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Embedding(Module):
    def __init__(self, vocab: int, dim: int, rng: Rng, dtype=np.float32):
        self.table = Tensor(rng.normal((vocab, dim), std=1.0 / math.sqrt(dim), dtype=dtype),
                            requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return T.embedding(self.table, ids)


class SelfAttention(Module):
    """Multi-head scaled dot-product attention; projections carry no bias."""

    def __init__(self, dim: int, heads: int, rng: Rng, dtype=np.float32):
        self.heads = heads
        self.wq = _uniform_init(rng, (dim, dim), dim, dtype)
        self.wk = _uniform_init(rng, (dim, dim), dim, dtype)
        self.wv = _uniform_init(rng, (dim, dim), dim, dtype)
        self.wo = _uniform_init(rng, (dim, dim), dim, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.self_attention(x, self.wq, self.wk, self.wv, self.wo,
                                n_heads=self.heads)


class DepthwiseSeparableConv(Module):
    """Per-channel convolution followed by a 1x1 pointwise mix."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: Rng,
                 stride: int = 1, dtype=np.float32):
        padding = (kernel - 1) // 2
        self.depthwise = Conv1d(in_ch, in_ch, kernel, rng, stride=stride,
                                padding=padding, groups=in_ch, dtype=dtype)
        self.pointwise = Conv1d(in_ch, out_ch, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x))


class MixFFN(Module):
    """linear(c -> e*c) -> depthwise conv -> GeLU -> linear(e*c -> c).

    The interior depthwise convolution supplies order information, which is
    why the encoder needs no positional encodings.
    """

    def __init__(self, dim: int, expansion: int, kernel: int, rng: Rng,
                 dtype=np.float32):
        hidden = dim * expansion
        self.lin_in = Linear(dim, hidden, rng, dtype=dtype)
        self.conv = Conv1d(hidden, hidden, kernel, rng, padding=(kernel - 1) // 2,
                           groups=hidden, dtype=dtype)
        self.lin_out = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.lin_in(x)
        h = T.transpose(self.conv(T.transpose(h)))
        return self.lin_out(T.gelu(h))


class TransformerBlock(Module):
    """Feature merging, self-attention, and Mix-FFN with residuals.

    The depthwise-separable merge maps (L, in_dim) to (L_out, out_dim) where
    L_out follows the conv stride; attention and Mix-FFN then keep the shape.
    Layer norm is applied after each residual sum.
    """

    def __init__(self, in_dim: int, out_dim: int, kernel: int, stride: int,
                 heads: int, ffn_expansion: int, rng: Rng, dtype=np.float32):
        self.merge = DepthwiseSeparableConv(in_dim, out_dim, kernel, rng,
                                            stride=stride, dtype=dtype)
        self.attention = SelfAttention(out_dim, heads, rng, dtype=dtype)
        self.norm_attn = LayerNorm(out_dim, dtype=dtype)
        self.ffn = MixFFN(out_dim, ffn_expansion, kernel, rng, dtype=dtype)
        self.norm_ffn = LayerNorm(out_dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        merged = T.transpose(self.merge(T.transpose(x)))
        attended = self.norm_attn(T.add(merged, self.attention(merged)))
        return self.norm_ffn(T.add(attended, self.ffn(attended)))


class ConvLayerNormRelu(Module):
    def __init__(self, dim: int, kernel: int, rng: Rng, dtype=np.float32):
        self.conv = Conv1d(dim, dim, kernel, rng, padding=(kernel - 1) // 2,
                           dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.transpose(self.conv(T.transpose(x)))
        return T.relu(self.norm(h))


class AcousticHead(Module):
    """Two Conv-LN-ReLU blocks and a final linear projection to one scalar
    per position. The hidden state before the projection doubles as the
    reusable feature for fusion."""

    def __init__(self, dim: int, kernel: int, rng: Rng, dtype=np.float32):
        self.block1 = ConvLayerNormRelu(dim, kernel, rng, dtype=dtype)
        self.block2 = ConvLayerNormRelu(dim, kernel, rng, dtype=dtype)
        self.out = Linear(dim, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        hidden = self.block2(self.block1(x))
        values = T.reshape(self.out(hidden), (hidden.shape[0],))
        return values, hidden


class DecoderBlock(Module):
    """linear -> Tanh -> LN -> DWSepConv -> Tanh -> LN -> DWSepConv -> Tanh -> LN."""

    def __init__(self, dim: int, kernel: int, rng: Rng, dtype=np.float32):
        self.lin = Linear(dim, dim, rng, dtype=dtype)
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.conv1 = DepthwiseSeparableConv(dim, dim, kernel, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.conv2 = DepthwiseSeparableConv(dim, dim, kernel, rng, dtype=dtype)
        self.norm3 = LayerNorm(dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(T.tanh(self.lin(x)))
        h = self.norm2(T.tanh(T.transpose(self.conv1(T.transpose(h)))))
        return self.norm3(T.tanh(T.transpose(self.conv2(T.transpose(h)))))
