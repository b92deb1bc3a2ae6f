"""Parameter containers with name-keyed deterministic initialization.

Parameters are created as zeros carrying an init spec; ``initialize``
fills each one from an RNG keyed by (seed, crc32(parameter name)). Keying
by name means two model variants that share a submodule initialize the
shared weights identically, regardless of what else either model
contains.
"""

from __future__ import annotations

import zlib

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    """A trainable tensor plus the recipe for filling it.

    Deterministic specs (zeros/ones/const) are applied at construction, so
    a freshly built module already satisfies its identity contracts;
    random specs stay zero until :meth:`Module.initialize` runs.
    """

    __slots__ = ("init_spec",)

    _DETERMINISTIC = ("zeros", "ones", "const")

    def __init__(self, shape, init=("zeros",), dtype=DEFAULT_DTYPE):
        super().__init__(np.zeros(shape, dtype=np.dtype(dtype)), requires_grad=True)
        self.init_spec = init
        if init[0] in self._DETERMINISTIC:
            _fill(self, None)


def _fill(param: Parameter, rng: np.random.Generator | None) -> None:
    kind, *args = param.init_spec
    shape = param.shape
    if kind == "zeros":
        values = np.zeros(shape)
    elif kind == "ones":
        values = np.ones(shape)
    elif kind == "const":
        values = np.broadcast_to(np.asarray(args[0], dtype=np.float64), shape)
    elif kind == "fan_in":
        bound = 1.0 / np.sqrt(args[0])
        values = rng.uniform(-bound, bound, shape)
    elif kind == "normal":
        values = rng.normal(0.0, args[0], shape)
    elif kind == "step_bias":
        # Bias such that softplus(bias) is log-uniform in [lo, hi]; keeps
        # discretization steps small and positive at the start.
        lo, hi = args
        dt = np.exp(rng.uniform(np.log(lo), np.log(hi), shape))
        values = dt + np.log(-np.expm1(-dt))
    else:
        raise ValueError(f"unknown parameter init {kind!r}")
    param.data[...] = np.asarray(values, dtype=param.dtype)


class Module:
    """Tree of parameters addressable by dotted names."""

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        out[f"{name}.{i}"] = item
                    elif isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def initialize(self, seed: int) -> None:
        """Fill every parameter deterministically from (seed, name)."""
        for name, param in self.named_parameters().items():
            key = zlib.crc32(name.encode("utf-8"))
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))
            _fill(param, rng)

    def zero_grads(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters())
