"""Vector-field model: a pointwise linear operator plus a FiLM-conditioned FNO.

The learned field H(tau, w, a) = L(w) + N(tau, w, a) where L mixes channels
pointwise (exactly linear in w) and N is a Fourier neural operator whose
layers are modulated channel-wise by features of the conditioning input a
and the flow time tau.  Parameters are independent of grid resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .grid import Domain, GridFunction


@dataclass(frozen=True)
class FilmFnoConfig:
    n_layers: int = 4
    hidden_channels: int = 64
    modes_per_axis: tuple[int, ...] = (16,)
    lifting_ratio: int = 4
    projection_ratio: int = 4
    cond_width: int = 64
    cond_depth: int = 3

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "hidden_channels": self.hidden_channels,
            "modes_per_axis": list(self.modes_per_axis),
            "lifting_ratio": self.lifting_ratio,
            "projection_ratio": self.projection_ratio,
            "cond_width": self.cond_width,
            "cond_depth": self.cond_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilmFnoConfig":
        d = dict(d)
        d["modes_per_axis"] = tuple(d["modes_per_axis"])
        return cls(**d)


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_out, fan_in))


class VectorFieldModel:
    """H(tau, w, a) with trainable parameters held as named autodiff tensors."""

    def __init__(self, config: FilmFnoConfig, w_channels: int, a_channels: int,
                 ndim: int, rng_seed: int = 0,
                 periodic: tuple[bool, ...] | None = None):
        if len(config.modes_per_axis) != ndim:
            raise ValueError("modes_per_axis rank must match the field dimension")
        self.config = config
        self.w_channels = w_channels
        self.a_channels = a_channels
        self.ndim = ndim
        self.periodic = tuple(periodic) if periodic is not None else (False,) * ndim
        if len(self.periodic) != ndim:
            raise ValueError("periodic flags rank must match the field dimension")
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(rng_seed))

    # channel recipe: [w, a, tau, coordinate embedding].  Periodic axes use a
    # (cos, sin) pair so the embedding stays band-limited and continuous
    # across the wrap-around; non-periodic axes use the coordinate in [0, 1].
    @property
    def coord_channels(self) -> int:
        return sum(2 if p else 1 for p in self.periodic)

    @property
    def in_channels(self) -> int:
        return self.w_channels + self.a_channels + 1 + self.coord_channels

    def _add(self, name: str, values: np.ndarray) -> Tensor:
        t = Tensor(values, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _init_params(self, rng: np.random.Generator):
        cfg = self.config
        hidden = cfg.hidden_channels
        lift_mid = hidden * cfg.lifting_ratio
        proj_mid = hidden * cfg.projection_ratio
        self._add("linear.weight", _glorot(rng, self.w_channels, self.w_channels))
        self._add("lift1.weight", _glorot(rng, lift_mid, self.in_channels))
        self._add("lift1.bias", np.zeros(lift_mid))
        self._add("lift2.weight", _glorot(rng, hidden, lift_mid))
        self._add("lift2.bias", np.zeros(hidden))
        spec_scale = 1.0 / (hidden * hidden)
        for k in range(cfg.n_layers):
            shape = ad.spectral_weight_shape(hidden, hidden, cfg.modes_per_axis)
            self._add(f"layer{k}.spectral", spec_scale * rng.uniform(-1.0, 1.0, size=shape))
            self._add(f"layer{k}.skip.weight", _glorot(rng, hidden, hidden))
            self._add(f"layer{k}.skip.bias", np.zeros(hidden))
        self._add("proj1.weight", _glorot(rng, proj_mid, hidden))
        self._add("proj1.bias", np.zeros(proj_mid))
        self._add("proj2.weight", _glorot(rng, self.w_channels, proj_mid))
        self._add("proj2.bias", np.zeros(self.w_channels))
        self._add("cond.lift.weight", _glorot(rng, hidden, self.a_channels))
        self._add("cond.lift.bias", np.zeros(hidden))
        width = cfg.cond_width
        fan_in = hidden + 1
        for j in range(cfg.cond_depth):
            self._add(f"cond.mlp{j}.weight", _glorot(rng, width, fan_in))
            self._add(f"cond.mlp{j}.bias", np.zeros(width))
            fan_in = width
        for k in range(cfg.n_layers):
            # Zero-initialized heads give identity FiLM (s=1, b=0) at the start.
            self._add(f"cond.head{k}.weight", np.zeros((2 * hidden, width)))
            self._add(f"cond.head{k}.bias", np.zeros(2 * hidden))

    def parameter_count(self) -> int:
        return sum(int(p.values.size) for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # -- forward ------------------------------------------------------------
    def _coordinate_channels(self, batch: int, domain: Domain, shape) -> np.ndarray:
        axes = []
        for i, (n, periodic) in enumerate(zip(shape, domain.periodic)):
            view = [1] * len(shape)
            view[i] = n
            if periodic:
                theta = 2.0 * np.pi * np.arange(n) / n
                axes.append(np.broadcast_to(np.cos(theta).reshape(view), shape))
                axes.append(np.broadcast_to(np.sin(theta).reshape(view), shape))
            else:
                r = np.linspace(0.0, 1.0, n)
                axes.append(np.broadcast_to(r.reshape(view), shape))
        coords = np.stack(axes)  # (coord_channels, *shape)
        return np.broadcast_to(coords[None], (batch,) + coords.shape)

    def _film_coeffs(self, tau: np.ndarray, a: np.ndarray) -> list[tuple[Tensor, Tensor]]:
        """Per-layer (scale, shift) from pooled conditioning features and tau."""
        cfg = self.config
        hidden = cfg.hidden_channels
        a_t = Tensor(a)
        lifted = ad.linear_channels(a_t, self.params["cond.lift.weight"],
                                    self.params["cond.lift.bias"])
        pooled = ad.tmean(lifted, axis=tuple(range(2, 2 + self.ndim)))  # (B, hidden)
        h = ad.concat([pooled, Tensor(tau[:, None])], axis=1)
        for j in range(cfg.cond_depth):
            h = ad.silu(ad.dense(h, self.params[f"cond.mlp{j}.weight"],
                                 self.params[f"cond.mlp{j}.bias"]))
        coeffs = []
        for k in range(cfg.n_layers):
            head = ad.dense(h, self.params[f"cond.head{k}.weight"],
                            self.params[f"cond.head{k}.bias"])
            bshape = (-1, hidden) + (1,) * self.ndim
            scale = ad.reshape(ad.add(1.0, head_slice(head, 0, hidden)), bshape)
            shift = ad.reshape(head_slice(head, hidden, 2 * hidden), bshape)
            coeffs.append((scale, shift))
        return coeffs

    def forward(self, tau, w, a, domain: Domain) -> Tensor:
        """Batched evaluation: tau (B,), w (B, Cw, *S), a (B, Ca, *S)."""
        w_t = w if isinstance(w, Tensor) else Tensor(np.asarray(w))
        a = np.asarray(a, dtype=np.float64)
        batch = w_t.values.shape[0]
        shape = w_t.values.shape[2:]
        if any(n < 2 for n in shape):
            raise ValueError(f"resolution below 2 per axis: {shape}")
        if tuple(domain.periodic) != self.periodic:
            raise ValueError("domain periodicity does not match the model")
        tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (batch,))
        cfg = self.config

        coords = self._coordinate_channels(batch, domain, shape)
        tau_channel = np.broadcast_to(
            tau.reshape((batch, 1) + (1,) * self.ndim), (batch, 1) + shape
        )
        x = ad.concat([w_t, Tensor(a), Tensor(tau_channel), Tensor(coords)], axis=1)
        h = ad.silu(ad.linear_channels(x, self.params["lift1.weight"],
                                       self.params["lift1.bias"]))
        h = ad.linear_channels(h, self.params["lift2.weight"], self.params["lift2.bias"])
        film = self._film_coeffs(tau, a)
        for k in range(cfg.n_layers):
            spec = ad.spectral_conv(h, self.params[f"layer{k}.spectral"],
                                    cfg.modes_per_axis)
            skip = ad.linear_channels(h, self.params[f"layer{k}.skip.weight"],
                                      self.params[f"layer{k}.skip.bias"])
            h = ad.silu(ad.add(spec, skip))
            scale, shift = film[k]
            h = ad.add(ad.mul(scale, h), shift)
        h = ad.silu(ad.linear_channels(h, self.params["proj1.weight"],
                                       self.params["proj1.bias"]))
        nonlinear = ad.linear_channels(h, self.params["proj2.weight"],
                                       self.params["proj2.bias"])
        linear = ad.linear_channels(w_t, self.params["linear.weight"])
        return ad.add(linear, nonlinear)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]):
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r} in checkpoint")
            if arrays[name].shape != p.values.shape:
                raise ValueError(f"shape mismatch for {name!r}")
            p.values = np.ascontiguousarray(arrays[name], dtype=np.float64)


def head_slice(t: Tensor, lo: int, hi: int) -> Tensor:
    """Column slice of a (batch, features) tensor."""
    out = Tensor(t.values[:, lo:hi], _parents=(t,))

    def backward(g):
        if t.requires_grad:
            full = np.zeros_like(t.values)
            full[:, lo:hi] = g
            t._accumulate(full)

    out._backward = backward
    return out


def model_forward(model: VectorFieldModel, tau: float, w: GridFunction,
                  a: GridFunction) -> GridFunction:
    """Single-sample inference wrapper over grid functions."""
    if w.shape != a.shape:
        raise ValueError("w and a must be evaluated on the same grid")
    with ad.no_grad():
        out = model.forward(np.array([tau]), w.values[None], a.values[None], w.domain)
    return GridFunction(w.domain, w.shape, model.w_channels, out.values[0])
