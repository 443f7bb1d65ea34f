"""Network building blocks on top of the autodiff core: linear layers,
tanh MLPs, single-head attention and softplus variance heads."""

import math

import numpy as np

from .. import autodiff as ad

VAR_FLOOR = 1e-6


class Linear:
    def __init__(self, n_in, n_out, rng=None, zero_init=False):
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            bound = math.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.w = ad.Tensor(w)
        self.b = ad.Tensor(np.zeros(n_out))

    def __call__(self, x):
        return ad.affine(x, self.w, self.b)

    def params(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class MLP:
    """Linear stack with tanh between layers (none after the last)."""

    def __init__(self, sizes, rng, zero_init_last=False):
        self.layers = []
        for i in range(len(sizes) - 1):
            last = i == len(sizes) - 2
            self.layers.append(
                Linear(sizes[i], sizes[i + 1], rng, zero_init=zero_init_last and last)
            )

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.tanh(x)
        return x

    def params(self, prefix):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.{i}"))
        return out


class SelfAttention:
    """Single-head scaled dot-product attention across set elements, with
    a residual connection so the block stays permutation-equivariant."""

    def __init__(self, dim, key_dim, rng):
        self.q = Linear(dim, key_dim, rng)
        self.k = Linear(dim, key_dim, rng)
        self.v = Linear(dim, dim, rng)
        self._scale = 1.0 / math.sqrt(key_dim)

    def __call__(self, reps):
        scores = ad.scale(ad.matmul(self.q(reps), ad.swap_last2(self.k(reps))), self._scale)
        attended = ad.matmul(ad.softmax(scores), self.v(reps))
        return ad.add(attended, reps)

    def params(self, prefix):
        out = {}
        out.update(self.q.params(f"{prefix}.q"))
        out.update(self.k.params(f"{prefix}.k"))
        out.update(self.v.params(f"{prefix}.v"))
        return out


class CrossAttention:
    """Queries attend over embedded context inputs; values are the
    per-element context representations."""

    def __init__(self, key_in, query_in, key_dim, rng):
        self.key_embed = Linear(key_in, key_dim, rng)
        self.query_embed = Linear(query_in, key_dim, rng)
        self._scale = 1.0 / math.sqrt(key_dim)

    def embed_queries(self, queries):
        return ad.tanh(self.query_embed(queries))

    def __call__(self, keys_raw, values, queries_embedded):
        k = ad.tanh(self.key_embed(keys_raw))
        scores = ad.scale(ad.matmul(queries_embedded, ad.swap_last2(k)), self._scale)
        return ad.matmul(ad.softmax(scores), values)

    def params(self, prefix):
        out = {}
        out.update(self.key_embed.params(f"{prefix}.key"))
        out.update(self.query_embed.params(f"{prefix}.query"))
        return out


class GaussianHead:
    """Mean-offset and variance head; the offset head starts at zero so an
    untrained decoder reproduces its conditioning prior exactly."""

    def __init__(self, n_in, n_out, rng, var_floor=VAR_FLOOR):
        self.offset = Linear(n_in, n_out, rng, zero_init=True)
        self.raw_var = Linear(n_in, n_out, rng, zero_init=True)
        self.var_floor = var_floor

    def __call__(self, trunk, prior):
        mu = ad.add(prior, self.offset(trunk))
        var = ad.add(ad.softplus(self.raw_var(trunk)), self.var_floor)
        return mu, var

    def params(self, prefix):
        out = {}
        out.update(self.offset.params(f"{prefix}.offset"))
        out.update(self.raw_var.params(f"{prefix}.var"))
        return out


class GaussianParamHead:
    """Mean and softplus variance for latent distributions."""

    def __init__(self, n_in, n_out, rng, var_floor=VAR_FLOOR):
        self.mu = Linear(n_in, n_out, rng)
        self.raw_var = Linear(n_in, n_out, rng)
        self.var_floor = var_floor

    def __call__(self, trunk):
        return self.mu(trunk), ad.add(ad.softplus(self.raw_var(trunk)), self.var_floor)

    def params(self, prefix):
        out = {}
        out.update(self.mu.params(f"{prefix}.mu"))
        out.update(self.raw_var.params(f"{prefix}.var"))
        return out
