"""Small conv policy/value network in numpy with hand-written backprop.

Architecture (input 2x24x24 maps + 32 aux values)::

    maps -> conv 3x3/2 (16) -> relu -> conv 3x3/2 (32) -> relu -> flatten (1152)
         -> dense 128 -> relu ─┐
    aux  -> dense 32  -> relu ─┴> concat (160) -> dense 128 -> relu -> {policy 3, value 1}

Convolutions use padding 1 and run as im2col matmuls on channel-last
tensors. Parameters live in a plain ordered ``dict`` of arrays.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Params = dict[str, np.ndarray]

N_ACTIONS = 3
CHECKPOINT_MAGIC = b"GXCKPT 1\n"


def param_shapes(map_shape: tuple[int, int, int] = (2, 24, 24), aux_dim: int = 32) -> dict[str, tuple[int, ...]]:
    c, h, w = map_shape
    h2, w2 = _conv_out(_conv_out(h)), _conv_out(_conv_out(w))
    return {
        "conv1_w": (c, 3, 3, 16),
        "conv1_b": (16,),
        "conv2_w": (16, 3, 3, 32),
        "conv2_b": (32,),
        "map_fc_w": (32 * h2 * w2, 128),
        "map_fc_b": (128,),
        "aux_fc_w": (aux_dim, 32),
        "aux_fc_b": (32,),
        "trunk_w": (160, 128),
        "trunk_b": (128,),
        "pi_w": (128, N_ACTIONS),
        "pi_b": (N_ACTIONS,),
        "v_w": (128, 1),
        "v_b": (1,),
    }


def _conv_out(n: int) -> int:
    return (n + 2 - 3) // 2 + 1


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


def init_params(rng: np.random.Generator | int, map_shape=(2, 24, 24), aux_dim: int = 32) -> Params:
    """Orthogonal weights (gain sqrt 2 hidden, 0.01 policy, 1 value), zero biases."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    gains = {"pi_w": 0.01, "v_w": 1.0}
    params: Params = {}
    for name, shape in param_shapes(map_shape, aux_dim).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            w = _orthogonal(rng, fan_in, shape[-1], gains.get(name, np.sqrt(2.0)))
            params[name] = w.reshape(shape)
    return params


def param_count(params: Params) -> int:
    return sum(p.size for p in params.values())


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """x is (B, H, W, C); returns (output (B, Ho, Wo, O), im2col matrix)."""
    n = x.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::2, ::2]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.reshape(n * ho * wo, -1)
    out = cols @ w.reshape(-1, w.shape[-1]) + b
    return out.reshape(n, ho, wo, -1), cols


def _conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, in_shape: tuple[int, ...], need_dx: bool):
    n, ho, wo, o = dout.shape
    d2 = dout.reshape(-1, o)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return dw, db, None
    _, h, wd, c = in_shape
    dcols = (d2 @ w.reshape(-1, o).T).reshape(n, ho, wo, c, 3, 3)
    dxp = np.zeros((n, h + 2, wd + 2, c), dtype=dout.dtype)
    for kh in range(3):
        for kw in range(3):
            dxp[:, kh : kh + 2 * ho - 1 : 2, kw : kw + 2 * wo - 1 : 2, :] += dcols[..., kh, kw]
    return dw, db, dxp[:, 1:-1, 1:-1, :]


class Cache(NamedTuple):
    x: np.ndarray
    cols1: np.ndarray
    h1: np.ndarray
    cols2: np.ndarray
    h2: np.ndarray
    flat: np.ndarray
    m: np.ndarray
    aux: np.ndarray
    a: np.ndarray
    z: np.ndarray
    t: np.ndarray


def forward(params: Params, maps: np.ndarray, aux: np.ndarray) -> tuple[np.ndarray, np.ndarray, Cache]:
    """Batch forward pass: ``maps`` (B, 2, H, W), ``aux`` (B, A) -> (logits (B, 3), values (B,), cache)."""
    maps = np.asarray(maps)
    aux = np.asarray(aux, dtype=params["aux_fc_w"].dtype)
    expected = param_shapes((params["conv1_w"].shape[0], *maps.shape[2:]), params["aux_fc_w"].shape[0])
    if maps.ndim != 4 or aux.ndim != 2 or maps.shape[0] != aux.shape[0]:
        raise ValueError(f"bad batch shapes maps={maps.shape} aux={aux.shape}")
    if expected["map_fc_w"] != params["map_fc_w"].shape or aux.shape[1] != params["aux_fc_w"].shape[0]:
        raise ValueError(f"observation shape {maps.shape[1:]}/{aux.shape[1:]} does not match the network")
    x = np.ascontiguousarray(maps.transpose(0, 2, 3, 1), dtype=params["conv1_w"].dtype)
    o1, cols1 = _conv_forward(x, params["conv1_w"], params["conv1_b"])
    h1 = np.maximum(o1, 0.0)
    o2, cols2 = _conv_forward(h1, params["conv2_w"], params["conv2_b"])
    h2 = np.maximum(o2, 0.0)
    flat = h2.reshape(h2.shape[0], -1)
    m = np.maximum(flat @ params["map_fc_w"] + params["map_fc_b"], 0.0)
    a = np.maximum(aux @ params["aux_fc_w"] + params["aux_fc_b"], 0.0)
    z = np.concatenate([m, a], axis=1)
    t = np.maximum(z @ params["trunk_w"] + params["trunk_b"], 0.0)
    logits = t @ params["pi_w"] + params["pi_b"]
    values = (t @ params["v_w"] + params["v_b"])[:, 0]
    return logits, values, Cache(x, cols1, h1, cols2, h2, flat, m, aux, a, z, t)


def backward(params: Params, cache: Cache, dlogits: np.ndarray, dvalues: np.ndarray) -> Params:
    """Gradients of a scalar loss given its gradients w.r.t. the logits and values."""
    g: Params = {}
    t = cache.t
    g["pi_w"] = t.T @ dlogits
    g["pi_b"] = dlogits.sum(axis=0)
    dv = dvalues[:, None]
    g["v_w"] = t.T @ dv
    g["v_b"] = dv.sum(axis=0)
    dt = dlogits @ params["pi_w"].T + dv @ params["v_w"].T
    dt = dt * (t > 0)
    g["trunk_w"] = cache.z.T @ dt
    g["trunk_b"] = dt.sum(axis=0)
    dz = dt @ params["trunk_w"].T
    n_map = cache.m.shape[1]
    dm = dz[:, :n_map] * (cache.m > 0)
    da = dz[:, n_map:] * (cache.a > 0)
    g["aux_fc_w"] = cache.aux.T @ da
    g["aux_fc_b"] = da.sum(axis=0)
    g["map_fc_w"] = cache.flat.T @ dm
    g["map_fc_b"] = dm.sum(axis=0)
    dh2 = (dm @ params["map_fc_w"].T).reshape(cache.h2.shape) * (cache.h2 > 0)
    g["conv2_w"], g["conv2_b"], dh1 = _conv_backward(dh2, cache.cols2, params["conv2_w"], cache.h1.shape, True)
    dh1 = dh1 * (cache.h1 > 0)
    g["conv1_w"], g["conv1_b"], _ = _conv_backward(dh1, cache.cols1, params["conv1_w"], cache.x.shape, False)
    return {k: g[k] for k in params}


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class Categorical:
    """Batch of categorical distributions parameterised by logits (last axis)."""

    def __init__(self, logits: np.ndarray):
        self.logits = np.atleast_2d(np.asarray(logits, dtype=float))
        self.log_probs = log_softmax(self.logits)
        self.probs = np.exp(self.log_probs)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.probs.shape[0])
        cdf = np.cumsum(self.probs, axis=-1)
        idx = (u[:, None] >= cdf).sum(axis=-1)
        return np.minimum(idx, self.probs.shape[-1] - 1)

    def log_prob(self, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=int).reshape(-1)
        return self.log_probs[np.arange(actions.size), actions]

    def entropy(self) -> np.ndarray:
        return -(self.probs * self.log_probs).sum(axis=-1)

    def mode(self) -> np.ndarray:
        return self.logits.argmax(axis=-1)

    def grad_log_prob(self, actions: np.ndarray) -> np.ndarray:
        """d log_prob(actions) / d logits, per row."""
        g = -self.probs.copy()
        g[np.arange(len(g)), np.asarray(actions, dtype=int)] += 1.0
        return g

    def grad_entropy(self) -> np.ndarray:
        h = self.entropy()[:, None]
        return -self.probs * (self.log_probs + h)


def save_checkpoint(params: Params, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(params))


def checkpoint_bytes(params: Params) -> bytes:
    header = [CHECKPOINT_MAGIC]
    body = []
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        shape = ",".join(str(d) for d in arr.shape)
        header.append(f"{name} {dt.str} {shape}\n".encode())
        body.append(arr.astype(dt, copy=False).tobytes())
    header.append(b"END\n")
    return b"".join(header + body)


def load_checkpoint(path) -> Params:
    with open(path, "rb") as f:
        data = f.read()
    return parse_checkpoint(data)


def parse_checkpoint(data: bytes) -> Params:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    specs = []
    while True:
        end = data.index(b"\n", pos)
        line = data[pos:end].decode()
        pos = end + 1
        if line == "END":
            break
        name, dt, shape = line.split(" ")
        specs.append((name, np.dtype(dt), tuple(int(d) for d in shape.split(",") if d)))
    params: Params = {}
    for name, dt, shape in specs:
        n = int(np.prod(shape)) * dt.itemsize
        params[name] = np.frombuffer(data[pos : pos + n], dtype=dt).reshape(shape).copy()
        pos += n
    if pos != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return params
