"""MLP and TCN classifiers with entity embeddings for categorical inputs."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ContractError
from .layers import EPS, CausalConv1d, Dense, Dropout, Embedding, ReLU, causal_taps, sigmoid


def embedding_dim(cardinality, cap=50):
    return max(1, min(cap, math.ceil((cardinality + 1) / 2)))


@dataclass(frozen=True)
class MLPConfig:
    hidden: tuple = (128, 64, 32)
    dropout: float = 0.1
    embedding_cap: int = 50

    def __post_init__(self):
        if len(self.hidden) != 3 or min(self.hidden) < 1:
            raise ContractError("MLP needs exactly three hidden layers of size >= 1")


@dataclass(frozen=True)
class TCNConfig:
    channels: tuple = (32, 32, 32)
    kernel_size: int = 3
    dilations: tuple = (1, 2, 4)
    head: tuple = (64, 32, 16)
    dropout: float = 0.1
    embedding_cap: int = 50

    def __post_init__(self):
        if len(self.channels) != 3 or len(self.dilations) != 3:
            raise ContractError("TCN needs exactly three convolution blocks")
        if len(self.head) != 3 or min(self.head) < 1 or min(self.channels) < 1:
            raise ContractError("TCN head needs three layers of size >= 1")
        if self.kernel_size < 1 or min(self.dilations) < 1:
            raise ContractError("kernel size and dilations must be positive")

    @property
    def receptive_field(self):
        return 1 + (self.kernel_size - 1) * sum(self.dilations)


@dataclass(frozen=True)
class InputSpec:
    """What a model expects from a batch; derived from a FeatureSchema."""

    cardinalities: tuple
    n_cont: int
    cont_columns: tuple  # indices into the batch's continuous block
    seq_len: int = 0
    seq_channels: int = 0
    schema_hash: str = ""

    @classmethod
    def from_schema(cls, schema, include_lagged=True, use_sequence=False):
        mask = schema.continuous_mask(include_lagged)
        return cls(
            tuple(f.cardinality for f in schema.categorical),
            len(mask),
            tuple(int(i) for i in np.flatnonzero(mask)),
            schema.seq_len if use_sequence else 0,
            len(schema.seq_channels) if use_sequence else 0,
            schema.digest(),
        )

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["cardinalities"]), d["n_cont"], tuple(d["cont_columns"]),
                   d["seq_len"], d["seq_channels"], d["schema_hash"])


class Network:
    """Shared machinery: embeddings, a fully connected stack and a sigmoid output."""

    arch = None

    def __init__(self, spec, config, seed=0):
        self.spec = spec
        self.config = config
        ss = np.random.SeedSequence(seed)
        init_rng, drop_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        self.embeddings = [
            Embedding(card, embedding_dim(card, config.embedding_cap), init_rng) for card in spec.cardinalities
        ]
        self._build(init_rng, drop_rng)

    def _fc_stack(self, n_in, sizes, init_rng, drop_rng):
        layers = []
        for size in sizes:
            layers += [Dense(n_in, size, init_rng), ReLU(), Dropout(self.config.dropout, drop_rng)]
            n_in = size
        layers.append(Dense(n_in, 1, init_rng))
        return layers

    @property
    def embed_width(self):
        return sum(e.params["W"].shape[1] for e in self.embeddings)

    def named_layers(self):
        out = [(f"emb{j}", e) for j, e in enumerate(self.embeddings)]
        out += [(f"fc{j}", layer) for j, layer in enumerate(self.fc) if layer.params]
        return out

    @property
    def params(self):
        return {f"{name}.{k}": v for name, layer in self.named_layers() for k, v in layer.params.items()}

    def set_params(self, params):
        for name, layer in self.named_layers():
            for k in layer.params:
                key = f"{name}.{k}"
                if params[key].shape != layer.params[k].shape:
                    raise ContractError(f"{key}: shape {params[key].shape} != {layer.params[k].shape}")
                layer.params[k] = np.array(params[key], dtype=np.float64)

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def check_batch(self, batch):
        spec = self.spec
        if batch.cat.ndim != 2 or batch.cat.shape[1] != len(spec.cardinalities):
            raise ContractError(f"batch has {batch.cat.shape[-1]} categorical columns, model expects {len(spec.cardinalities)}")
        if batch.cont.ndim != 2 or batch.cont.shape[1] != spec.n_cont:
            raise ContractError(f"batch has {batch.cont.shape[-1]} continuous columns, model expects {spec.n_cont}")
        if len(batch.cat) != len(batch.cont):
            raise ContractError("categorical and continuous blocks differ in length")
        if len(batch.cat):
            if batch.cat.min() < 0 or np.any(batch.cat.max(axis=0) >= np.asarray(spec.cardinalities)):
                raise ContractError("categorical code outside the declared cardinality")
        if spec.seq_len:
            if batch.seq is None or batch.seq.shape[1:] != (spec.seq_len, spec.seq_channels):
                raise ContractError(f"TCN expects sequences of shape (n, {spec.seq_len}, {spec.seq_channels})")

    def _dense_input(self, batch, training):
        parts = [e.forward(batch.cat[:, j], training) for j, e in enumerate(self.embeddings)]
        cols = self.spec.cont_columns
        if cols == tuple(range(batch.cont.shape[1])):
            parts.append(batch.cont)  # all columns in order, skip the gather
        else:
            parts.append(batch.cont[:, list(cols)])
        return parts

    def logits(self, batch, training=False):
        self.check_batch(batch)
        h = self._head_input(batch, training)
        for layer in self.fc:
            h = layer.forward(h, training)
        return h[:, 0]

    def forward(self, batch, training=False):
        # saturated logits would round to exactly 0 or 1
        return np.clip(sigmoid(self.logits(batch, training)), EPS, 1.0 - EPS)

    def backward(self, dlogits, weight_decay=0.0):
        """Backpropagate ``dlogits`` (n, 1); returns gradients keyed like :attr:`params`."""
        d = dlogits
        for layer in reversed(self.fc):
            d = layer.backward(d)
        self._backward_input(d)
        grads = {}
        for name, layer in self.named_layers():
            for k, p in layer.params.items():
                g = layer.grads[k]
                grads[f"{name}.{k}"] = g + weight_decay * p if weight_decay else g
        return grads

    def _backward_embeddings(self, d):
        col = 0
        for e in self.embeddings:
            width = e.params["W"].shape[1]
            e.backward(d[:, col : col + width])
            col += width
        return col

    def predict(self, batch, chunk=8192):
        n = len(batch)
        out = np.empty(n)
        for s in range(0, n, chunk):
            sub = type(batch)(batch.cat[s : s + chunk], batch.cont[s : s + chunk],
                              None if batch.seq is None else batch.seq[s : s + chunk])
            out[s : s + chunk] = self.forward(sub, training=False)
        return out

    def describe(self):
        return {"arch": self.arch, "config": _config_dict(self.config), "input": self.spec.to_dict()}


def _config_dict(cfg):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


class MLP(Network):
    arch = "mlp"

    def _build(self, init_rng, drop_rng):
        n_in = self.embed_width + len(self.spec.cont_columns)
        self.fc = self._fc_stack(n_in, self.config.hidden, init_rng, drop_rng)
        # continuous inputs are leaves; no gradient needed past them
        self.fc[0].grad_cols = self.embed_width

    def _head_input(self, batch, training):
        return np.concatenate(self._dense_input(batch, training), axis=1)

    def _backward_input(self, d):
        self._backward_embeddings(d)


class TCN(Network):
    """Three dilated causal conv blocks over the trailing regressor sequence.

    Only the final sequence position feeds the head, so the forward pass
    evaluates each block at just the positions inside that position's
    receptive field.
    """

    arch = "tcn"

    def _build(self, init_rng, drop_rng):
        cfg = self.config
        if not self.spec.seq_len:
            raise ContractError("TCN needs a sequence input")
        c_in = self.spec.seq_channels
        self.convs = []
        for c_out, dil in zip(cfg.channels, cfg.dilations):
            self.convs.append(CausalConv1d(c_in, c_out, cfg.kernel_size, dil, init_rng))
            c_in = c_out
        self.conv_relus = [ReLU() for _ in self.convs]
        self._plan_last = self.plan([self.spec.seq_len - 1])
        n_in = cfg.channels[-1] + self.embed_width + len(self.spec.cont_columns)
        self.fc = self._fc_stack(n_in, cfg.head, init_rng, drop_rng)
        self.fc[0].grad_cols = cfg.channels[-1] + self.embed_width

    def named_layers(self):
        out = [(f"emb{j}", e) for j, e in enumerate(self.embeddings)]
        out += [(f"conv{j}", c) for j, c in enumerate(self.convs)]
        out += [(f"fc{j}", layer) for j, layer in enumerate(self.fc) if layer.params]
        return out

    def plan(self, out_positions):
        """Per-block (input positions, tap map), first block first."""
        plans = []
        positions = np.asarray(out_positions, dtype=np.int64)
        for conv in reversed(self.convs):
            in_pos, taps = causal_taps(positions, conv.kernel_size, conv.dilation)
            plans.append((in_pos, taps))
            positions = in_pos
        return plans[::-1]

    def _conv_forward(self, seq, plans, training=False):
        h = seq[:, plans[0][0], :]
        for conv, relu, (_, taps) in zip(self.convs, self.conv_relus, plans):
            h = relu.forward(conv.forward(h, taps, training), training)
        return h

    def forward_sequence(self, seq):
        """Final conv block output at every position, (n, steps, channels)."""
        seq = np.asarray(seq, dtype=np.float64)
        return self._conv_forward(seq, self.plan(np.arange(seq.shape[1])))

    def _head_input(self, batch, training):
        conv = self._conv_forward(batch.seq, self._plan_last, training)[:, -1, :]
        self._seq_shape = batch.seq.shape
        return np.concatenate([conv] + self._dense_input(batch, training), axis=1)

    def _backward_input(self, d):
        width = self.config.channels[-1]
        dh = d[:, :width][:, None, :]
        for conv, relu in zip(reversed(self.convs), reversed(self.conv_relus)):
            dh = conv.backward(relu.backward(dh))
        self._backward_embeddings(d[:, width:])


ARCHITECTURES = {"mlp": (MLP, MLPConfig), "tcn": (TCN, TCNConfig)}


def build_model(arch, schema, config=None, seed=0):
    """Model for ``schema``; the TCN takes the sequence and drops lagged rolling columns."""
    cls, cfg_cls = ARCHITECTURES[arch]
    spec = InputSpec.from_schema(schema, include_lagged=arch == "mlp", use_sequence=arch == "tcn")
    return cls(spec, config or cfg_cls(), seed)


def model_from_description(desc, seed=0):
    cls, cfg_cls = ARCHITECTURES[desc["arch"]]
    cfg = cfg_cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in desc["config"].items()})
    return cls(InputSpec.from_dict(desc["input"]), cfg, seed)
