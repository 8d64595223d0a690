"""Differentiable forward surrogate: (topology graph, parameters) -> 16 metrics.

Edges are embedded by type-specific encoders, refined by four rounds of
edge-centric message passing with one shared message/update net pair, sum
pooled into a graph vector, and decoded by an output MLP. Because every
edge feature is affine in the unit-scaled parameter vector (diffusion
areas included), each topology is precompiled into constant + affine
feature maps; this serves both minibatch training and the gradient-based
inference that later reuses the frozen model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import (Tensor, concat, index_select, load_weights, no_grad,
                       save_weights, scatter_add)
from .dataset import Record, metric_arrays, stratified_split
from .graph import BoundGraph, CircuitGraph
from .nn import MLP, load_mlp_params, snapshot, restore
from .optim import Adam, PlateauScheduler
from .perf import METRICS, N_METRICS, NormStats, mean_relative_error
from .topology import TopologyRegistry, TopologySpec

EMBED_DIM = 64
N_ROUNDS = 4
MSG_HIDDEN = 64
OUT_HIDDEN = 256

# feature layout per edge type: listed attribute keys, then the 3-slot
# source-kind one-hot (dc, ac, none) appended to every type
ETYPE_FEATURES: dict[str, tuple[str, ...]] = {
    "nmos_DG": ("W", "L", "Ad", "As"),
    "nmos_DS": ("W", "L", "Ad", "As"),
    "nmos_GS": ("W", "L", "Ad", "As"),
    "pmos_DG": ("W", "L", "Ad", "As"),
    "pmos_DS": ("W", "L", "Ad", "As"),
    "pmos_GS": ("W", "L", "Ad", "As"),
    "resistor": ("R",),
    "capacitor": ("C",),
    "inductor": ("L",),
    "varactor": ("W",),
    "vsource": ("V",),
    "isource": ("I",),
}

ONEHOT = ("dc", "ac", "none")

# expected-unit rescaling keyed by attribute; "L" is channel length on MOS
# edges (width-like) and inductance elsewhere
UNIT_SCALES = {"R": 1e3, "C": 1e-13, "W": 1e-6, "V": 1.0, "I": 1e-3,
               "Ad": 1e-13, "As": 1e-13, "L": 1e-10}


def unit_scale(etype: str, key: str) -> float:
    if key == "L" and (etype.startswith("nmos") or etype.startswith("pmos")):
        return 1e-6
    return UNIT_SCALES[key]


def rescale_inputs(attrs: dict[str, float], etype: str) -> dict[str, float]:
    """Divide SI attribute values by their expected unit scales."""
    return {k: v / unit_scale(etype, k) for k, v in attrs.items()}


@dataclass
class TopologyEncoding:
    """Precompiled feature maps and connectivity for one topology.

    For every edge type t the scaled feature matrix factors as
    ``const[t] + (x_scaled @ affine[t]).reshape(E_t, F_t)`` where x_scaled
    is the unit-scaled parameter vector.
    """

    code: str
    param_names: tuple[str, ...]
    etypes: list[str]
    keys: dict[str, tuple[str, ...]]
    const: dict[str, np.ndarray]
    affine: dict[str, np.ndarray]
    uv: dict[str, np.ndarray]
    n_nodes: int

    @property
    def n_edges(self) -> int:
        return sum(m.shape[0] for m in self.uv.values())


def encode_topology(graph: CircuitGraph, spec: TopologySpec,
                    schema: dict[str, tuple[str, ...]] | None = None) -> TopologyEncoding:
    schema = schema or ETYPE_FEATURES
    node_index = graph.node_index
    param_names = spec.param_names
    param_pos = {n: i for i, n in enumerate(param_names)}
    param_scale = {p.name: p.scale for p in spec.parameters}
    groups: dict[str, list[int]] = {}
    for i, e in enumerate(graph.edges):
        groups.setdefault(e.etype, []).append(i)

    etypes = sorted(groups)
    keys: dict[str, tuple[str, ...]] = {}
    const: dict[str, np.ndarray] = {}
    affine: dict[str, np.ndarray] = {}
    uv: dict[str, np.ndarray] = {}
    for etype in etypes:
        if etype not in schema:
            raise KeyError(f"no feature schema for edge type {etype!r}")
        ekeys = schema[etype]
        idxs = groups[etype]
        n_feat = len(ekeys) + len(ONEHOT)
        c = np.zeros((len(idxs), n_feat))
        a = np.zeros((len(param_names), len(idxs) * n_feat))
        pairs = np.zeros((len(idxs), 2), dtype=np.intp)
        for row, edge_idx in enumerate(idxs):
            edge = graph.edges[edge_idx]
            pairs[row] = (node_index[edge.endpoints[0]], node_index[edge.endpoints[1]])
            c[row, len(ekeys) + ONEHOT.index(edge.onehot)] = 1.0
            for col, key in enumerate(ekeys):
                scale = unit_scale(etype, key)
                flat = row * n_feat + col
                if key in edge.numeric:
                    c[row, col] = edge.numeric[key] / scale
                elif key in edge.parametric:
                    sym = edge.parametric[key]
                    a[param_pos[sym], flat] = param_scale[sym] / scale
                elif key in edge.computed:
                    base, mult = edge.computed[key]
                    if base in edge.numeric:
                        c[row, col] = edge.numeric[base] * mult / scale
                    else:
                        sym = edge.parametric[base]
                        a[param_pos[sym], flat] = param_scale[sym] * mult / scale
                else:
                    raise KeyError(
                        f"edge {edge.label} ({etype}) lacks schema attribute {key!r}")
        keys[etype] = ekeys
        const[etype] = c
        affine[etype] = a
        uv[etype] = pairs
    return TopologyEncoding(
        code=graph.topology_id, param_names=param_names, etypes=etypes,
        keys=keys, const=const, affine=affine, uv=uv, n_nodes=len(graph.nodes))


@dataclass
class GraphBatch:
    """Disjoint union of graphs ready for one forward pass."""

    etypes: list[str]
    feats: dict[str, Tensor]
    u_idx: np.ndarray
    v_idx: np.ndarray
    edge_graph: np.ndarray
    n_nodes: int
    n_graphs: int


def build_batch(blocks: list[tuple[TopologyEncoding, np.ndarray]]) -> GraphBatch:
    """Assemble a batch from (encoding, x_scaled matrix) blocks.

    Sample order is block-major: all samples of the first block, then the
    next. Returns constant-feature tensors (no gradient to parameters).
    """
    etypes = sorted({t for enc, _ in blocks for t in enc.etypes})
    feat_parts: dict[str, list[np.ndarray]] = {t: [] for t in etypes}
    uv_parts: dict[str, list[np.ndarray]] = {t: [] for t in etypes}
    eg_parts: dict[str, list[np.ndarray]] = {t: [] for t in etypes}
    node_base = 0
    sample_base = 0
    for enc, xs in blocks:
        b = xs.shape[0]
        for t in enc.etypes:
            n_t, n_feat = enc.const[t].shape
            flat = xs @ enc.affine[t]  # (b, E_t * F_t)
            feats = flat.reshape(b * n_t, n_feat) + np.tile(enc.const[t], (b, 1))
            feat_parts[t].append(feats)
            offs = node_base + enc.n_nodes * np.arange(b, dtype=np.intp)
            uv = enc.uv[t][None, :, :] + offs[:, None, None]
            uv_parts[t].append(uv.reshape(b * n_t, 2))
            eg_parts[t].append(np.repeat(sample_base + np.arange(b, dtype=np.intp), n_t))
        node_base += enc.n_nodes * b
        sample_base += b
    feats = {t: Tensor(np.concatenate(feat_parts[t])) for t in etypes if feat_parts[t]}
    uv_all = np.concatenate([np.concatenate(uv_parts[t]) for t in etypes])
    edge_graph = np.concatenate([np.concatenate(eg_parts[t]) for t in etypes])
    return GraphBatch(etypes=etypes, feats=feats, u_idx=uv_all[:, 0],
                      v_idx=uv_all[:, 1], edge_graph=edge_graph,
                      n_nodes=node_base, n_graphs=sample_base)


def batch_from_tensor(enc: TopologyEncoding, x: Tensor) -> GraphBatch:
    """Single-graph batch whose features carry gradients back to ``x``."""
    row = x.reshape(1, x.size)
    feats = {}
    for t in enc.etypes:
        n_t, n_feat = enc.const[t].shape
        flat = row @ Tensor(enc.affine[t])
        feats[t] = flat.reshape(n_t, n_feat) + Tensor(enc.const[t])
    uv = np.concatenate([enc.uv[t] for t in enc.etypes])
    edge_graph = np.zeros(uv.shape[0], dtype=np.intp)
    return GraphBatch(etypes=enc.etypes, feats=feats, u_idx=uv[:, 0],
                      v_idx=uv[:, 1], edge_graph=edge_graph,
                      n_nodes=enc.n_nodes, n_graphs=1)


class ForwardModel:
    def __init__(self, schema: dict[str, tuple[str, ...]] | None = None,
                 embed_dim: int = EMBED_DIM, rounds: int = N_ROUNDS,
                 seed: int = 0, target_stats: NormStats | None = None):
        self.schema = dict(schema or ETYPE_FEATURES)
        self.embed_dim = embed_dim
        self.rounds = rounds
        self.target_stats = target_stats
        rng = np.random.default_rng(seed)
        self.encoders = {
            t: MLP([len(keys) + len(ONEHOT), MSG_HIDDEN, embed_dim], rng)
            for t, keys in sorted(self.schema.items())
        }
        # one shared message/update pair reused at every round
        self.msg_net = MLP([embed_dim, MSG_HIDDEN, embed_dim], rng)
        self.upd_net = MLP([3 * embed_dim, MSG_HIDDEN, embed_dim], rng)
        self.out_net = MLP([embed_dim, OUT_HIDDEN, N_METRICS], rng)

    # -- parameter plumbing ------------------------------------------------

    def trunk_params(self) -> list[Tensor]:
        out = []
        for t in sorted(self.encoders):
            out.extend(self.encoders[t].params())
        out.extend(self.msg_net.params())
        out.extend(self.upd_net.params())
        return out

    def head_params(self) -> list[Tensor]:
        return self.out_net.params()

    def params(self) -> list[Tensor]:
        return self.trunk_params() + self.head_params()

    def named_params(self) -> dict[str, Tensor]:
        named = {}
        for t, enc in self.encoders.items():
            named.update(enc.named_params(f"enc.{t}"))
        named.update(self.msg_net.named_params("msg"))
        named.update(self.upd_net.named_params("upd"))
        named.update(self.out_net.named_params("out"))
        return named

    # -- forward -----------------------------------------------------------

    def encode_edges(self, batch: GraphBatch) -> Tensor:
        parts = []
        for t in batch.etypes:
            if t not in self.encoders:
                raise KeyError(f"no encoder for edge type {t!r}")
            parts.append(self.encoders[t](batch.feats[t]))
        return concat(parts, axis=0) if len(parts) > 1 else parts[0]

    def message_pass(self, embeddings: Tensor, batch: GraphBatch) -> Tensor:
        e = embeddings
        for _ in range(self.rounds):
            msgs = self.msg_net(e)
            # undirected: each incident edge contributes to both endpoints
            h = (scatter_add(msgs, batch.u_idx, batch.n_nodes)
                 + scatter_add(msgs, batch.v_idx, batch.n_nodes))
            hu = index_select(h, batch.u_idx)
            hv = index_select(h, batch.v_idx)
            # endpoint-order-invariant pairing of the two node states
            e = self.upd_net(concat([e, hu + hv, (hu - hv).abs()], axis=1))
        return e

    def forward(self, batch: GraphBatch) -> Tensor:
        e = self.message_pass(self.encode_edges(batch), batch)
        z = scatter_add(e, batch.edge_graph, batch.n_graphs)
        return self.out_net(z)

    def predict(self, bound: BoundGraph, spec: TopologySpec) -> np.ndarray:
        """Normalized 16-vector for one bound graph (mask comes from the spec)."""
        enc = encode_topology(bound.graph, spec, self.schema)
        x = np.array([bound.values[n] / s
                      for n, s in zip(spec.param_names, spec.scales())])
        with no_grad():
            out = self.forward(build_batch([(enc, x[None, :])]))
        return out.data[0]

    # -- persistence ---------------------------------------------------------

    def save(self, stem: str | Path) -> None:
        stem = Path(stem)
        save_weights(stem.with_suffix(".weights.json"), self.named_params())
        meta = {
            "schema": {t: list(k) for t, k in sorted(self.schema.items())},
            "embed_dim": self.embed_dim,
            "rounds": self.rounds,
            "unit_scales": UNIT_SCALES,
            "stats": self.target_stats.to_dict() if self.target_stats else None,
        }
        stem.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, stem: str | Path) -> "ForwardModel":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".meta.json").read_text())
        stats = NormStats.from_dict(meta["stats"]) if meta["stats"] else None
        model = cls(schema={t: tuple(k) for t, k in meta["schema"].items()},
                    embed_dim=meta["embed_dim"], rounds=meta["rounds"],
                    target_stats=stats)
        named = load_weights(stem.with_suffix(".weights.json"))
        for t, enc in model.encoders.items():
            load_mlp_params(enc, named, f"enc.{t}")
        load_mlp_params(model.msg_net, named, "msg")
        load_mlp_params(model.upd_net, named, "upd")
        load_mlp_params(model.out_net, named, "out")
        return model


def masked_mse(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error over mask-selected slots (pooled over the batch)."""
    mask = np.asarray(mask, dtype=np.float64)
    total = mask.sum()
    if total == 0:
        raise ValueError("masked_mse requires at least one unmasked entry")
    diff = pred - Tensor(np.asarray(target, dtype=np.float64))
    return (diff * diff * Tensor(mask)).sum() * (1.0 / total)


# -- training ------------------------------------------------------------------


def _scaled_params(records: list[Record], spec: TopologySpec) -> np.ndarray:
    scales = spec.scales()
    out = np.zeros((len(records), len(spec.param_names)))
    for i, rec in enumerate(records):
        out[i] = [rec.params[n] for n in spec.param_names]
    return out / scales


def _group_by_code(records: list[Record]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        groups.setdefault(rec.topology_id, []).append(i)
    return groups


class _EvalSet:
    """Records preprocessed into block-batched arrays for repeated eval."""

    def __init__(self, records: list[Record], encodings: dict[str, TopologyEncoding],
                 specs: dict[str, TopologySpec], stats: NormStats):
        values, masks = metric_arrays(records)
        groups = _group_by_code(records)
        order = [i for code in sorted(groups) for i in groups[code]]
        self.values = values[order]
        self.masks = masks[order]
        self.z = stats.normalize_array(self.values, self.masks)
        self.blocks = []
        for code in sorted(groups):
            idxs = groups[code]
            xs = _scaled_params([records[i] for i in idxs], specs[code])
            self.blocks.append((encodings[code], xs))

    def predict(self, model: ForwardModel, chunk: int = 1024) -> np.ndarray:
        preds = []
        with no_grad():
            for enc, xs in self.blocks:
                for start in range(0, xs.shape[0], chunk):
                    batch = build_batch([(enc, xs[start:start + chunk])])
                    preds.append(model.forward(batch).data)
        return np.concatenate(preds)

    def loss(self, model: ForwardModel) -> float:
        pred = self.predict(model)
        err = ((pred - self.z) ** 2 * self.masks).sum() / self.masks.sum()
        return float(err)


def regression_report(pred_raw: np.ndarray, values: np.ndarray,
                      masks: np.ndarray) -> dict:
    """Per-metric R2 / RMSE / MAE / mean relative error plus overall figures."""
    per_metric = {}
    r2s = []
    for j, name in enumerate(METRICS):
        sel = masks[:, j] > 0
        if not sel.any():
            continue
        p, y = pred_raw[sel, j], values[sel, j]
        ss_res = float(((p - y) ** 2).sum())
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r2 = None if ss_tot == 0 else 1.0 - ss_res / ss_tot
        if r2 is not None:
            r2s.append(r2)
        per_metric[name] = {
            "r2": r2,
            "rmse": float(np.sqrt(((p - y) ** 2).mean())),
            "mae": float(np.abs(p - y).mean()),
            "rel_err": float(np.mean(np.abs(p - y) / np.maximum(np.abs(y), 1e-12))),
        }
    inst = [mean_relative_error(pred_raw[i], values[i], masks[i])
            for i in range(values.shape[0]) if masks[i].any()]
    return {
        "per_metric": per_metric,
        "mean_r2": float(np.mean(r2s)) if r2s else None,
        "overall_mean_rel_err": float(np.mean(inst)),
        "n_samples": int(values.shape[0]),
    }


def train_forward(records: list[Record], registry: TopologyRegistry,
                  seed: int = 42, epochs: int = 400, batch_size: int = 256,
                  lr: float = 1e-3, patience: int = 30, ratios=(0.8, 0.1, 0.1),
                  log=None) -> tuple[ForwardModel, dict]:
    """Adam + plateau scheduling on the pooled masked MSE, early stopping on
    validation loss; returns the model and a test-split regression report."""
    train, val, test = stratified_split(records, ratios=ratios, seed=seed)
    codes = sorted({r.topology_id for r in records})
    specs = {c: registry.get(c) for c in codes}
    encodings = {c: encode_topology(specs[c].build_graph(), specs[c]) for c in codes}

    values, masks = metric_arrays(train)
    stats = NormStats.fit(values, masks, on_zero_std="one")
    model = ForwardModel(seed=seed, target_stats=stats)

    groups = _group_by_code(train)
    xs_all = {c: _scaled_params([train[i] for i in groups[c]], specs[c]) for c in codes}
    row_of = {}
    for c in codes:
        for row, i in enumerate(groups[c]):
            row_of[i] = row
    z_all = stats.normalize_array(values, masks)

    val_set = _EvalSet(val, encodings, specs, stats)
    opt = Adam(model.params(), lr=lr)
    sched = PlateauScheduler(opt)
    rng = np.random.default_rng(seed)
    best_val = np.inf
    best_state = snapshot(model.params())
    wait = 0
    epochs_run = 0

    for epoch in range(epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            by_code: dict[str, list[int]] = {}
            for i in idx:
                by_code.setdefault(train[i].topology_id, []).append(i)
            blocks = []
            sample_order = []
            for code in sorted(by_code):
                rows = [row_of[i] for i in by_code[code]]
                blocks.append((encodings[code], xs_all[code][rows]))
                sample_order.extend(by_code[code])
            batch = build_batch(blocks)
            pred = model.forward(batch)
            loss = masked_mse(pred, z_all[sample_order], masks[sample_order])
            if not np.isfinite(loss.data):
                raise RuntimeError(f"training diverged at epoch {epoch} (loss={loss.data})")
            opt.zero_grad()
            loss.backward()
            opt.step()
        val_loss = val_set.loss(model)
        sched.step(val_loss)
        epochs_run = epoch + 1
        if log:
            log(f"epoch {epoch + 1}: val masked mse {val_loss:.3e} lr {opt.lr:.2e}")
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_state = snapshot(model.params())
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                break
    restore(model.params(), best_state)

    test_set = _EvalSet(test, encodings, specs, stats)
    pred_raw = stats.denormalize_array(test_set.predict(model))
    report = regression_report(pred_raw, test_set.values, test_set.masks)
    report["epochs_run"] = epochs_run
    report["val_loss"] = best_val
    return model, report


def evaluate_forward(model: ForwardModel, records: list[Record],
                     registry: TopologyRegistry) -> dict:
    codes = sorted({r.topology_id for r in records})
    specs = {c: registry.get(c) for c in codes}
    encodings = {c: encode_topology(specs[c].build_graph(), specs[c]) for c in codes}
    eval_set = _EvalSet(records, encodings, specs, model.target_stats)
    pred_raw = model.target_stats.denormalize_array(eval_set.predict(model))
    return regression_report(pred_raw, eval_set.values, eval_set.masks)


def _graph_embeddings(model: ForwardModel, records: list[Record],
                      encodings: dict[str, TopologyEncoding],
                      specs: dict[str, TopologySpec], chunk: int = 1024) -> np.ndarray:
    """Pooled trunk embeddings per record (record order preserved)."""
    groups = _group_by_code(records)
    out = np.zeros((len(records), model.embed_dim))
    with no_grad():
        for code in sorted(groups):
            idxs = groups[code]
            xs = _scaled_params([records[i] for i in idxs], specs[code])
            for start in range(0, len(idxs), chunk):
                batch = build_batch([(encodings[code], xs[start:start + chunk])])
                e = model.message_pass(model.encode_edges(batch), batch)
                z = scatter_add(e, batch.edge_graph, batch.n_graphs)
                out[idxs[start:start + chunk]] = z.data
    return out


def finetune_head(model: ForwardModel, records: list[Record],
                  registry: TopologyRegistry, seed: int = 42, epochs: int = 200,
                  batch_size: int = 256, lr: float = 1e-3, patience: int = 20,
                  ratios=(0.8, 0.1, 0.1)) -> tuple[ForwardModel, dict]:
    """Adapt only the output head to a new family; the trunk stays frozen.

    Since trunk embeddings are constant under a frozen trunk, they are
    computed once and the head trains on the cached vectors.
    """
    train, val, test = stratified_split(records, ratios=ratios, seed=seed)
    codes = sorted({r.topology_id for r in records})
    specs = {c: registry.get(c) for c in codes}
    encodings = {c: encode_topology(specs[c].build_graph(), specs[c]) for c in codes}
    stats = model.target_stats

    z_train = _graph_embeddings(model, train, encodings, specs)
    z_val = _graph_embeddings(model, val, encodings, specs)
    values, masks = metric_arrays(train)
    t_train = stats.normalize_array(values, masks)
    v_values, v_masks = metric_arrays(val)
    t_val = stats.normalize_array(v_values, v_masks)

    opt = Adam(model.head_params(), lr=lr)
    sched = PlateauScheduler(opt)
    rng = np.random.default_rng(seed)
    best_val = np.inf
    best_state = snapshot(model.head_params())
    wait = 0

    for epoch in range(epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            pred = model.out_net(Tensor(z_train[idx]))
            loss = masked_mse(pred, t_train[idx], masks[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        with no_grad():
            val_pred = model.out_net(Tensor(z_val))
        val_loss = float(((val_pred.data - t_val) ** 2 * v_masks).sum() / v_masks.sum())
        sched.step(val_loss)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_state = snapshot(model.head_params())
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                break
    restore(model.head_params(), best_state)

    test_set = _EvalSet(test, encodings, specs, stats)
    pred_raw = stats.denormalize_array(test_set.predict(model))
    report = regression_report(pred_raw, test_set.values, test_set.masks)
    return model, report
