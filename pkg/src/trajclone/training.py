"""Training orchestration: average-loss phase, variance freeze, CVaR fine-tuning, grid search.

One engine runs every phase: each minibatch produces per-sample losses, a
tail mask (the whole batch when alpha is 0, the empirical upper tail during
CVaR fine-tuning), and backpropagates the masked mean. The variance freeze
zeroes the log-variance part of the mixture gradient for the first epochs.
Everything is deterministic given (seed, data order).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .baseline import record_actuation_labels
from .dataset import (
    DemoDataset,
    affordance_matrix,
    observation_matrix,
    trajectory_matrix,
)
from .network import (
    GmmHead,
    LinearHead,
    NetSpec,
    Normalizer,
    Params,
    adam_step,
    backward,
    clip_gradient_norm,
    fit_normalizer,
    forward,
    init_params,
    zero_params,
)

CHECKPOINT_SCHEMA = "trajclone-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Model:
    spec: NetSpec
    params: Params
    normalizers: dict
    agent: str
    meta: dict = field(default_factory=dict)

    def copy(self) -> "Model":
        return Model(self.spec, self.params.copy(), dict(self.normalizers),
                     self.agent, json.loads(json.dumps(self.meta)))


def net_spec_for(agent: str, input_dim: int, fusion_layers, k_modes: int,
                 d_target: int, with_affordance: bool, d_aff: int = 6) -> NetSpec:
    heads = {}
    if agent == "trajectory-gmm":
        heads["gmm"] = GmmHead(k_modes, d_target)
    elif agent == "trajectory-l2":
        heads["trajectory_l2"] = LinearHead(d_target)
    elif agent == "baseline-actuation":
        heads["trajectory_l2"] = LinearHead(d_target)  # structural trajectory head
        heads["actuation"] = LinearHead(2)
    else:
        raise ValueError(f"unknown agent {agent!r}")
    if with_affordance and agent != "baseline-actuation":
        heads["affordance"] = LinearHead(d_aff)
    return NetSpec(input_dim, tuple(fusion_layers), heads)


@dataclass
class TrainingData:
    x: np.ndarray
    targets: dict       # head name -> normalized target matrix

    @property
    def n(self) -> int:
        return self.x.shape[0]


def prepare_training_data(ds: DemoDataset, agent: str, with_affordance: bool):
    """Split records by track id, fit normalizers on train, normalize targets."""
    train_recs = ds.split(ds.train_track_ids)
    val_recs = ds.split(ds.val_track_ids)
    if not train_recs or not val_recs:
        raise ValueError("dataset is missing a split")

    normalizers = {}
    splits = {}
    for name, recs in (("train", train_recs), ("val", val_recs)):
        x = observation_matrix(recs, ds.sensor, ds.v_norm)
        targets = {}
        if agent in ("trajectory-gmm", "trajectory-l2"):
            traj = trajectory_matrix(recs)
            if name == "train":
                normalizers["trajectory"] = fit_normalizer(traj)
            targets["gmm" if agent == "trajectory-gmm" else "trajectory_l2"] = \
                normalizers["trajectory"].apply(traj)
            if with_affordance:
                aff = affordance_matrix(recs)
                if name == "train":
                    normalizers["affordance"] = fit_normalizer(aff)
                targets["affordance"] = normalizers["affordance"].apply(aff)
        elif agent == "baseline-actuation":
            act = record_actuation_labels(recs)
            if name == "train":
                normalizers["actuation"] = fit_normalizer(act)
            targets["actuation"] = normalizers["actuation"].apply(act)
        splits[name] = TrainingData(x, targets)
    return splits["train"], splits["val"], normalizers


def batch_objective(model: Model, x: np.ndarray, targets: dict, w_aff: float):
    """Per-sample losses and per-head upstream gradients (no reduction).

    Returns (losses (N,), head_grads dict, cache). The trajectory term is the
    mixture NLL (gmm agents) or 0.5*squared error (linear agents); the
    auxiliary term is w_aff * affordance MSE; the baseline trains on actuation
    MSE alone.
    """
    outputs, cache = forward(model.params, model.spec, x)
    n = x.shape[0]
    total = np.zeros(n)
    head_grads = {}
    if "gmm" in targets:
        head = model.spec.heads["gmm"]
        nll, g = L.gmm_nll_batch(outputs["gmm"], targets["gmm"],
                                 head.k_modes, head.d_target)
        total += nll
        head_grads["gmm"] = g
    if "trajectory_l2" in targets:
        l2, g = L.l2_loss_batch(outputs["trajectory_l2"], targets["trajectory_l2"])
        total += l2
        head_grads["trajectory_l2"] = g
    if "affordance" in targets:
        mse, g = L.mse_loss_batch(outputs["affordance"], targets["affordance"])
        total += w_aff * mse
        head_grads["affordance"] = w_aff * g
    if "actuation" in targets:
        mse, g = L.mse_loss_batch(outputs["actuation"], targets["actuation"])
        total += mse
        head_grads["actuation"] = g
    return total, head_grads, cache


def evaluate_losses(model: Model, data: TrainingData, w_aff: float,
                    chunk: int = 8192) -> np.ndarray:
    out = []
    for i in range(0, data.n, chunk):
        sl = slice(i, i + chunk)
        x = data.x[sl]
        targets = {k: v[sl] for k, v in data.targets.items()}
        losses, _, _ = batch_objective(model, x, targets, w_aff)
        out.append(losses)
    return np.concatenate(out)


class DivergenceError(RuntimeError):
    pass


def run_epochs(model: Model, train: TrainingData, val: TrainingData, cfg,
               epochs: int, seed: int, *, alpha: float = 0.0,
               start_epoch: int = 0, lr: float | None = None,
               shuffle_stream: int = 37) -> Model:
    """Minibatch Adam over `epochs`; alpha>0 backpropagates only the loss tail.

    Appends one row per epoch to model.meta["curves"] with train/val means and
    the validation CVaR-90 metric. On divergence the last finite-loss model is
    returned with meta["diverged"] set.
    """
    lr = cfg.lr if lr is None else lr
    w_aff = cfg.w_aff
    gmm_head = model.spec.heads.get("gmm")
    curves = model.meta.setdefault("curves", [])
    last_good = model.copy()

    for e in range(epochs):
        epoch = start_epoch + e
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, shuffle_stream, epoch)))
        order = rng.permutation(train.n)
        for lo in range(0, train.n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if alpha > 0.0 and idx.size < np.ceil(1.0 / (1.0 - alpha)):
                continue  # trailing fragment too small to populate the tail
            x = train.x[idx]
            targets = {k: v[idx] for k, v in train.targets.items()}
            sample_losses, head_grads, cache = batch_objective(
                model, x, targets, w_aff)
            if not np.all(np.isfinite(sample_losses)):
                model = last_good
                model.meta["diverged"] = True
                return model
            if alpha > 0.0:
                mask = L.cvar_batch_mask(sample_losses, alpha)
            else:
                mask = np.ones(idx.size, dtype=bool)
            scale = 1.0 / int(mask.sum())
            upstream = {}
            for name, g in head_grads.items():
                g = np.where(mask[:, None], g, 0.0) * scale
                if name == "gmm" and gmm_head is not None:
                    g = L.sigma_freeze(g, epoch, cfg.freeze_epochs,
                                       gmm_head.k_modes, gmm_head.d_target)
                upstream[name] = g
            grad = backward(cache, upstream)
            grad = clip_gradient_norm(grad, cfg.clip_norm)
            adam_step(model.params, grad, lr, cfg.beta1, cfg.beta2, cfg.eps)

        train_losses = evaluate_losses(model, train, w_aff)
        val_losses = evaluate_losses(model, val, w_aff)
        if not (np.all(np.isfinite(train_losses)) and np.all(np.isfinite(val_losses))):
            model = last_good
            model.meta["diverged"] = True
            return model
        curves.append({
            "epoch": epoch,
            "phase": "cvar" if alpha > 0.0 else "avg",
            "train_loss": float(train_losses.mean()),
            "val_loss": float(val_losses.mean()),
            "val_cvar90": L.cvar_estimate(val_losses, 0.9),
        })
        last_good = model.copy()
    return model


def train(config, ds: DemoDataset, agent: str | None = None,
          epochs: int | None = None) -> Model:
    """Average-loss training phase (with variance freeze for mixture heads)."""
    agent = agent or config.agent
    with_aff = config.train.w_aff > 0.0
    train_data, val_data, normalizers = prepare_training_data(ds, agent, with_aff)
    d_target = 2 * ds.k_points
    spec = net_spec_for(agent, train_data.x.shape[1], config.net.fusion_layers,
                        config.net.k_modes, d_target, with_aff)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 23)))
    model = Model(spec, init_params(spec, rng), normalizers, agent,
                  meta={"seed": config.seed, "agent": agent,
                        "w_aff": config.train.w_aff, "phase": "avg"})
    model = run_epochs(model, train_data, val_data, config.train,
                       epochs if epochs is not None else config.train.epochs,
                       config.seed)
    val_losses = evaluate_losses(model, val_data, config.train.w_aff)
    model.meta["val_percentile_curve"] = L.cvar_percentile_curve(val_losses)
    model.meta["epochs_done"] = (epochs if epochs is not None
                                 else config.train.epochs)
    return model


def finetune_cvar(model: Model, config, ds: DemoDataset) -> Model:
    """CVaR fine-tuning phase: backpropagate only the per-batch loss tail."""
    import dataclasses as _dc

    # the checkpoint's auxiliary weight wins so loss terms match its heads
    w_aff = model.meta.get("w_aff", config.train.w_aff)
    cfg_train = _dc.replace(config.train, w_aff=w_aff)
    train_data, val_data, _ = prepare_training_data(ds, model.agent, w_aff > 0.0)
    tuned = model.copy()
    tuned.params.adam_m[:] = 0.0
    tuned.params.adam_v[:] = 0.0
    tuned.params.adam_t = 0
    tuned.meta["phase"] = "cvar"
    start = tuned.meta.get("epochs_done", config.train.epochs)
    tuned = run_epochs(tuned, train_data, val_data, cfg_train,
                       config.cvar.finetune_epochs, config.seed,
                       alpha=config.cvar.alpha, start_epoch=start,
                       lr=cfg_train.finetune_lr, shuffle_stream=41)
    val_losses = evaluate_losses(tuned, val_data, w_aff)
    tuned.meta["val_percentile_curve_cvar"] = L.cvar_percentile_curve(val_losses)
    return tuned


def grid_search_weights(config, ds: DemoDataset, grid) -> tuple[float, list]:
    """Train briefly per auxiliary weight; pick the validation trajectory-loss argmin.

    Ties break to the earliest grid entry. Returns (best_weight, table) where
    each table row reports the train/val trajectory loss for one weight.
    """
    import dataclasses as _dc

    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    table = []
    best = None
    for w in grid:
        cfg_w = _dc.replace(config, train=_dc.replace(
            config.train, w_aff=float(w)))
        model = train(cfg_w, ds, epochs=config.train.grid_epochs)
        train_data, val_data, _ = prepare_training_data(ds, model.agent, w > 0.0)
        # trajectory-only loss (w_aff=0) so weights compete on the main task
        traj_val = float(evaluate_losses(model, val_data, 0.0).mean())
        traj_train = float(evaluate_losses(model, train_data, 0.0).mean())
        table.append({"w_aff": float(w), "train_traj_loss": traj_train,
                      "val_traj_loss": traj_val})
        if best is None or traj_val < best[1]:
            best = (float(w), traj_val)
    return best[0], table


# -- checkpoint persistence ----------------------------------------------------

def _spec_to_dict(spec: NetSpec) -> dict:
    heads = {}
    for name, h in spec.heads.items():
        if isinstance(h, GmmHead):
            heads[name] = {"type": "gmm", "k_modes": h.k_modes,
                           "d_target": h.d_target}
        else:
            heads[name] = {"type": "linear", "d_target": h.d_target}
    return {"input_dim": spec.input_dim,
            "fusion_layers": list(spec.fusion_layers), "heads": heads}


def _spec_from_dict(d: dict) -> NetSpec:
    heads = {}
    for name, h in d["heads"].items():
        if h["type"] == "gmm":
            heads[name] = GmmHead(h["k_modes"], h["d_target"])
        else:
            heads[name] = LinearHead(h["d_target"])
    return NetSpec(d["input_dim"], tuple(d["fusion_layers"]), heads)


def save_checkpoint(model: Model, path):
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "version": CHECKPOINT_VERSION,
        "agent": model.agent,
        "net": _spec_to_dict(model.spec),
        "params": model.params.values.tolist(),
        "normalizers": {k: v.to_dict() for k, v in sorted(model.normalizers.items())},
        "meta": model.meta,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, separators=(",", ":"), sort_keys=True,
                  allow_nan=False)
        fh.write("\n")


def load_checkpoint(path) -> Model:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"{path} is not a model checkpoint")
    spec = _spec_from_dict(payload["net"])
    params = Params(spec, np.asarray(payload["params"], dtype=np.float64))
    normalizers = {k: Normalizer.from_dict(v)
                   for k, v in payload["normalizers"].items()}
    return Model(spec, params, normalizers, payload["agent"], payload["meta"])
