"""Training orchestration: per-sample noise bank, two-step noise refinement,
alternating critic / generator / encoder-mapper updates, checkpointing.

Every stochastic choice is derived from (global seed, step) or
(global seed, sample id), so runs are bit-reproducible and resume is exact.
Adam is implemented in-place on named tensors so optimizer state serializes
bitwise into the checkpoint container.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .attrs import attribute_keep_mask
from .codec import interpolate_codes
from .config import ExperimentConfig
from .errors import ConfigError, NumericalFault
from .losses import (EPS_CLS, EPS_MS, LossReport, LossWeights, aggregate_objectives,
                     gradient_penalty, loss_sty)
from .nets import NetworkBundle, build_bundle
from .synthdata import SynthDataset, SynthSpec, build_dataset

log = logging.getLogger(__name__)

ADAM_EPS = 1e-8

# seed-stream tags: 1 net init, 2 dataset, 4 noise bank, 5 per-step rng
_TAG_BANK = 4
_TAG_STEP = 5


class Adam:
    """Adaptive moment estimation over named tensors, serializable bitwise."""

    def __init__(self, named_params: list[tuple[str, torch.Tensor]], lr: float,
                 betas: tuple[float, float]):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: list[torch.Tensor | None]) -> None:
        for name, g in zip(self.names, grads):
            if g is not None and not torch.isfinite(g).all():
                raise NumericalFault(f"non-finite gradient for parameter {name}")
        self.t += 1
        bc1 = 1 - self.beta1 ** self.t
        bc2 = 1 - self.beta2 ** self.t
        with torch.no_grad():
            for p, m, v, g in zip(self.params, self.m, self.v, grads):
                if g is None:
                    g = torch.zeros_like(p)
                m.mul_(self.beta1).add_(g, alpha=1 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1 - self.beta2)
                p.addcdiv_(m / bc1, (v / bc2).sqrt() + ADAM_EPS, value=-self.lr)

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.int64)}
        for name, m, v in zip(self.names, self.m, self.v):
            out[f"{prefix}.{name}.m"] = m.detach().cpu().numpy().copy()
            out[f"{prefix}.{name}.v"] = v.detach().cpu().numpy().copy()
        return out

    def load_state(self, prefix: str, tensors: dict[str, np.ndarray]) -> None:
        self.t = int(tensors[f"{prefix}.t"][0])
        for i, name in enumerate(self.names):
            self.m[i] = torch.from_numpy(tensors[f"{prefix}.{name}.m"].copy()).to(self.m[i].dtype)
            self.v[i] = torch.from_numpy(tensors[f"{prefix}.{name}.v"].copy()).to(self.v[i].dtype)


@dataclass
class _Slot:
    r: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int


class NoiseBank:
    """Fixed pairing of one optimizable noise vector per training sample."""

    def __init__(self, noise_dim: int, seed: int):
        self.noise_dim = noise_dim
        self.seed = seed
        self._slots: dict[int, _Slot] = {}

    def _ensure(self, sample_id: int) -> _Slot:
        slot = self._slots.get(sample_id)
        if slot is None:
            rng = np.random.default_rng([self.seed, _TAG_BANK, sample_id])
            slot = _Slot(r=rng.standard_normal(self.noise_dim).astype(np.float32),
                         m=np.zeros(self.noise_dim, dtype=np.float32),
                         v=np.zeros(self.noise_dim, dtype=np.float32),
                         t=0)
            self._slots[sample_id] = slot
        return slot

    def get(self, ids: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        rows = [self._ensure(int(i)).r for i in ids]
        return torch.as_tensor(np.stack(rows), dtype=dtype)

    def apply_adam(self, ids: np.ndarray, grads: np.ndarray, lr: float,
                   betas: tuple[float, float]) -> int:
        """Per-sample Adam step; rows with non-finite gradients are skipped.
        Returns the number of updated entries."""
        b1, b2 = betas
        updated = 0
        for i, sample_id in enumerate(ids):
            g = grads[i]
            if not np.isfinite(g).all():
                log.warning("skipping noise update for sample %d: non-finite gradient", int(sample_id))
                continue
            slot = self._slots[int(sample_id)]
            slot.t += 1
            slot.m = b1 * slot.m + (1 - b1) * g
            slot.v = b2 * slot.v + (1 - b2) * g * g
            m_hat = slot.m / (1 - b1 ** slot.t)
            v_hat = slot.v / (1 - b2 ** slot.t)
            slot.r = slot.r - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            updated += 1
        return updated

    def state_tensors(self) -> dict[str, np.ndarray]:
        ids = np.array(sorted(self._slots), dtype=np.int64)
        if len(ids) == 0:
            return {"bank.ids": ids}
        return {
            "bank.ids": ids,
            "bank.R": np.stack([self._slots[int(i)].r for i in ids]),
            "bank.m": np.stack([self._slots[int(i)].m for i in ids]),
            "bank.v": np.stack([self._slots[int(i)].v for i in ids]),
            "bank.t": np.array([self._slots[int(i)].t for i in ids], dtype=np.int64),
        }

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        self._slots.clear()
        ids = tensors["bank.ids"]
        for i, sample_id in enumerate(ids):
            self._slots[int(sample_id)] = _Slot(
                r=tensors["bank.R"][i].copy(), m=tensors["bank.m"][i].copy(),
                v=tensors["bank.v"][i].copy(), t=int(tensors["bank.t"][i]))


@dataclass
class Batch:
    source: torch.Tensor       # (B, 3, H, W)
    reference: torch.Tensor    # (B, 3, H, W)
    y_s: np.ndarray            # (B, n) int8
    y_r: np.ndarray
    y_t: np.ndarray
    diff: np.ndarray           # (B, n) int8, y_t - y_s
    keep: np.ndarray           # (B, n) int8
    ref_ids: np.ndarray        # (B,) int64, noise-bank keys


@dataclass
class TrainState:
    cfg: ExperimentConfig
    bundle: NetworkBundle
    bank: NoiseBank
    opt_dc: Adam
    opt_g: Adam
    opt_me: Adam
    step: int = 0
    last_alpha: float | None = None

    @property
    def weights(self) -> LossWeights:
        return LossWeights.from_config(self.cfg)


def build_state(cfg: ExperimentConfig) -> TrainState:
    cfg.validate()
    bundle = build_bundle(cfg)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    named = bundle.named_tensors()
    dc = [(n, p) for n, p in named.items() if n.startswith("DC.")]
    g = [(n, p) for n, p in named.items() if n.startswith("G.")]
    me = [(n, p) for n, p in named.items() if n.startswith(("M.", "E."))]
    return TrainState(
        cfg=cfg, bundle=bundle,
        bank=NoiseBank(cfg.noise_dim, cfg.seed),
        opt_dc=Adam(dc, cfg.lr_net, betas),
        opt_g=Adam(g, cfg.lr_net, betas),
        opt_me=Adam(me, cfg.lr_net, betas),
    )


# -- batch construction ---------------------------------------------------

def sample_batch(dataset: SynthDataset, cfg: ExperimentConfig,
                 rng: np.random.Generator) -> Batch:
    """Draw sources and references; targets take the reference's values on the
    edited attribute subset so the reference exemplifies the target domain."""
    n = cfg.n_attrs
    size = cfg.batch_size
    groups = [list(g) for g in cfg.groups]
    idx = rng.integers(len(dataset), size=size)
    y_s = dataset.labels[idx].copy()
    ref_idx = np.empty(size, dtype=np.int64)
    y_t = np.empty_like(y_s)
    for b in range(size):
        for _ in range(16):
            r = int(rng.integers(len(dataset)))
            if cfg.single_attribute_edits:
                edited = np.zeros(n, dtype=bool)
                edited[int(rng.integers(n))] = True
            else:
                edited = rng.random(n) < cfg.p_flip
                while not edited.any():
                    edited = rng.random(n) < cfg.p_flip
            cand = np.where(edited, dataset.labels[r], y_s[b]).astype(np.int8)
            ok_groups = all(int(cand[g].sum()) <= 1 for g in groups)
            if ok_groups and not np.array_equal(cand, y_s[b]):
                break
        ref_idx[b] = r
        y_t[b] = cand
    diff = (y_t - y_s).astype(np.int8)
    keep = np.stack([attribute_keep_mask(y_s[b], diff[b]) for b in range(size)])
    return Batch(
        source=torch.from_numpy(dataset.images[idx].copy()),
        reference=torch.from_numpy(dataset.images[ref_idx].copy()),
        y_s=y_s, y_r=dataset.labels[ref_idx].copy(), y_t=y_t,
        diff=diff, keep=keep,
        ref_ids=dataset.ids[ref_idx].astype(np.int64),
    )


# -- the two-step strategy ------------------------------------------------

def noise_refinement_step(state: TrainState, batch: Batch) -> int:
    """First step: freeze all module parameters, descend the style-pairing
    loss with respect to the per-sample noise vectors only."""
    bundle = state.bundle
    cfg = state.cfg
    dtype = next(bundle.encoder.parameters()).dtype
    noise = state.bank.get(batch.ref_ids, dtype=dtype).requires_grad_(True)
    with torch.no_grad():
        enc = bundle.encode(torch.cat([batch.source, batch.reference]),
                            np.concatenate([batch.diff, -batch.diff]))
        s_source, ref_branch = enc.split(batch.source.shape[0])
        s_ref = s_source + ref_branch
    s_rand = s_source + bundle.map_noise(noise, -batch.diff)
    per_sample = (s_rand - s_ref).abs().mean(dim=(1, 2, 3))
    total = state.weights.lambda_sty * per_sample.sum()
    (grad,) = torch.autograd.grad(total, noise)
    return state.bank.apply_adam(batch.ref_ids, grad.detach().cpu().numpy().astype(np.float32),
                                 lr=cfg.lr_noise, betas=(cfg.adam_beta1, cfg.adam_beta2))


def _bce(probs: torch.Tensor, labels: np.ndarray) -> torch.Tensor:
    p = probs.clamp(EPS_CLS, 1 - EPS_CLS)
    y = torch.as_tensor(labels, dtype=probs.dtype)
    return -(y * p.log() + (1 - y) * (1 - p).log()).mean()


def train_step(state: TrainState, batch: Batch) -> LossReport:
    """One full training step: noise refinement, then D/C, G, and M/E updates.

    Forward passes are batched aggressively (single-core budget): one encoder
    pass, one mapper pass, and one generator pass cover every loss term; the
    synthesized images are shared by the critic update (as constants) and the
    generator-side updates.  On any non-finite total or gradient the pre-step
    parameters (networks, optimizer states, noise bank) are restored and the
    fault re-raised.
    """
    cfg, bundle, w = state.cfg, state.bundle, state.weights
    rng = np.random.default_rng([cfg.seed, _TAG_STEP, state.step])
    snapshot = _snapshot(state)
    try:
        noise_refinement_step(state, batch)
        alpha = float(rng.random())
        dtype = next(bundle.encoder.parameters()).dtype
        size = batch.source.shape[0]
        source = batch.source.to(dtype)
        reference = batch.reference.to(dtype)
        diff = batch.diff
        zero = np.zeros_like(diff)
        noise = state.bank.get(batch.ref_ids, dtype=dtype)
        noise_b = torch.as_tensor(rng.standard_normal((size, cfg.noise_dim)), dtype=dtype)

        # shared forward graph
        enc = bundle.encode(torch.cat([source, reference, source]),
                            np.concatenate([diff, -diff, zero]))
        s_src_d, ref_branch, s_src_0 = enc.split(size)
        mapped = bundle.map_noise(torch.cat([noise, noise, noise_b]),
                                  np.concatenate([-diff, zero, -diff]))
        m_rand, m_rec, m_rand_b = mapped.split(size)
        s_rand = s_src_d + m_rand
        s_ref = s_src_d + ref_branch
        s_int = interpolate_codes(s_rand, s_ref, alpha)
        codes = torch.cat([s_rand, s_ref, s_int, s_src_0 + m_rec, 2 * s_src_0,
                           s_src_d + m_rand_b])
        generated = bundle.generate(source.repeat(6, 1, 1, 1), codes)
        fake_l, fake_r, fake_i, rec_l, rec_r, fake_b = generated.split(size)
        fakes = torch.cat([fake_l, fake_r, fake_i])

        sty = loss_sty(s_rand, s_ref)
        rec = (torch.cat([rec_l, rec_r]) - source.repeat(2, 1, 1, 1)).abs().mean()
        ms = (noise - noise_b).abs().mean() / ((fake_l - fake_b).abs().mean() + EPS_MS)
        enc2_in = [source, fake_l, fake_l.detach(), fake_r.detach()]
        enc2_cond = [batch.keep, batch.keep, -diff, -diff]
        if cfg.ak_on_reference:
            enc2_in.insert(2, fake_r)
            enc2_cond.insert(2, batch.keep)
        enc2 = bundle.encode(torch.cat(enc2_in), np.concatenate(enc2_cond))
        parts = enc2.split(size)
        if cfg.ak_on_reference:
            ak = 0.5 * ((parts[0] - parts[1]).abs().mean() + (parts[0] - parts[2]).abs().mean())
            back_l, back_r = parts[3], parts[4]
        else:
            ak = (parts[0] - parts[1]).abs().mean()
            back_l, back_r = parts[2], parts[3]
        cyc = loss_sty(s_rand, s_src_d + back_l) + loss_sty(s_ref, s_src_d + back_r)

        # critic/classifier update; generated images enter as constants
        fakes_const = fakes.detach()
        scores, logits = bundle.critic(torch.cat([source, fakes_const]))
        adv_d = -(scores[:size].mean() - scores[size:].mean())
        # one interpolate per source, against a randomly chosen synthesis type
        pick = rng.integers(3, size=size) * size + np.arange(size)
        gp = gradient_penalty(bundle, source, fakes_const[pick], rng)
        cls_real = _bce(torch.sigmoid(logits[:size]), batch.y_s)
        total_dc = adv_d + w.lambda_gp * gp + w.lambda_cls * cls_real
        state.opt_dc.step(torch.autograd.grad(total_dc, state.opt_dc.params))

        # generator and mapper/encoder updates against the refreshed critic
        scores_g, logits_g = bundle.critic(fakes)
        adv_g = -scores_g.mean()
        cls_gen = _bce(torch.sigmoid(logits_g), np.tile(batch.y_t, (3, 1)))
        total_g = (adv_g + w.lambda_cls * cls_gen + w.lambda_rec * rec
                   + w.lambda_sty * sty + w.lambda_ms * ms + w.lambda_ak * ak)
        # d(total_ME)/d(me) = d(total_G)/d(me) + lambda_cyc * d(cyc)/d(me); the
        # cycle term's subgraph touches only the encoder and mapper, so this
        # avoids a second backward through the generator and critic
        both = torch.autograd.grad(total_g, state.opt_g.params + state.opt_me.params,
                                   retain_graph=True)
        g_grads = list(both[:len(state.opt_g.params)])
        me_grads = list(both[len(state.opt_g.params):])
        cyc_grads = torch.autograd.grad(w.lambda_cyc * cyc, state.opt_me.params,
                                        allow_unused=True)
        me_grads = [m if c is None else m + c for m, c in zip(me_grads, cyc_grads)]
        state.opt_g.step(g_grads)
        state.opt_me.step(me_grads)

        report = aggregate_objectives({
            "adv": -float(adv_d.detach()), "adv_G": float(adv_g.detach()),
            "cls": float(cls_gen.detach()), "cls_real": float(cls_real.detach()),
            "rec": float(rec.detach()), "sty": float(sty.detach()),
            "ms": float(ms.detach()), "ak": float(ak.detach()),
            "cyc": float(cyc.detach()), "gp": float(gp.detach()),
        }, w)
    except NumericalFault:
        _restore(state, snapshot)
        raise
    state.step += 1
    state.last_alpha = alpha
    return report


def _snapshot(state: TrainState):
    params = {n: p.detach().clone() for n, p in state.bundle.named_tensors().items()}
    opts = [(o.t, [m.clone() for m in o.m], [v.clone() for v in o.v])
            for o in (state.opt_dc, state.opt_g, state.opt_me)]
    bank = {k: _Slot(s.r.copy(), s.m.copy(), s.v.copy(), s.t)
            for k, s in state.bank._slots.items()}
    return params, opts, bank


def _restore(state: TrainState, snapshot) -> None:
    params, opts, bank = snapshot
    with torch.no_grad():
        for n, p in state.bundle.named_tensors().items():
            p.copy_(params[n])
    for opt, (t, ms, vs) in zip((state.opt_dc, state.opt_g, state.opt_me), opts):
        opt.t = t
        for i in range(len(opt.m)):
            opt.m[i].copy_(ms[i])
            opt.v[i].copy_(vs[i])
    state.bank._slots = bank


# -- persistence ----------------------------------------------------------

def save_checkpoint(state: TrainState, path: str | Path) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, p in state.bundle.named_tensors().items():
        tensors[f"net.{name}"] = p.detach().cpu().numpy().copy()
    tensors.update(state.opt_dc.state_tensors("opt.dc"))
    tensors.update(state.opt_g.state_tensors("opt.g"))
    tensors.update(state.opt_me.state_tensors("opt.me"))
    tensors.update(state.bank.state_tensors())
    meta = {"seed": state.cfg.seed, "step": state.step}
    ckpt.write_container(path, state.cfg.config_hash(), meta, tensors)


def load_checkpoint(path: str | Path, cfg: ExperimentConfig) -> TrainState:
    meta, tensors = ckpt.read_container(path, expected_config_hash=cfg.config_hash())
    state = build_state(cfg)
    with torch.no_grad():
        for name, p in state.bundle.named_tensors().items():
            key = f"net.{name}"
            if key not in tensors:
                raise ConfigError(f"checkpoint is missing tensor {key}")
            p.copy_(torch.from_numpy(tensors[key].copy()))
    state.opt_dc.load_state("opt.dc", tensors)
    state.opt_g.load_state("opt.g", tensors)
    state.opt_me.load_state("opt.me", tensors)
    if "bank.R" in tensors:
        state.bank.load_state(tensors)
    state.step = int(meta["step"])
    return state


# -- full run -------------------------------------------------------------

def run_training(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                 progress: bool = False) -> TrainState:
    """Train for the configured step budget; write the loss log, periodic
    checkpoints, and sample grids under the output directory."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text())
    spec = SynthSpec.from_config(cfg)
    train_ds, _ = build_dataset(spec, cfg.n_train, cfg.n_test, cfg.seed)
    train_ds.save_manifest(out / "train_manifest.tsv")
    state = build_state(cfg)
    save_checkpoint(state, out / "ckpt_initial.dsc")
    with open(out / "loss.log", "w") as log_file:
        for _ in range(cfg.steps):
            rng = np.random.default_rng([cfg.seed, _TAG_STEP, state.step, 1])
            batch = sample_batch(train_ds, cfg, rng)
            report = train_step(state, batch)
            step_done = state.step
            for name, value in report.as_dict().items():
                log_file.write(f"{step_done}\t{name}\t{value!r}\n")
            if progress and step_done % 200 == 0:
                log_file.flush()
                print(f"step {step_done}/{cfg.steps} total_G={report.total_G:.4f} "
                      f"rec={report.rec:.4f} cls={report.cls:.4f}", flush=True)
            if cfg.checkpoint_every and step_done % cfg.checkpoint_every == 0:
                save_checkpoint(state, out / f"ckpt_{step_done:06d}.dsc")
            if cfg.sample_every and step_done % cfg.sample_every == 0:
                _write_samples(state, train_ds, out, step_done)
    save_checkpoint(state, out / "ckpt_final.dsc")
    return state


def _write_samples(state: TrainState, dataset: SynthDataset, out: Path, step: int) -> None:
    from .imageio import ImageGrid
    from .inference import interp_sweep, label_based, reconstruct, reference_based

    cfg = state.cfg
    rng = np.random.default_rng([cfg.seed, _TAG_STEP, step, 2])
    n_rows = min(4, len(dataset))
    alphas = [0.0, 0.5, 1.0]
    grid = ImageGrid(n_rows, 4 + len(alphas), cfg.image_size)
    grid.col_captions = (["source", "reconstruct", "label-based", "reference-based"]
                         + [f"interp a={a}" for a in alphas])
    for row in range(n_rows):
        i = int(rng.integers(len(dataset)))
        j = int(rng.integers(len(dataset)))
        y_s, y_r = dataset.labels[i], dataset.labels[j]
        diff = (np.where(rng.random(cfg.n_attrs) < 0.5, y_r, y_s) - y_s).astype(np.int8)
        noise = rng.standard_normal(cfg.noise_dim).astype(np.float32)
        src, ref = dataset.images[i], dataset.images[j]
        grid.set(row, 0, src)
        grid.set(row, 1, reconstruct(state.bundle, src, noise))
        grid.set(row, 2, label_based(state.bundle, src, diff, noise))
        grid.set(row, 3, reference_based(state.bundle, src, ref, diff))
        for k, img in enumerate(interp_sweep(state.bundle, src, ref, diff, noise, alphas)):
            grid.set(row, 4 + k, img)
    grid.save(out / f"samples_{step:06d}.ppm")
