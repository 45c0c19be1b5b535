"""Training: coarse negative log-likelihood on ground-truth cell assignments
under the dual-softmax confidence matrix, plus a fine-offset MSE on matches
whose coarse prediction hits the ground-truth cell.
"""

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .datasets import gt_coarse_assignment, load_manifest
from .matcher import (add_positional_encoding, dual_softmax, log_dual_softmax,
                      mutual_matches, _flatten_map)
from .model import MatcherModel, save_model
from .tensor import GradientTape, Tensor, backward


class Adam(object):
    """Adaptive-moment optimizer with in-place parameter updates."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainResult:
    out_dir: str
    steps_run: int
    losses: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    best_val: float = float("-inf")
    best_checkpoint: str = ""
    skipped_batches: int = 0


def pair_loss_terms(model, coarse_a, coarse_b, fine_a, fine_b, hom, h, w):
    """Loss terms for one training pair.

    Returns (coarse_nll or None, fine_sq_errors or None, stats dict).
    """
    mcfg = model.config.matcher
    cell = mcfg.coarse_cell
    assign = gt_coarse_assignment(hom, h, w, cell=cell)
    rows = np.nonzero(assign >= 0)[0]
    stats = {"assigned": int(rows.size), "coarse_correct": 0, "fine_terms": 0}
    if rows.size == 0:
        return None, None, stats

    fa = _flatten_map(add_positional_encoding(coarse_a))
    fb = _flatten_map(add_positional_encoding(coarse_b))
    fa, fb = model.coarse.transform(T.reshape(fa, (1,) + fa.shape),
                                    T.reshape(fb, (1,) + fb.shape))
    s = model.coarse.similarity(fa[0], fb[0])
    log_p = log_dual_softmax(s)
    nll = T.mean(T.gather_pairs(log_p, rows, assign[rows])) * -1.0

    # fine supervision on mutual matches that hit the ground-truth cell
    conf = dual_softmax(s.data).data
    ia, ib, _ = mutual_matches(conf, mcfg.theta_c)
    hit = assign[ia] == ib
    stats["coarse_correct"] = int(hit.sum())
    fine_sq = None
    if hit.any():
        ia, ib = ia[hit], ib[hit]
        wc = w // cell
        per = cell // mcfg.fine_stride
        off = per // 2
        ra, ca = np.divmod(ia, wc)
        rb, cb = np.divmod(ib, wc)
        centers_a = np.stack([ra * per + off, ca * per + off], axis=1)
        centers_b = np.stack([rb * per + off, cb * per + off], axis=1)
        r = mcfg.fine_window // 2
        hf, wf = h // mcfg.fine_stride, w // mcfg.fine_stride

        def inside(c):
            return ((c[:, 0] >= r) & (c[:, 0] < hf - r)
                    & (c[:, 1] >= r) & (c[:, 1] < wf - r))

        keep = inside(centers_a) & inside(centers_b)
        if keep.any():
            ca_k, cb_k = centers_a[keep], centers_b[keep]
            pa = np.stack([(ia[keep] % wc + 0.5) * cell,
                           (ia[keep] // wc + 0.5) * cell], axis=1)
            target = hom.apply(pa)
            tx = target[:, 0] / mcfg.fine_stride - 0.5 - cb_k[:, 1]
            ty = target[:, 1] / mcfg.fine_stride - 0.5 - cb_k[:, 0]
            within = (np.abs(tx) <= r) & (np.abs(ty) <= r)
            if within.any():
                ca_k, cb_k = ca_k[within], cb_k[within]
                dx, dy, _ = model.fine.offsets(fine_a, fine_b, ca_k, cb_k)
                txt = Tensor(tx[within].astype(dx.dtype))
                tyt = Tensor(ty[within].astype(dy.dtype))
                fine_sq = (dx - txt) ** 2.0 + (dy - tyt) ** 2.0
                stats["fine_terms"] = int(within.sum())
    return nll, fine_sq, stats


def batch_loss(model, batch, lambda_fine):
    """Total loss for a list of (img_a, img_b, Homography) training pairs."""
    imgs = np.stack([im for pair in batch for im in (pair[0], pair[1])])
    coarse, fine = model.backbone(Tensor(imgs.astype(np.float32)))
    nlls, fine_sqs = [], []
    stats = {"assigned": 0, "coarse_correct": 0, "fine_terms": 0}
    h, w = imgs.shape[2], imgs.shape[3]
    for i, (_, _, hom) in enumerate(batch):
        nll, fine_sq, st = pair_loss_terms(
            model, coarse[2 * i], coarse[2 * i + 1],
            fine[2 * i], fine[2 * i + 1], hom, h, w)
        for k in stats:
            stats[k] += st[k]
        if nll is not None:
            nlls.append(nll)
        if fine_sq is not None:
            fine_sqs.append(fine_sq)
    if not nlls:
        return None, None, None, stats
    coarse_loss = nlls[0]
    for extra in nlls[1:]:
        coarse_loss = coarse_loss + extra
    coarse_loss = coarse_loss * (1.0 / len(nlls))
    fine_loss = None
    if fine_sqs and lambda_fine != 0.0:
        fine_loss = T.mean(T.concat(fine_sqs, axis=0))
        total = coarse_loss + fine_loss * lambda_fine
    else:
        total = coarse_loss
    return total, coarse_loss, fine_loss, stats


def sample_batch(rng, sequences, batch_size):
    batch = []
    for _ in range(batch_size):
        seq = sequences[int(rng.integers(0, len(sequences)))]
        k = int(rng.integers(0, 5))
        batch.append((seq.image_a, seq.images_b[k], seq.homographies[k]))
    return batch


def train(config, dataset_root, out_dir, log_every=25, progress=None):
    """Train on a generated dataset; saves improving checkpoints (top-k kept
    by validation corner-error AUC@10px on a held-out split) plus the final
    model, and a JSONL metrics log. Deterministic per config seed."""
    from .evaluate import evaluate_pairs   # deferred: avoids a module cycle

    config.validate()
    tcfg = config.train
    os.makedirs(out_dir, exist_ok=True)
    manifest = load_manifest(dataset_root)
    sequences = manifest.sequences()
    if len(sequences) < 2:
        raise ValueError("training needs at least 2 scenes (one is held out)")
    n_val = max(1, len(sequences) // 8)
    train_seqs = sequences[:-n_val]
    val_seqs = sequences[-n_val:]

    rng = np.random.default_rng(tcfg.seed)
    model = MatcherModel(config, rng=np.random.default_rng(tcfg.seed))
    lr = tcfg.lr * (tcfg.batch_size / 2.0 if tcfg.lr_scale_with_batch else 1.0)
    params = model.parameters()
    opt = Adam(params, lr=lr, beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps)

    result = TrainResult(out_dir=out_dir, steps_run=0)
    kept = []   # (metric, path)
    log_path = os.path.join(out_dir, "train_log.jsonl")
    log_f = open(log_path, "w", encoding="utf-8")
    t0 = time.time()
    try:
        for step in range(1, tcfg.steps + 1):
            batch = sample_batch(rng, train_seqs, tcfg.batch_size)
            model.train(True)
            with GradientTape() as tape:
                tape.watch(*params)
                total, coarse_l, fine_l, stats = batch_loss(model, batch,
                                                            tcfg.lambda_fine)
                if total is None:
                    result.skipped_batches += 1
                    continue
                if not np.isfinite(total.data).all():
                    raise FloatingPointError(
                        f"non-finite loss at step {step}: "
                        f"coarse={coarse_l.data if coarse_l is not None else None}")
                grads = backward(total, tape)
            opt.step(grads)
            result.steps_run = step
            loss_val = float(total.data)
            result.losses.append(loss_val)
            entry = {"step": step, "loss": loss_val,
                     "coarse": float(coarse_l.data),
                     "fine": (float(fine_l.data) if fine_l is not None else None),
                     "assigned": stats["assigned"],
                     "coarse_correct": stats["coarse_correct"]}
            if step % log_every == 0 or step == 1:
                log_f.write(json.dumps(entry) + "\n")
                log_f.flush()
                if progress:
                    progress(entry)

            if step % tcfg.val_interval == 0 or step == tcfg.steps:
                report = evaluate_pairs(model, val_seqs, config)
                val = report.auc_at(10.0, "all")
                result.val_history.append((step, val))
                log_f.write(json.dumps({"step": step, "val_auc10": val}) + "\n")
                log_f.flush()
                if progress:
                    progress({"step": step, "val_auc10": val})
                if val > result.best_val:
                    result.best_val = val
                    path = os.path.join(out_dir, f"ckpt_step{step:06d}.rmckpt")
                    save_model(path, model)
                    kept.append((val, path))
                    kept.sort(key=lambda kv: -kv[0])
                    for _, old in kept[tcfg.keep_top:]:
                        for suffix in ("", ".config"):
                            if os.path.exists(old + suffix):
                                os.remove(old + suffix)
                    kept = kept[:tcfg.keep_top]
                    result.best_checkpoint = kept[0][1]
        final_path = os.path.join(out_dir, "model_final.rmckpt")
        save_model(final_path, model)
        if not result.best_checkpoint:
            result.best_checkpoint = final_path
        log_f.write(json.dumps({"wall_clock_s": time.time() - t0,
                                "skipped_batches": result.skipped_batches}) + "\n")
    finally:
        log_f.close()
    return result, model
