"""Coarse-to-fine matcher: positional encoding, alternating self/cross
attention, dual-softmax mutual-max coarse matching, and subpixel refinement
of fine feature windows.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import Tensor


@dataclass
class MatcherConfig:
    theta_c: float = 0.2          # matching confidence threshold
    temperature: float = 0.1      # similarity softmax temperature
    d_model: int = 64             # feature width after projection
    n_blocks: int = 4             # alternating self/cross blocks (2+2)
    n_heads: int = 4
    fine_window: int = 5          # odd window size on the fine grid
    max_matches_eval: int = 1000
    coarse_cell: int = 8          # pixels per coarse cell
    fine_stride: int = 2          # pixels per fine cell
    bypass_attention: bool = False

    def validate(self):
        if not 0.0 <= self.theta_c <= 1.0:
            raise ValueError("theta_c must lie in [0, 1]")
        if self.fine_window % 2 == 0:
            raise ValueError("fine_window must be odd")
        return self


@dataclass
class CoarseMatchSet:
    idx_a: np.ndarray         # flat coarse-grid indices in image A
    idx_b: np.ndarray         # flat coarse-grid indices in image B
    confidence: np.ndarray
    grid_a: tuple             # (hc, wc)
    grid_b: tuple

    def __len__(self):
        return len(self.idx_a)


@dataclass
class FineMatch:
    point_a: tuple            # (x, y) pixels: coarse cell center in A
    point_b: tuple            # (x, y) pixels: subpixel position in B
    confidence: float


_PE_CACHE = {}


def positional_encoding(d, hc, wc):
    """Fixed 2-D sinusoidal encoding [d, hc, wc], channels in four groups:
    sin(x), cos(x), sin(y), cos(y) at geometrically spaced frequencies."""
    if d % 4:
        raise ValueError(f"positional encoding needs d divisible by 4, got {d}")
    key = (d, hc, wc)
    if key not in _PE_CACHE:
        d4 = d // 4
        freqs = 1.0 / (10000.0 ** (np.arange(d4) / d4))
        ys, xs = np.mgrid[0:hc, 0:wc].astype(np.float64)
        pe = np.concatenate([
            np.sin(freqs[:, None, None] * xs[None]),
            np.cos(freqs[:, None, None] * xs[None]),
            np.sin(freqs[:, None, None] * ys[None]),
            np.cos(freqs[:, None, None] * ys[None]),
        ], axis=0)
        _PE_CACHE[key] = pe.astype(np.float32)
    return _PE_CACHE[key]


def add_positional_encoding(coarse):
    """Add the fixed sinusoidal encoding to a [d, hc, wc] coarse feature map."""
    d, hc, wc = coarse.shape
    pe = Tensor(positional_encoding(d, hc, wc).astype(coarse.dtype))
    return coarse + pe


def dual_softmax(scores):
    """Confidence matrix: elementwise product of row-wise and column-wise
    softmaxes of the similarity matrix."""
    s = scores if isinstance(scores, Tensor) else Tensor(scores)
    return T.softmax(s, axis=-1) * T.softmax(s, axis=-2)


def log_dual_softmax(scores):
    """log of `dual_softmax`, computed stably for training losses."""
    s = scores if isinstance(scores, Tensor) else Tensor(scores)
    return T.log_softmax(s, axis=-1) + T.log_softmax(s, axis=-2)


def mutual_matches(conf, theta_c):
    """Mutual row/column argmax pairs with confidence above the threshold."""
    conf = np.asarray(conf)
    row_best = conf.argmax(axis=1)
    col_best = conf.argmax(axis=0)
    ia = np.arange(conf.shape[0])
    mutual = col_best[row_best] == ia
    keep = mutual & (conf[ia, row_best] > theta_c)
    idx_a = ia[keep]
    idx_b = row_best[keep]
    return idx_a, idx_b, conf[idx_a, idx_b]


def l2_normalize(x, eps=1e-8):
    n2 = T.sum_(x * x, axis=-1, keepdims=True)
    return x * ((n2 + eps) ** -0.5)


class MultiHeadAttention(Module):
    def __init__(self, d_model, n_heads, rng, dtype=np.float32):
        super().__init__()
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng=rng, dtype=dtype)
        # a key bias shifts every score in a row by the same amount, which
        # softmax cancels exactly; it would be a dead parameter
        self.wk = Linear(d_model, d_model, bias=False, rng=rng, dtype=dtype)
        self.wv = Linear(d_model, d_model, rng=rng, dtype=dtype)
        self.wo = Linear(d_model, d_model, rng=rng, dtype=dtype)

    def __call__(self, x, source):
        b, t, d = x.shape
        s = source.shape[1]

        def split(v, n):
            return T.transpose(T.reshape(v, (b, n, self.n_heads, self.d_head)),
                               (0, 2, 1, 3))

        q = split(self.wq(x), t)
        k = split(self.wk(source), s)
        v = split(self.wv(source), s)
        scores = (q @ T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_head))
        attn = T.softmax(scores, axis=-1)
        out = T.reshape(T.transpose(attn @ v, (0, 2, 1, 3)), (b, t, d))
        return self.wo(out)


class AttentionBlock(Module):
    """Full attention + feed-forward, each with residual and layer norm."""

    def __init__(self, d_model, n_heads, rng, dtype=np.float32):
        super().__init__()
        self.mha = MultiHeadAttention(d_model, n_heads, rng, dtype)
        self.ln1_gain = Tensor(np.ones(d_model), requires_grad=True, dtype=dtype)
        self.ln1_bias = Tensor(np.zeros(d_model), requires_grad=True, dtype=dtype)
        self.ff1 = Linear(d_model, 2 * d_model, rng=rng, dtype=dtype)
        self.ff2 = Linear(2 * d_model, d_model, rng=rng, dtype=dtype)
        self.ln2_gain = Tensor(np.ones(d_model), requires_grad=True, dtype=dtype)
        self.ln2_bias = Tensor(np.zeros(d_model), requires_grad=True, dtype=dtype)

    def __call__(self, x, source):
        x = T.layer_norm(x + self.mha(x, source), self.ln1_gain, self.ln1_bias)
        x = T.layer_norm(x + self.ff2(T.relu(self.ff1(x))), self.ln2_gain, self.ln2_bias)
        return x


class CoarseMatcher(Module):
    """Stage 2-3: projection, alternating self/cross attention, dual-softmax
    matching with mutual-max selection."""

    def __init__(self, coarse_dim, cfg, rng=None, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = rng or np.random.default_rng(0)
        self.proj = Linear(coarse_dim, cfg.d_model, rng=rng, dtype=dtype)
        self.blocks = [AttentionBlock(cfg.d_model, cfg.n_heads, rng, dtype)
                       for _ in range(cfg.n_blocks)]
        self.kinds = ["self" if i % 2 == 0 else "cross" for i in range(cfg.n_blocks)]

    def transform(self, fa, fb):
        """Project and run the attention stack on [b, t, d] sequences.
        Cross blocks update both sides in parallel with shared weights."""
        if self.cfg.bypass_attention:
            return fa, fb
        fa = self.proj(fa)
        fb = self.proj(fb)
        for blk, kind in zip(self.blocks, self.kinds):
            if kind == "self":
                fa, fb = blk(fa, fa), blk(fb, fb)
            else:
                fa, fb = blk(fa, fb), blk(fb, fa)
        return fa, fb

    def similarity(self, fa, fb):
        """Temperature-scaled cosine similarity between [t, d] sequences."""
        fa = l2_normalize(fa)
        fb = l2_normalize(fb)
        return (fa @ T.transpose(fb, (1, 0))) * (1.0 / self.cfg.temperature)

    def confidence(self, feat_a, feat_b):
        """Full coarse pipeline for one pair of [d, hc, wc] maps -> (P, grids)."""
        if feat_a.shape[0] != feat_b.shape[0]:
            raise ValueError("coarse feature widths differ between images")
        grids = (feat_a.shape[1:], feat_b.shape[1:])
        fa = _flatten_map(add_positional_encoding(feat_a))
        fb = _flatten_map(add_positional_encoding(feat_b))
        fa, fb = self.transform(_unsqueeze(fa), _unsqueeze(fb))
        s = self.similarity(fa[0], fb[0])
        return dual_softmax(s), grids

    def match(self, feat_a, feat_b):
        conf, (ga, gb) = self.confidence(feat_a, feat_b)
        idx_a, idx_b, c = mutual_matches(conf.data, self.cfg.theta_c)
        return CoarseMatchSet(idx_a=idx_a, idx_b=idx_b, confidence=c,
                              grid_a=ga, grid_b=gb)


def _flatten_map(x):
    d = x.shape[0]
    return T.transpose(T.reshape(x, (d, x.shape[1] * x.shape[2])), (1, 0))


def _unsqueeze(x):
    return T.reshape(x, (1,) + x.shape)


class FineMatcher(Module):
    """Stage 4: window cropping, one self+cross attention block, center-vector
    correlation, heatmap expectation."""

    def __init__(self, fine_dim, cfg, rng=None, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.fine_dim = fine_dim
        rng = rng or np.random.default_rng(0)
        heads = min(cfg.n_heads, fine_dim)
        self.self_block = AttentionBlock(fine_dim, heads, rng, dtype)
        self.cross_block = AttentionBlock(fine_dim, heads, rng, dtype)

    def window_centers(self, match_set):
        """Fine-grid window centers for each coarse match; (n, 2) as (row, col)."""
        per = self.cfg.coarse_cell // self.cfg.fine_stride
        ha, wa = match_set.grid_a
        hb, wb = match_set.grid_b
        ra, ca = np.divmod(match_set.idx_a, wa)
        rb, cb = np.divmod(match_set.idx_b, wb)
        off = per // 2
        return (np.stack([ra * per + off, ca * per + off], axis=1),
                np.stack([rb * per + off, cb * per + off], axis=1))

    def offsets(self, fine_a, fine_b, centers_a, centers_b):
        """Differentiable subpixel offsets (fine cells) for in-bounds windows.

        Returns (dx, dy, heat) Tensors over the given centers; callers must
        have filtered out-of-bounds windows already.
        """
        w = self.cfg.fine_window
        wa = T.crop_windows(fine_a, centers_a, w)   # [n, C, w, w]
        wb = T.crop_windows(fine_b, centers_b, w)
        n = wa.shape[0]
        ta = T.transpose(T.reshape(wa, (n, self.fine_dim, w * w)), (0, 2, 1))
        tb = T.transpose(T.reshape(wb, (n, self.fine_dim, w * w)), (0, 2, 1))
        ta, tb = self.self_block(ta, ta), self.self_block(tb, tb)
        ta, tb = self.cross_block(ta, tb), self.cross_block(tb, ta)
        center = (w * w - 1) // 2
        ca = ta[:, center:center + 1, :]            # [n, 1, d]
        scores = (ca @ T.transpose(tb, (0, 2, 1))) * (1.0 / np.sqrt(self.fine_dim))
        heat = T.softmax(T.reshape(scores, (n, w * w)), axis=-1)
        r = w // 2
        grid = np.arange(w * w)
        col_off = Tensor((grid % w - r).astype(fine_a.dtype).reshape(w * w, 1))
        row_off = Tensor((grid // w - r).astype(fine_a.dtype).reshape(w * w, 1))
        dx = T.reshape(heat @ col_off, (n,))
        dy = T.reshape(heat @ row_off, (n,))
        return dx, dy, heat

    def refine(self, fine_a, fine_b, match_set):
        """Subpixel matches for a CoarseMatchSet; drops windows that leave the
        fine maps (no padding) and reports how many were dropped."""
        cfg = self.cfg
        w = cfg.fine_window
        r = w // 2
        centers_a, centers_b = self.window_centers(match_set)
        ha, wa_ = fine_a.shape[1:]
        hb, wb_ = fine_b.shape[1:]

        def inside(c, h, ww):
            return ((c[:, 0] >= r) & (c[:, 0] < h - r)
                    & (c[:, 1] >= r) & (c[:, 1] < ww - r))

        keep = inside(centers_a, ha, wa_) & inside(centers_b, hb, wb_)
        dropped = int((~keep).sum())
        if not keep.any():
            return [], dropped
        ca, cb = centers_a[keep], centers_b[keep]
        dx, dy, _ = self.offsets(fine_a, fine_b, ca, cb)
        cell = cfg.coarse_cell
        stride = cfg.fine_stride
        wa = match_set.grid_a[1]
        wb = match_set.grid_b[1]
        out = []
        for i, m_idx in enumerate(np.nonzero(keep)[0]):
            ra_, ca_ = divmod(int(match_set.idx_a[m_idx]), wa)
            point_a = ((ca_ + 0.5) * cell, (ra_ + 0.5) * cell)
            bx = (cb[i, 1] + 0.5 + float(dx.data[i])) * stride
            by = (cb[i, 0] + 0.5 + float(dy.data[i])) * stride
            out.append(FineMatch(point_a=point_a, point_b=(bx, by),
                                 confidence=float(match_set.confidence[m_idx])))
        return out, dropped


def write_match_file(path, matches):
    """One line per match: `xA yA xB yB confidence`, 6 decimal places."""
    with open(path, "w", encoding="utf-8") as f:
        for m in matches:
            f.write(f"{m.point_a[0]:.6f} {m.point_a[1]:.6f} "
                    f"{m.point_b[0]:.6f} {m.point_b[1]:.6f} {m.confidence:.6f}\n")


def read_match_file(path):
    matches = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            xa, ya, xb, yb, c = (float(v) for v in line.split())
            matches.append(FineMatch(point_a=(xa, ya), point_b=(xb, yb), confidence=c))
    return matches
