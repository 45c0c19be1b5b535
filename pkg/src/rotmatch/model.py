"""Full matching model: backbone + coarse matcher + fine refiner, with
checkpoint save/load (config text stored alongside the binary state).
"""

import os

import numpy as np

from .backbone import Backbone
from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, load_config
from .matcher import CoarseMatcher, FineMatcher
from .nn import Module
from .tensor import Tensor


class MatcherModel(Module):
    def __init__(self, config, rng=None, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        rng = rng or np.random.default_rng(config.train.seed)
        self.backbone = Backbone(config.backbone, rng=rng, dtype=dtype)
        self.coarse = CoarseMatcher(config.backbone.coarse_dim, config.matcher,
                                    rng=rng, dtype=dtype)
        self.fine = FineMatcher(config.backbone.fine_dim, config.matcher,
                                rng=rng, dtype=dtype)

    def features(self, images):
        """Backbone features for a [b, 3, h, w] batch -> (coarse, fine)."""
        return self.backbone(images)

    def match_pair(self, img_a, img_b):
        """Match two [3, h, w] images in eval mode.

        Returns (CoarseMatchSet, list[FineMatch], n_dropped_windows). Safe to
        call concurrently once the model is already in eval mode (the model
        is then read-only).
        """
        was_training = self.training
        if was_training:
            self.eval()
        try:
            imgs = np.stack([np.asarray(img_a, dtype=np.float32),
                             np.asarray(img_b, dtype=np.float32)])
            coarse, fine = self.backbone(Tensor(imgs))
            feat_ca = Tensor(coarse.data[0])
            feat_cb = Tensor(coarse.data[1])
            mset = self.coarse.match(feat_ca, feat_cb)
            matches, dropped = self.fine.refine(Tensor(fine.data[0]),
                                                Tensor(fine.data[1]), mset)
        finally:
            if was_training:
                self.train(True)
        return mset, matches, dropped


def save_model(path, model):
    """Write the checkpoint plus a sibling `<path>.config` with the config text."""
    save_checkpoint(path, model.state_dict())
    with open(str(path) + ".config", "w", encoding="utf-8") as f:
        f.write(model.config.to_text())


def load_model(path, dtype=np.float32):
    cfg_path = str(path) + ".config"
    if os.path.exists(cfg_path):
        config = load_config(cfg_path)
    else:
        config = Config.default()
    model = MatcherModel(config, dtype=dtype)
    model.load_state_dict(load_checkpoint(path))
    return model
