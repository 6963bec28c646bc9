"""Frozen VGG16 convolutional backbone with pluggable weight sources."""

from __future__ import annotations

import torch
from torchvision.models import VGG16_Weights, vgg16

FEATURE_DIM = 512


def load_backbone(weights: str = "imagenet") -> torch.nn.Module:
    """Return the VGG16 conv stack (classifier removed), frozen, in eval mode.

    ``weights`` selects the source:

    * ``"imagenet"``: torchvision's pretrained checkpoint (downloaded or read
      from the local torch hub cache). This is the real backbone.
    * ``"random:SEED"``: a fresh seeded Kaiming initialisation. Features are
      deterministic but meaningless for actual quality scoring; useful for
      offline smoke tests of the extraction and file plumbing.
    * anything else: path to a ``torch.save``'d state dict, either of the
      full VGG16 model (``features.*`` keys) or of the conv stack alone.
    """
    if weights == "imagenet":
        try:
            model = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise RuntimeError(
                "could not load pretrained VGG16 weights (no network and no "
                "local cache?); pass --weights PATH or --weights random:SEED"
            ) from exc
        stack = model.features
    elif weights.startswith("random:"):
        try:
            seed = int(weights.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"expected random:SEED with integer seed, got {weights!r}")
        # The constructor runs Kaiming init off the global RNG; seeding it
        # makes the whole stack a deterministic function of the seed.
        torch.manual_seed(seed)
        stack = vgg16(weights=None).features
    else:
        state = torch.load(weights, map_location="cpu", weights_only=True)
        if any(key.startswith("features.") for key in state):
            model = vgg16(weights=None)
            model.load_state_dict(state)
            stack = model.features
        else:
            stack = vgg16(weights=None).features
            stack.load_state_dict(state)

    stack.requires_grad_(False)
    stack.eval()
    return stack
