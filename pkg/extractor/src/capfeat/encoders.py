"""Encoder registry: torchvision classifiers and where their last spatial
feature map lives.

Each entry names the submodule whose output is the final convolutional
activation (everything after it is classification head: global pooling,
dropout, linear layers). Features are captured with a forward hook while
the untouched model runs its own canonical forward pass, so architecture
quirks (GoogLeNet's input transform, auxiliary heads) behave exactly as
published.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable
from urllib.error import URLError

import torch
from torch import nn
from torchvision import models

from .exceptions import DataError, UsageError


@dataclass(frozen=True)
class EncoderSpec:
    """One zoo model: how to build it and where to tap features.

    feature_dim is the channel width of the last spatial map; captured
    activations are checked against it at extraction time.
    """

    name: str
    feature_dim: int
    builder: Callable[..., nn.Module]
    capture: str
    relu_after: bool = False
    random_kwargs: dict = field(default_factory=dict)
    truncation: str = "drop classification head after last spatial feature map"


def _spec(name, dim, builder, capture, **kw) -> tuple[str, EncoderSpec]:
    return name, EncoderSpec(name, dim, builder, capture, **kw)


REGISTRY: dict[str, EncoderSpec] = dict([
    _spec("alexnet", 256, models.alexnet, "features"),
    _spec("squeezenet1_0", 512, models.squeezenet1_0, "features"),
    _spec("vgg11_bn", 512, models.vgg11_bn, "features"),
    _spec("vgg13_bn", 512, models.vgg13_bn, "features"),
    _spec("vgg16_bn", 512, models.vgg16_bn, "features"),
    _spec("vgg19_bn", 512, models.vgg19_bn, "features"),
    _spec("resnet18", 512, models.resnet18, "layer4"),
    _spec("resnet34", 512, models.resnet34, "layer4"),
    _spec("resnet50", 2048, models.resnet50, "layer4"),
    _spec("resnet101", 2048, models.resnet101, "layer4"),
    _spec("resnet152", 2048, models.resnet152, "layer4"),
    _spec("resnext101_32x8d", 2048, models.resnext101_32x8d, "layer4"),
    _spec("wide_resnet101_2", 2048, models.wide_resnet101_2, "layer4"),
    _spec("densenet121", 1024, models.densenet121, "features", relu_after=True),
    _spec("densenet169", 1664, models.densenet169, "features", relu_after=True),
    _spec("densenet201", 1920, models.densenet201, "features", relu_after=True),
    _spec("densenet161", 2208, models.densenet161, "features", relu_after=True),
    _spec("googlenet", 1024, models.googlenet, "inception5b",
          random_kwargs={"init_weights": True}),
    _spec("shufflenet_v2_x1_0", 1024, models.shufflenet_v2_x1_0, "conv5"),
    _spec("mobilenet_v2", 1280, models.mobilenet_v2, "features"),
    _spec("mnasnet1_0", 1280, models.mnasnet1_0, "layers"),
])


def encoder_names() -> list[str]:
    return sorted(REGISTRY)


def encoder_spec(name: str) -> EncoderSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UsageError(
            f"unknown encoder {name!r}; supported: {', '.join(encoder_names())}"
        ) from None


def build_model(name: str, weights: str = "pretrained", seed: int = 0) -> nn.Module:
    """Construct the full classification model in eval mode.

    weights="pretrained" loads the zoo's default ImageNet checkpoint;
    weights="random" seeds torch and uses fresh initialization (useful for
    offline smoke tests, the features are meaningless for captioning).
    """
    spec = encoder_spec(name)
    if weights == "random":
        torch.manual_seed(seed)
        model = spec.builder(weights=None, **spec.random_kwargs)
    elif weights == "pretrained":
        try:
            model = spec.builder(weights="DEFAULT")
        except (URLError, OSError, RuntimeError) as exc:
            raise DataError(
                f"pretrained weights for {name!r} unavailable ({exc}); "
                "pre-populate TORCH_HOME or pass --weights random"
            ) from exc
    else:
        raise UsageError(f"weights must be 'pretrained' or 'random', got {weights!r}")
    model.eval()
    return model


def capture_module(model: nn.Module, spec: EncoderSpec) -> nn.Module:
    """Resolve the submodule whose output is the last spatial feature map."""
    try:
        return model.get_submodule(spec.capture)
    except AttributeError as exc:
        raise DataError(
            f"{spec.name}: submodule {spec.capture!r} not found; "
            "torchvision layout may have changed"
        ) from exc


def exact_parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def count_parameters(name: str) -> int:
    """Trainable parameters of the full (untruncated) classifier, in
    thousands, as published model-zoo complexity figures count them."""
    spec = encoder_spec(name)
    model = spec.builder(weights=None, **spec.random_kwargs)
    return round(exact_parameter_count(model) / 1000)
