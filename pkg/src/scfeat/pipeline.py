"""Whole-model container and the keypoint + descriptor extraction pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import BackboneConfig, BackboneWeights, backbone_forward, init_backbone, layer_specs
from .bridge import CrossNormParams, cross_norm
from .detector import DetectionHeadWeights, DetectorConfig, KeypointSet, detection_forward, init_head, nms_topk
from .matching import DescriptorSet, extract_descriptors
from .nn import Bundle, ConvUnit, load_bundle, save_bundle
from .rng import derive_seed, uniform
from .tensor import FormatError, Tensor, bilinear_resize

HEAD_NAMES = ("head.layer0_left", "head.layer0_right", "head.layer1", "head.layer2")


@dataclass(frozen=True)
class SCFeatModel:
    config: BackboneConfig
    backbone: BackboneWeights
    bridge: CrossNormParams
    head: DetectionHeadWeights


def toy_model(seed: int, config: BackboneConfig = BackboneConfig(), head_channels: int = 16) -> SCFeatModel:
    """Seeded random weights; the bridge starts at its initial values, frozen."""
    return SCFeatModel(
        config=config,
        backbone=init_backbone(config, derive_seed(seed, 0)),
        bridge=CrossNormParams.initial(config.fused_channels, status="frozen"),
        head=init_head(config.fused_channels, config.encoder_channels[0], derive_seed(seed, 1), head_channels),
    )


# Bundle keys: every conv unit <name> stores <name>.kernel/.bias/.gain/.shift
# arrays and <name>.stride/.padding/.act/.norm/.groups/.eps[/.slope] metadata;
# the bridge stores bridge.<param> arrays plus bridge.eps and bridge.status;
# the backbone config is kept under config.<key>.


def save_model(directory, model: SCFeatModel) -> None:
    bundle = Bundle()
    units = dict(model.backbone.units)
    units.update(model.head.units())
    for name, unit in units.items():
        bundle.arrays.update(unit.to_arrays(name))
        bundle.meta.update(unit.to_meta(name))
    for key, arr in model.bridge.as_dict().items():
        bundle.arrays[f"bridge.{key}"] = arr
    bundle.meta["bridge.eps"] = repr(model.bridge.eps)
    bundle.meta["bridge.status"] = model.bridge.status
    for line in model.config.to_text().splitlines():
        key, value = line.split("=", 1)
        bundle.meta[f"config.{key}"] = value
    save_bundle(directory, bundle)


def load_model(directory) -> SCFeatModel:
    bundle = load_bundle(directory)
    cfg_text = "".join(f"{k[len('config.'):]}={v}\n" for k, v in bundle.meta.items() if k.startswith("config."))
    try:
        config = BackboneConfig.from_text(cfg_text)
        bridge = CrossNormParams(
            **{k: bundle.arrays[f"bridge.{k}"] for k in ("gamma_s", "beta_s", "w_s", "gamma_c", "beta_c", "w_c")},
            eps=float(bundle.meta["bridge.eps"]), status=bundle.meta["bridge.status"],
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{directory}: incomplete model bundle ({exc})") from None
    backbone = BackboneWeights({name: ConvUnit.from_bundle(bundle, name) for name, *_ in layer_specs(config)})
    head = DetectionHeadWeights(*(ConvUnit.from_bundle(bundle, name) for name in HEAD_NAMES))
    return SCFeatModel(config, backbone, bridge, head)


@dataclass(frozen=True)
class Features:
    keypoints: KeypointSet
    descriptors: DescriptorSet
    score_map: Tensor


def score_image(image: Tensor, model: SCFeatModel):
    """Dense descriptors and the final score map for one image."""
    out = backbone_forward(image, model.config, model.backbone)
    f_cn = cross_norm(out.d_desc, model.bridge)
    score = detection_forward(image, f_cn, out.f0, model.head)
    return out.d_desc, score


def extract_features(image: Tensor, model: SCFeatModel, det: DetectorConfig) -> Features:
    """Keypoints from the detection head, descriptors from the pre-bridge map."""
    d_desc, score = score_image(image, model)
    kps = nms_topk(score, det)
    desc = extract_descriptors(d_desc, kps, (image.height, image.width))
    return Features(kps, desc, score)


def textured_image(height: int, width: int, seed: int) -> Tensor:
    """Deterministic smooth random RGB texture in [0, 1], for fixtures and demos."""
    coarse = uniform(seed, (height // 4) * (width // 4) * 3).reshape(height // 4, width // 4, 3)
    fine = uniform(derive_seed(seed, 1), height * width * 3).reshape(height, width, 3)
    smooth = bilinear_resize(Tensor(coarse), height, width).array.astype(np.float64)
    return Tensor(np.clip(0.75 * smooth + 0.25 * fine, 0.0, 1.0))
