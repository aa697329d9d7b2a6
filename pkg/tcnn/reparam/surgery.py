# tcnn/reparam/surgery.py
"""
Reparametrization of trained convolutions into GPSA layers.

A k x k convolution becomes a GPSA layer with N_h = k^2 heads: head h attends
to the pixel at offset Delta_h = (k_row - (k-1)/2, k_col - (k-1)/2), the shared
value projection is the identity and W_out_h is the filter slice at (k_row,
k_col). Queries and keys start at zero, so only the positional term is active.
"""
from typing import List, Optional, Tuple

import numpy as np

from tcnn.core.exceptions import DimensionError, SurgeryError, UnsupportedError
from tcnn.model.resnet import ResNet, forward_classify
from tcnn.nn.gpsa import DEFAULT_BETA, GpsaLayer, alpha_raw_for
from tcnn.nn.layers import AvgPool2d, Conv2d, Crop2d, Pad2d
from tcnn.nn.module import Module
from tcnn.schemas.reparam import InitMode, SurgeryReport
from tcnn.tensor.tensor import Tensor, no_grad
from tcnn.utils.logging import logger
from tcnn.utils.rng import stream


def head_centers(k: int) -> List[Tuple[float, float]]:
    """Offsets of a k x k kernel in row-major (k_row, k_col) order; head h <-> filter pixel h."""
    if k < 1 or k % 2 == 0:
        raise UnsupportedError("Only odd kernel sizes can be reparametrized", detail=f"k={k}")
    half = (k - 1) // 2
    return [(float(r - half), float(c - half)) for r in range(k) for c in range(k)]


def added_parameters(layer: GpsaLayer) -> int:
    """Parameters a GPSA layer has on top of the convolution it replaces."""
    return (2 * layer.n_heads * layer.d_in * layer.d_head + layer.d_in * layer.d_in
            + 4 * layer.n_heads)


def conv_to_gpsa(conv: Conv2d, mode: InitMode, beta: float = DEFAULT_BETA,
                 content_scale: bool = True) -> GpsaLayer:
    """
    GPSA layer reproducing `conv` (at stride 1, on an explicitly padded input).

    Raises:
        UnsupportedError: For even kernels
    """
    k = conv.kernel_size
    centers = head_centers(k)
    d_in, d_out = conv.in_channels, conv.out_channels
    if d_out < d_in:
        logger.warning(f"GPSA output width {d_out} < input width {d_in}: per-head maps W_val W_out_h are rank-limited")
    layer = GpsaLayer(d_in, d_out, n_heads=k * k, bias=conv.bias is not None, beta=beta,
                      content_scale=content_scale, alpha_init=mode.alpha_init,
                      lambda_init=mode.lambda_init, dtype=conv.weight.dtype)
    layer.w_qry.assign(np.zeros(layer.w_qry.shape))
    layer.w_key.assign(np.zeros(layer.w_key.shape))
    layer.w_val.assign(np.eye(d_in))
    # C_out x C_in x k x k -> (k*k) x C_in x C_out, row-major over (k_row, k_col)
    layer.w_out.assign(conv.weight.data.transpose(2, 3, 1, 0).reshape(k * k, d_in, d_out))
    layer.alpha_raw.assign(np.full(k * k, alpha_raw_for(mode.alpha_init, beta)))
    layer.centers.assign(np.asarray(centers))
    layer.gate.assign(np.full(k * k, mode.lambda_init))
    if conv.bias is not None:
        layer.bias.assign(conv.bias.data)
    return layer


class PaddedGpsa(Module):
    """
    Pad -> GPSA -> center crop (-> pooling for a replaced stride-2 convolution).

    GPSA runs on the zero-padded grid so that border pixels see the same
    neighbourhood as under the padded convolution.
    The pooling keeps partial windows on odd grids, so the output matches the
    ceil(H / 2) x ceil(W / 2) grid of the strided convolution.
    """

    def __init__(self, gpsa: GpsaLayer, pad: int, stride: int = 1, pool_window: int = 2):
        super().__init__()
        self.pad = Pad2d(pad)
        self.gpsa = gpsa
        self.crop = Crop2d(pad)
        self.pool = AvgPool2d(pool_window, stride, ceil_mode=True) if stride > 1 else None
        self.stride = stride

    @classmethod
    def from_conv(cls, conv: Conv2d, mode: InitMode, beta: float = DEFAULT_BETA,
                  content_scale: bool = True) -> "PaddedGpsa":
        if conv.padding != (conv.kernel_size - 1) // 2:
            raise UnsupportedError("Only 'same' padded convolutions can be reparametrized",
                                   detail=f"k={conv.kernel_size} padding={conv.padding}")
        if conv.stride > 2:
            raise UnsupportedError("Stride above 2 is not supported", detail=str(conv.stride))
        return cls(conv_to_gpsa(conv, mode, beta, content_scale), conv.padding, conv.stride, mode.pool_window)

    def forward(self, x: Tensor) -> Tensor:
        out = self.crop(self.gpsa(self.pad(x)))
        return self.pool(out) if self.pool is not None else out


def transform_last_stage(model: ResNet, mode: InitMode, beta: float = DEFAULT_BETA,
                         content_scale: bool = True) -> Tuple[ResNet, SurgeryReport]:
    """
    Replace every 3x3 convolution of the last stage by a PaddedGpsa.

    The input model is left untouched; BatchNorm, shortcuts and the classifier
    are carried over unchanged.

    Raises:
        SurgeryError: If the stage was already transformed
    """
    stage_index = len(model.stages) - 1
    if any(isinstance(m, (GpsaLayer, PaddedGpsa)) for m in model.stages[stage_index].modules()):
        logger.error("Refusing to transform an already transformed stage")
        raise SurgeryError("Last stage is already transformed", detail=f"stages.{stage_index}")
    hybrid = model.clone()
    params_before = hybrid.num_parameters()
    replaced: List[str] = []
    expected = 0
    for b, block in enumerate(hybrid.stages[stage_index]):
        for attr, child in list(block._modules.items()):
            if isinstance(child, Conv2d) and child.kernel_size == 3:
                padded = PaddedGpsa.from_conv(child, mode, beta, content_scale)
                setattr(block, attr, padded)
                replaced.append(f"stages.{stage_index}.{b}.{attr}")
                expected += added_parameters(padded.gpsa)
    if not replaced:
        logger.warning(f"No 3x3 convolution in stages.{stage_index}; nothing transformed")
        return hybrid, SurgeryReport(mode=mode.kind, params_before=params_before, params_after=params_before,
                                     params_added_expected=0)
    hybrid.transform = dict(mode.dict(), beta=beta, content_scale=content_scale)
    report = SurgeryReport(mode=mode.kind, layers_replaced=replaced, params_before=params_before,
                           params_after=hybrid.num_parameters(), params_added_expected=expected)
    logger.info(f"Replaced {len(replaced)} convolutions ({mode.kind} mode): "
                f"{report.params_before} -> {report.params_after} parameters")
    return hybrid, report


def verify_equivalence(a: ResNet, b: ResNet, n_probes: int = 100, tol: float = 1e-3,
                       resolution: Optional[int] = None, seed: int = 0, batch: int = 4) -> SurgeryReport:
    """
    Compare two models on seeded random inputs in eval mode.

    Returns:
        SurgeryReport: Max abs and rel deviation over the probes and pass/fail at `tol`

    Raises:
        DimensionError: If the models do not share input and output signatures
    """
    if (a.config.input_channels, a.config.n_classes) != (b.config.input_channels, b.config.n_classes):
        raise DimensionError("Models have different signatures",
                             detail=f"{a.config.input_channels}->{a.config.n_classes} vs "
                                    f"{b.config.input_channels}->{b.config.n_classes}")
    resolution = resolution or a.config.resolution
    rng = stream(seed, "probe")
    modes = (a.training, b.training)
    a.eval()
    b.eval()
    max_abs = 0.0
    max_ref = 0.0
    try:
        with no_grad():
            done = 0
            while done < n_probes:
                n = min(batch, n_probes - done)
                x = Tensor(rng.standard_normal((n, a.config.input_channels, resolution, resolution)),
                           dtype=a.fc.weight.dtype)
                out_a = forward_classify(a, x).data.astype(np.float64)
                out_b = forward_classify(b, x.astype(b.fc.weight.dtype)).data.astype(np.float64)
                if out_a.shape != out_b.shape:
                    raise DimensionError("Model outputs differ in shape", detail=f"{out_a.shape} vs {out_b.shape}")
                max_abs = max(max_abs, float(np.max(np.abs(out_a - out_b))))
                max_ref = max(max_ref, float(np.max(np.abs(out_a))))
                done += n
    finally:
        a.train(modes[0])
        b.train(modes[1])
    max_rel = max_abs / max_ref if max_ref > 0 else max_abs
    passed = max_abs <= tol
    report = SurgeryReport(mode=(b.transform or {}).get("kind"), n_probes=n_probes, resolution=resolution,
                           params_before=a.num_parameters(), params_after=b.num_parameters(),
                           max_abs_dev=max_abs, max_rel_dev=max_rel, tol=tol, passed=passed)
    logger.info(f"Equivalence over {n_probes} probes at {resolution}x{resolution}: "
                f"max abs {max_abs:.3e}, max rel {max_rel:.3e} -> {'pass' if passed else 'fail'}")
    return report
