# tcnn/train/groups.py
from typing import Dict, List, Set, Tuple

from tcnn.nn.gpsa import GpsaLayer
from tcnn.nn.layers import BatchNorm2d
from tcnn.nn.module import Module, Parameter

GATE = "gate"
# GPSA scalars: locality strength, centers, gate
POSITIONAL = ("alpha_raw", "centers", "gate")


def param_groups(model: Module) -> Dict[str, List[Tuple[str, Parameter]]]:
    """Partition named parameters into gating parameters (lambda of every GPSA layer) and the rest."""
    gate_names = {f"{path}.{GATE}" if path else GATE
                  for path, m in model.named_modules() if isinstance(m, GpsaLayer)}
    groups: Dict[str, List[Tuple[str, Parameter]]] = {"gates": [], "rest": []}
    for name, p in model.named_parameters():
        groups["gates" if name in gate_names else "rest"].append((name, p))
    return groups


def no_decay_names(model: Module) -> Set[str]:
    """Parameters exempt from weight decay: GPSA scalars, biases and BatchNorm affine parameters."""
    names = set()
    for path, m in model.named_modules():
        prefix = f"{path}." if path else ""
        for attr, p in m._params.items():
            if p is None:
                continue
            if attr == "bias" or isinstance(m, BatchNorm2d) or (isinstance(m, GpsaLayer) and attr in POSITIONAL):
                names.add(prefix + attr)
    return names
