from .common import PerturbationMask, attack_csv_rows, write_attack_outputs
from .deepfool import DeepfoolConfig, DegenerateGradient, deepfool_attack
from .jsma import JsmaConfig, jsma_attack, saliency_map, saliency_scores
from .squarebox import SquareConfig, square_attack

__all__ = [
    "DeepfoolConfig", "DegenerateGradient", "JsmaConfig", "PerturbationMask",
    "SquareConfig", "attack_csv_rows", "deepfool_attack", "jsma_attack",
    "saliency_map", "saliency_scores", "square_attack", "write_attack_outputs",
]
