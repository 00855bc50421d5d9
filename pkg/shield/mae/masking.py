from dataclasses import dataclass
import math

import numpy as np

from shield.mae.tokenizer import TokenSequence


@dataclass(frozen=True)
class MaskedSequence:
    base: TokenSequence
    masked_positions: tuple[int, ...]
    mask_ratio: float

    def masked_ids(self, mask_id: int) -> list[int]:
        ids = list(self.base.ids)
        for position in self.masked_positions:
            ids[position] = mask_id
        return ids


def mask_count(length: int, ratio: float) -> int:
    """Posiciones a enmascarar: round(ratio × longitud enmascarable), mínimo 1."""
    maskable = length - 1
    if maskable <= 0:
        return 0
    # redondeo half-up explícito (round() de Python redondea al par)
    count = max(1, math.floor(ratio * maskable + 0.5))
    return min(count, maskable)


# ======================================================
# Función: mask
# ======================================================
def mask(x: TokenSequence, ratio_range: tuple[float, float], seed: int) -> MaskedSequence:
    """
    Enmascara posiciones aleatorias de una secuencia, nunca la posición 0 ([CLS]).

    La proporción se sortea de forma uniforme en `ratio_range` y las posiciones se
    eligen sin reemplazo; el resultado es determinista dado (x, ratio_range, seed).
    Una secuencia de longitud 1 no tiene posiciones enmascarables.
    """
    if len(x) == 0:
        raise ValueError("No se puede enmascarar una secuencia vacía")
    low, high = ratio_range
    rng = np.random.default_rng(seed)
    ratio = float(low) if low == high else float(rng.uniform(low, high))
    count = mask_count(len(x), ratio)
    if count == 0:
        return MaskedSequence(x, (), ratio)
    positions = rng.choice(np.arange(1, len(x)), size=count, replace=False)
    return MaskedSequence(x, tuple(sorted(int(p) for p in positions)), ratio)
