"""
training.py
===========
Entrenamiento del MAE a nivel de evento y extracción de embeddings.

El objetivo conjunto suma, por evento:
1. Pérdida MLM del codificador sobre las posiciones enmascaradas (15–30%).
2. Pérdida de reconstrucción del decodificador sobre la secuencia completa, a partir de
   h_i y de una copia enmascarada de forma agresiva (50–70%).
"""

from dataclasses import dataclass, replace
import math
from pathlib import Path
from typing import Iterable, Sequence

from loguru import logger
import numpy as np
import torch
from tqdm import tqdm

from shield.config import BASE_VOCAB_PATH, DEFAULT_SEED, NUM_MASKS, MaeHyper
from shield.errors import EmptyTrainingSet, InvalidLogLabel, NonFiniteLoss
from shield.events import Event, EventLog
from shield.mae.masking import mask
from shield.mae.model import IGNORE_INDEX, EventMaeNetwork, MaeModel
from shield.mae.tokenizer import (
    TokenSequence,
    WordPieceTokenizer,
    build_vocab,
    event_to_sentence,
)

HELD_OUT_FRACTION = 0.05


@dataclass(frozen=True)
class EventEmbedding:
    vector: np.ndarray
    event_index: int


# ======================================================
# Lotes
# ======================================================
def _collate(
    seqs: Sequence[TokenSequence],
    enc_seeds: Sequence[int],
    dec_seeds: Sequence[int],
    tokenizer: WordPieceTokenizer,
    hyper: MaeHyper,
) -> tuple[torch.Tensor, ...]:
    width = max(len(s) for s in seqs)
    pad, mask_id = tokenizer.pad_id, tokenizer.mask_id

    def padded(ids: list[int], fill: int) -> list[int]:
        return ids + [fill] * (width - len(ids))

    enc_rows, dec_rows, mlm_rows, target_rows = [], [], [], []
    for seq, enc_seed, dec_seed in zip(seqs, enc_seeds, dec_seeds):
        enc = mask(seq, hyper.encode_mask_range, enc_seed)
        dec = mask(seq, hyper.decode_mask_range, dec_seed)
        labels = [IGNORE_INDEX] * len(seq)
        for position in enc.masked_positions:
            labels[position] = seq.ids[position]
        # el decodificador reconstruye todo salvo el token resumen
        targets = [IGNORE_INDEX] + list(seq.ids[1:])
        enc_rows.append(padded(enc.masked_ids(mask_id), pad))
        dec_rows.append(padded(dec.masked_ids(mask_id), pad))
        mlm_rows.append(padded(labels, IGNORE_INDEX))
        target_rows.append(padded(targets, IGNORE_INDEX))
    rows = (enc_rows, dec_rows, mlm_rows, target_rows)
    return tuple(torch.tensor(r, dtype=torch.long) for r in rows)


def _held_out_loss(
    network: EventMaeNetwork,
    seqs: Sequence[TokenSequence],
    tokenizer: WordPieceTokenizer,
    hyper: MaeHyper,
    seed: int,
) -> float:
    """Pérdida total sobre el conjunto de validación con máscaras fijas (sin dropout)."""
    network.eval()
    total, batches = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(seqs), hyper.batch_size):
            chunk = seqs[start : start + hyper.batch_size]
            seeds = [seed + start + i for i in range(len(chunk))]
            dec_seeds = [s + 1_000_003 for s in seeds]
            enc_loss, dec_loss = network(*_collate(chunk, seeds, dec_seeds, tokenizer, hyper))
            total += float(enc_loss + dec_loss)
            batches += 1
    return total / max(batches, 1)


# ======================================================
# Función: train
# ======================================================
def train(
    d_tr: EventLog,
    hyper: MaeHyper | None = None,
    epochs: int | None = None,
    seed: int = DEFAULT_SEED,
    vocab_path: Path = BASE_VOCAB_PATH,
    extend_vocab: bool = True,
) -> MaeModel:
    """
    Entrena el autoencoder enmascarado sobre un log benigno.

    Parámetros
    ----------
    d_tr : EventLog
        Log de entrenamiento (etiqueta "training").
    hyper : MaeHyper, opcional
        Hiperparámetros del modelo; por defecto los de `config.py`.
    epochs : int, opcional
        Sobrescribe `hyper.epochs`.
    seed : int
        Semilla de pesos, partición de validación y máscaras.
    vocab_path : Path
        Vocabulario base.
    extend_vocab : bool
        Añade al vocabulario las palabras del corpus vistas al menos dos veces.

    Retorna
    -------
    MaeModel
        Modelo en modo evaluación. `loss_history[0]` es la pérdida de validación antes
        de entrenar y cada entrada siguiente la de una época.

    Excepciones
    -----------
    EmptyTrainingSet
        Si el log no tiene eventos.
    NonFiniteLoss
        Si alguna pérdida deja de ser finita.
    """
    hyper = hyper or MaeHyper()
    if epochs is not None:
        hyper = replace(hyper, epochs=epochs)
    hyper.validate()
    if d_tr.label != "training":
        raise InvalidLogLabel(f"train espera un log 'training', recibió '{d_tr.label}'")
    if len(d_tr) == 0:
        raise EmptyTrainingSet("El log de entrenamiento está vacío")

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    sentences = [event_to_sentence(e) for e in d_tr]
    tokenizer = WordPieceTokenizer.from_file(vocab_path, max_seq_len=hyper.max_seq_len)
    if extend_vocab:
        tokenizer = tokenizer.extended(build_vocab(sentences))
    logger.info(f"🔤 Vocabulario: {len(tokenizer)} tokens")
    seqs = [tokenizer.tokenize(s) for s in sentences]

    order = rng.permutation(len(seqs))
    n_held = max(1, round(HELD_OUT_FRACTION * len(seqs))) if len(seqs) > 1 else 0
    held_out = [seqs[i] for i in order[:n_held]] or seqs
    train_set = [seqs[i] for i in order[n_held:]]

    network = EventMaeNetwork(len(tokenizer), hyper, pad_id=tokenizer.pad_id)
    optimizer = torch.optim.Adam(network.parameters(), lr=hyper.lr)

    history = [_held_out_loss(network, held_out, tokenizer, hyper, seed)]
    logger.info(f"🚀 Entrenando MAE: {len(train_set)} eventos, validación {len(held_out)}")
    logger.debug(f"Pérdida de validación inicial: {history[0]:.4f}")

    for epoch in tqdm(range(1, hyper.epochs + 1), desc="Entrenando MAE"):
        network.train()
        perm = rng.permutation(len(train_set))
        for start in range(0, len(perm), hyper.batch_size):
            chunk = [train_set[i] for i in perm[start : start + hyper.batch_size]]
            seeds = rng.integers(0, 2**31 - 1, size=(2, len(chunk)))
            batch = _collate(chunk, seeds[0].tolist(), seeds[1].tolist(), tokenizer, hyper)
            enc_loss, dec_loss = network(*batch)
            loss = enc_loss + dec_loss
            if not torch.isfinite(loss):
                logger.error(
                    f"Pérdida no finita en la época {epoch}, lote {start // hyper.batch_size}"
                )
                raise NonFiniteLoss(
                    f"Pérdida no finita (época {epoch}, lote {start // hyper.batch_size}): "
                    f"codificador={float(enc_loss)}, decodificador={float(dec_loss)}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

        held = _held_out_loss(network, held_out, tokenizer, hyper, seed)
        if not math.isfinite(held):
            raise NonFiniteLoss(f"Pérdida de validación no finita en la época {epoch}")
        history.append(held)
        logger.info(f"Época {epoch}/{hyper.epochs} - pérdida de validación: {held:.4f}")

    network.eval()
    logger.success(f"✅ MAE entrenado: pérdida {history[0]:.4f} → {history[-1]:.4f}")
    return MaeModel(network, tokenizer, hyper, history)


# ======================================================
# Embeddings
# ======================================================
def _embed_sequence(model: MaeModel, seq: TokenSequence, m: int, seed: int) -> np.ndarray:
    """Media de `m` embeddings con máscaras de codificación de semillas seed..seed+m-1."""
    masked = [
        mask(seq, model.hyper.encode_mask_range, seed + j).masked_ids(model.tokenizer.mask_id)
        for j in range(m)
    ]
    model.network.eval()
    with torch.no_grad():
        summaries = model.network.summary(torch.tensor(masked, dtype=torch.long))
    return summaries.double().mean(dim=0).numpy()


def embed(
    model: MaeModel,
    e: Event,
    m: int = NUM_MASKS,
    seed: int = DEFAULT_SEED,
    event_index: int = 0,
) -> EventEmbedding:
    if m < 1:
        raise ValueError("m debe ser >= 1")
    seq = model.tokenizer.tokenize(event_to_sentence(e))
    return EventEmbedding(_embed_sequence(model, seq, m, seed), event_index)


def embed_events(
    model: MaeModel,
    events: Iterable[Event],
    m: int = NUM_MASKS,
    seed: int = DEFAULT_SEED,
) -> np.ndarray:
    """
    Matriz (n_eventos, dim) de embeddings.

    Los eventos con la misma frase comparten embedding, así que solo se calcula una
    vez por frase distinta; el resultado no depende del orden de los eventos.
    """
    events = list(events)
    sentences = [event_to_sentence(e) for e in events]
    unique = sorted(set(sentences))
    cache: dict[str, np.ndarray] = {}
    for sentence in tqdm(unique, desc="Embeddings", disable=len(unique) < 200):
        cache[sentence] = _embed_sequence(model, model.tokenizer.tokenize(sentence), m, seed)
    if not events:
        return np.zeros((0, model.dim))
    return np.vstack([cache[s] for s in sentences])


# ======================================================
# Verificación de gradientes
# ======================================================
def gradient_check(
    sentences: Sequence[str] | None = None,
    n_params: int = 20,
    eps: float = 1e-6,
    seed: int = 0,
    vocab_path: Path = BASE_VOCAB_PATH,
) -> float:
    """
    Compara el gradiente analítico de la pérdida total con diferencias finitas centrales
    en una red pequeña (2 capas, dim 8, float64, sin dropout).

    Retorna el mayor error relativo sobre `n_params` parámetros escalares aleatorios.
    """
    sentences = sentences or [
        "EVENT_READ sh /usr/libexec/save-entropy",
        "EVENT_CONNECT curl 146.153.68.151:443",
        "EVENT_EXECUTE /usr/bin/vmstat /dev/hpet0",
    ]
    hyper = MaeHyper(dim=8, layers=2, heads=2, max_seq_len=32, dropout=0.0)
    tokenizer = WordPieceTokenizer.from_file(vocab_path, max_seq_len=hyper.max_seq_len)
    seqs = [tokenizer.tokenize(s) for s in sentences]

    torch.manual_seed(seed)
    network = EventMaeNetwork(len(tokenizer), hyper, pad_id=tokenizer.pad_id).double()
    network.eval()
    seeds = list(range(seed, seed + len(seqs)))
    batch = _collate(seqs, seeds, [s + 101 for s in seeds], tokenizer, hyper)

    def total_loss() -> torch.Tensor:
        enc_loss, dec_loss = network(*batch)
        return enc_loss + dec_loss

    network.zero_grad()
    total_loss().backward()

    rng = np.random.default_rng(seed)
    params = [p for p in network.parameters() if p.grad is not None]
    worst = 0.0
    for _ in range(n_params):
        param = params[int(rng.integers(len(params)))]
        flat = param.data.view(-1)
        index = int(rng.integers(flat.numel()))
        analytic = float(param.grad.view(-1)[index])
        original = float(flat[index])
        flat[index] = original + eps
        plus = float(total_loss())
        flat[index] = original - eps
        minus = float(total_loss())
        flat[index] = original
        numeric = (plus - minus) / (2 * eps)
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, error)
    logger.debug(f"Verificación de gradientes: error relativo máximo {worst:.2e}")
    return worst
