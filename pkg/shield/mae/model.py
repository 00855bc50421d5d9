"""
model.py
========
Red del autoencoder enmascarado a nivel de evento y su persistencia.

- Codificador bidireccional (transformer, activación GELU) con cabeza MLM.
- Decodificador de una sola capa que reconstruye la secuencia completa a partir de la
  representación del token resumen (h_i) y de una copia muy enmascarada del evento.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path

from loguru import logger
import torch
from torch import nn
import torch.nn.functional as F

from shield.config import MaeHyper
from shield.errors import CheckpointError
from shield.mae.tokenizer import WordPieceTokenizer

CHECKPOINT_MAGIC = b"SHIELD-MAE\n"
CHECKPOINT_VERSION = 1
IGNORE_INDEX = -100


# ======================================================
# Clase: EventMaeNetwork
# ======================================================
class EventMaeNetwork(nn.Module):
    def __init__(self, vocab_size: int, hyper: MaeHyper, pad_id: int = 0):
        super().__init__()
        self.pad_id = pad_id
        dim = hyper.dim
        self.token_embedding = nn.Embedding(vocab_size, dim, padding_idx=pad_id)
        self.position_embedding = nn.Embedding(hyper.max_seq_len, dim)
        self.embedding_norm = nn.LayerNorm(dim)

        def layer() -> nn.TransformerEncoderLayer:
            return nn.TransformerEncoderLayer(
                d_model=dim,
                nhead=hyper.heads,
                dim_feedforward=4 * dim,
                dropout=hyper.dropout,
                activation="gelu",
                batch_first=True,
            )

        self.encoder = nn.TransformerEncoder(
            layer(), num_layers=hyper.layers, enable_nested_tensor=False
        )
        self.mlm_head = nn.Linear(dim, vocab_size)

        # decodificador asimétrico: exactamente una capa
        self.summary_projection = nn.Linear(dim, dim)
        self.decoder = nn.TransformerEncoder(layer(), num_layers=1, enable_nested_tensor=False)
        self.reconstruction_head = nn.Linear(dim, vocab_size)

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(ids.size(1), device=ids.device).unsqueeze(0)
        return self.embedding_norm(self.token_embedding(ids) + self.position_embedding(positions))

    def encode(self, ids: torch.Tensor) -> torch.Tensor:
        """Estados ocultos finales del codificador, (batch, seq, dim)."""
        padding = ids.eq(self.pad_id)
        return self.encoder(self._embed(ids), src_key_padding_mask=padding)

    def summary(self, ids: torch.Tensor) -> torch.Tensor:
        """h_i: estado oculto final en la posición del token resumen."""
        return self.encode(ids)[:, 0]

    def forward(
        self,
        enc_ids: torch.Tensor,
        dec_ids: torch.Tensor,
        mlm_labels: torch.Tensor,
        targets: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Devuelve (pérdida del codificador, pérdida del decodificador).

        `mlm_labels` solo tiene valores válidos en las posiciones enmascaradas;
        `targets` contiene la secuencia original completa (sin [CLS] ni relleno).
        """
        hidden = self.encode(enc_ids)
        enc_loss = _masked_cross_entropy(self.mlm_head(hidden), mlm_labels)

        summary = self.summary_projection(hidden[:, 0])
        dec_input = self._embed(dec_ids)
        dec_input = torch.cat([summary.unsqueeze(1), dec_input[:, 1:]], dim=1)
        decoded = self.decoder(dec_input, src_key_padding_mask=dec_ids.eq(self.pad_id))
        dec_loss = _masked_cross_entropy(self.reconstruction_head(decoded), targets)
        return enc_loss, dec_loss


def _masked_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if not bool(labels.ne(IGNORE_INDEX).any()):
        return logits.sum() * 0.0
    return F.cross_entropy(
        logits.reshape(-1, logits.size(-1)), labels.reshape(-1), ignore_index=IGNORE_INDEX
    )


@dataclass
class MaeModel:
    network: EventMaeNetwork
    tokenizer: WordPieceTokenizer
    hyper: MaeHyper
    loss_history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.hyper.dim


# ======================================================
# Persistencia
# ======================================================
def save_model(model: MaeModel, path: Path) -> Path:
    """
    Guarda el modelo en un único archivo binario: cabecera con versión, pesos,
    vocabulario y su hash.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "hyper": asdict(model.hyper),
        "state_dict": model.network.state_dict(),
        "vocab": list(model.tokenizer.tokens),
        "vocab_hash": model.tokenizer.vocab_hash,
        "loss_history": list(model.loss_history),
    }
    with path.open("wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        torch.save(payload, handle)
    logger.success(f"✅ Modelo MAE guardado en {path}")
    return path


def load_model(path: Path) -> MaeModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"No se encontró el checkpoint: {path}")
    with path.open("rb") as handle:
        if handle.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} no es un checkpoint MAE de SHIELD")
        try:
            payload = torch.load(handle, map_location="cpu", weights_only=True)
        except Exception as e:
            raise CheckpointError(f"Checkpoint ilegible en {path}: {e}") from e

    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Versión de checkpoint no soportada: {payload.get('version')}")
    hyper_raw = dict(payload["hyper"])
    for name in ("encode_mask_range", "decode_mask_range"):
        hyper_raw[name] = tuple(hyper_raw[name])
    hyper = MaeHyper(**hyper_raw)
    tokenizer = WordPieceTokenizer(payload["vocab"], max_seq_len=hyper.max_seq_len)
    if tokenizer.vocab_hash != payload["vocab_hash"]:
        raise CheckpointError("El hash del vocabulario no coincide con el checkpoint")

    network = EventMaeNetwork(len(tokenizer), hyper, pad_id=tokenizer.pad_id)
    network.load_state_dict(payload["state_dict"])
    network.eval()
    logger.info(f"📦 Modelo MAE cargado desde {path} (vocabulario: {len(tokenizer)} tokens)")
    return MaeModel(network, tokenizer, hyper, list(payload.get("loss_history", [])))
