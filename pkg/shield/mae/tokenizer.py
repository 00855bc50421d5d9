"""
tokenizer.py
============
Frase de evento y tokenizador WordPiece (sin mayúsculas) usado por el MAE.

El vocabulario base se distribuye con el paquete (`shield/data/base_vocab.txt`) y se
amplía durante el entrenamiento con las palabras frecuentes del log benigno.
"""

from collections import Counter
from dataclasses import dataclass
import hashlib
from pathlib import Path
from typing import Iterable, Sequence
import unicodedata

from shield.config import BASE_VOCAB_PATH, MAE_MAX_SEQ_LEN
from shield.errors import VocabularyMissing
from shield.events import Event

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
MASK_TOKEN = "[MASK]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, MASK_TOKEN)

SENTENCE_FIELDS = ("event_type", "command_line", "process_path", "ip_address", "file_path")


# ======================================================
# Función: event_to_sentence
# ======================================================
def event_to_sentence(event: Event) -> str:
    """
    Construye la frase de un evento concatenando sus atributos en orden fijo.

    Se excluyen los identificadores de sujeto/objeto y la marca de tiempo, de modo que
    dos eventos que solo difieren en esos campos producen la misma frase.

    Ejemplo
    -------
    >>> e = Event("p1", "f1", "EVENT_READ", 0, command_line="sh /usr/libexec/save-entropy")
    >>> event_to_sentence(e)
    'EVENT_READ sh /usr/libexec/save-entropy'
    """
    parts = (getattr(event, name) for name in SENTENCE_FIELDS)
    return " ".join(part for part in parts if part)


def _is_punctuation(char: str) -> bool:
    code = ord(char)
    # Todo ASCII no alfanumérico cuenta como puntuación ("/", "\\", ":", "$", ...)
    if 33 <= code <= 47 or 58 <= code <= 64 or 91 <= code <= 96 or 123 <= code <= 126:
        return True
    return unicodedata.category(char).startswith("P")


def split_words(text: str) -> list[str]:
    """Pasa a minúsculas, separa por espacios y aísla cada signo de puntuación."""
    words: list[str] = []
    for chunk in text.lower().split():
        current = []
        for char in chunk:
            if _is_punctuation(char):
                if current:
                    words.append("".join(current))
                    current = []
                words.append(char)
            else:
                current.append(char)
        if current:
            words.append("".join(current))
    return words


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


# ======================================================
# Clase: WordPieceTokenizer
# ======================================================
class WordPieceTokenizer:
    """
    Tokenizador WordPiece de coincidencia voraz más larga primero.

    Parámetros
    ----------
    tokens : Sequence[str]
        Vocabulario ordenado; el índice de cada token es su id.
    max_seq_len : int
        Longitud máxima de la secuencia, incluido el token resumen [CLS].
    max_chars_per_word : int
        Palabras más largas se convierten en [UNK].
    """

    def __init__(
        self,
        tokens: Sequence[str],
        max_seq_len: int = MAE_MAX_SEQ_LEN,
        max_chars_per_word: int = 100,
    ):
        if not tokens:
            raise VocabularyMissing("El vocabulario está vacío")
        missing = [t for t in SPECIAL_TOKENS if t not in tokens]
        if missing:
            raise VocabularyMissing(f"Faltan tokens especiales en el vocabulario: {missing}")
        self.tokens = list(tokens)
        self.vocab = {token: index for index, token in enumerate(self.tokens)}
        self.max_seq_len = max_seq_len
        self.max_chars_per_word = max_chars_per_word

    @classmethod
    def from_file(cls, path: Path = BASE_VOCAB_PATH, max_seq_len: int = MAE_MAX_SEQ_LEN):
        path = Path(path)
        if not path.exists():
            raise VocabularyMissing(f"No se encontró el vocabulario: {path}")
        tokens = path.read_text(encoding="utf-8").split("\n")
        return cls([t for t in tokens if t], max_seq_len=max_seq_len)

    # ids especiales
    @property
    def pad_id(self) -> int:
        return self.vocab[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.vocab[UNK_TOKEN]

    @property
    def cls_id(self) -> int:
        return self.vocab[CLS_TOKEN]

    @property
    def mask_id(self) -> int:
        return self.vocab[MASK_TOKEN]

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def vocab_hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def _word_pieces(self, word: str) -> list[str]:
        if len(word) > self.max_chars_per_word:
            return [UNK_TOKEN]
        pieces = []
        start = 0
        while start < len(word):
            end = len(word)
            piece = None
            while start < end:
                candidate = word[start:end]
                if start > 0:
                    candidate = "##" + candidate
                if candidate in self.vocab:
                    piece = candidate
                    break
                end -= 1
            if piece is None:
                return [UNK_TOKEN]
            pieces.append(piece)
            start = end
        return pieces

    def tokenize(self, sentence: str) -> TokenSequence:
        """Tokeniza una frase; siempre empieza por [CLS] y nunca supera `max_seq_len`."""
        ids = [self.cls_id]
        for word in split_words(sentence):
            for piece in self._word_pieces(word):
                ids.append(self.vocab[piece])
                if len(ids) >= self.max_seq_len:
                    return TokenSequence(tuple(ids))
        return TokenSequence(tuple(ids))

    def detokenize(self, seq: TokenSequence | Iterable[int]) -> str:
        ids = seq.ids if isinstance(seq, TokenSequence) else tuple(seq)
        words: list[str] = []
        for index in ids:
            token = self.tokens[index]
            if token in (CLS_TOKEN, PAD_TOKEN, SEP_TOKEN):
                continue
            if token.startswith("##") and words:
                words[-1] += token[2:]
            else:
                words.append(token)
        return " ".join(words)

    def extended(self, words: Iterable[str]) -> "WordPieceTokenizer":
        """Nuevo tokenizador con `words` añadidas al final del vocabulario (sin duplicados)."""
        tokens = list(self.tokens)
        seen = set(tokens)
        for word in words:
            if word not in seen:
                tokens.append(word)
                seen.add(word)
        return WordPieceTokenizer(tokens, self.max_seq_len, self.max_chars_per_word)


# ======================================================
# Función: build_vocab
# ======================================================
def build_vocab(
    sentences: Iterable[str],
    min_freq: int = 2,
    max_new: int = 30_000,
) -> list[str]:
    """
    Palabras del corpus vistas al menos `min_freq` veces, ordenadas por frecuencia
    descendente y luego alfabéticamente (orden determinista).
    """
    counts = Counter(word for sentence in sentences for word in split_words(sentence))
    frequent = [(w, c) for w, c in counts.items() if c >= min_freq and len(w) > 1]
    frequent.sort(key=lambda item: (-item[1], item[0]))
    return [word for word, _ in frequent[:max_new]]
