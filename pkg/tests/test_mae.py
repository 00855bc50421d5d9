import numpy as np
import pytest

from conftest import make_event, make_log
from shield.config import MaeHyper
from shield.errors import CheckpointError, EmptyTrainingSet, InvalidLogLabel, VocabularyMissing
from shield.mae.masking import mask, mask_count
from shield.mae.model import IGNORE_INDEX, load_model, save_model
from shield.mae.tokenizer import (
    UNK_TOKEN,
    TokenSequence,
    WordPieceTokenizer,
    build_vocab,
    event_to_sentence,
    split_words,
)
from shield.mae.training import _collate, embed, embed_events, gradient_check, train

SMALL = MaeHyper(dim=16, layers=1, heads=2, max_seq_len=32, batch_size=16, epochs=1)


def _benign_log(n: int = 60):
    templates = [
        ("EVENT_READ", "sh /usr/libexec/save-entropy", "/dev/urandom"),
        ("EVENT_WRITE", "/usr/sbin/cron -f", "/var/spool/cron/crontabs/root"),
        ("EVENT_READ", "sleep 300", "/dev/hpet0"),
    ]
    events = []
    for i in range(n):
        event_type, cmd, path = templates[i % len(templates)]
        events.append(make_event(f"p{i % 3}", f"f{i % 3}", event_type, i, cmd, file_path=path))
    return make_log(events, "training")


# ======================================================
# Tokenizador
# ======================================================
def test_sentence_excludes_ids_and_timestamp():
    a = make_event("p1", "f1", ts=1, command_line="cat /etc/passwd", file_path="/etc/passwd")
    b = make_event("p9", "f9", ts=99, command_line="cat /etc/passwd", file_path="/etc/passwd")
    assert event_to_sentence(a) == event_to_sentence(b) == "EVENT_READ cat /etc/passwd /etc/passwd"


def test_split_words_isolates_punctuation():
    assert split_words("EVENT_READ /tmp/vUgefal") == [
        "event", "_", "read", "/", "tmp", "/", "vugefal",
    ]


def test_tokenize_starts_with_cls_and_respects_max_len():
    tokenizer = WordPieceTokenizer.from_file(max_seq_len=8)
    seq = tokenizer.tokenize("EVENT_READ /tmp/vUgefal /etc/firefox/native-messaging-hosts/gtcache")
    assert seq.ids[0] == tokenizer.cls_id
    assert len(seq) == 8
    assert tokenizer.tokenize("").ids == (tokenizer.cls_id,)


def test_greedy_longest_match_and_unknown():
    tokenizer = WordPieceTokenizer.from_file()
    seq = tokenizer.tokenize("gtcache")
    assert [tokenizer.tokens[i] for i in seq.ids[1:]] == ["gtcache"]
    pieces = [tokenizer.tokens[i] for i in tokenizer.tokenize("vugefal").ids[1:]]
    assert pieces[0] == "v" and all(p.startswith("##") for p in pieces[1:])
    assert tokenizer.detokenize(tokenizer.tokenize("vugefal")) == "vugefal"
    assert [tokenizer.tokens[i] for i in tokenizer.tokenize("ñ").ids[1:]] == [UNK_TOKEN]


def test_round_trip_and_path_split():
    tokenizer = WordPieceTokenizer.from_file()
    assert tokenizer.detokenize(tokenizer.tokenize("udp port 53")) == "udp port 53"
    assert tokenizer.detokenize(tokenizer.tokenize("UDP Port 53")) == "udp port 53"
    pieces = [
        tokenizer.tokens[i] for i in tokenizer.tokenize(r"C:\Program Files\Wireshark\tshark").ids
    ]
    assert pieces[:6] == ["[CLS]", "c", ":", "\\", "program", "files"]
    assert UNK_TOKEN not in pieces
    assert tokenizer.detokenize(tokenizer.tokenize(r"C:\Program Files\Wireshark\tshark")) == (
        r"c : \ program files \ wireshark \ tshark"
    )


def test_words_outside_the_vocabulary_fall_back_to_characters():
    tokenizer = WordPieceTokenizer.from_file()
    for word in ("tshark", "xmrig", "kworker42"):
        assert word not in tokenizer.vocab
        pieces = [tokenizer.tokens[i] for i in tokenizer.tokenize(word).ids[1:]]
        assert UNK_TOKEN not in pieces
        assert all(p.startswith("##") for p in pieces[1:])
        assert tokenizer.detokenize(tokenizer.tokenize(word)) == word
    # solo lo que no tiene ni siquiera un carácter en el vocabulario se pierde
    assert [tokenizer.tokens[i] for i in tokenizer.tokenize("日志").ids[1:]] == [UNK_TOKEN]
    extended = tokenizer.extended(["tshark"])
    assert [extended.tokens[i] for i in extended.tokenize("tshark").ids[1:]] == ["tshark"]


def test_vocab_requires_special_tokens(tmp_path):
    with pytest.raises(VocabularyMissing):
        WordPieceTokenizer(["a", "b"])
    with pytest.raises(VocabularyMissing):
        WordPieceTokenizer.from_file(tmp_path / "missing.txt")


def test_build_vocab_is_frequency_ordered():
    assert build_vocab(["foo bar foo", "bar foo baz"]) == ["foo", "bar"]


# ======================================================
# Enmascarado
# ======================================================
def test_mask_never_touches_summary_position():
    seq = TokenSequence(tuple(range(2, 42)))
    for seed in range(50):
        masked = mask(seq, (0.15, 0.30), seed)
        assert 0 not in masked.masked_positions
        assert len(set(masked.masked_positions)) == len(masked.masked_positions)
        assert 0.15 <= masked.mask_ratio <= 0.30


def test_mask_is_deterministic_and_count_rounds_half_up():
    seq = TokenSequence(tuple(range(2, 12)))
    assert mask(seq, (0.5, 0.7), 3) == mask(seq, (0.5, 0.7), 3)
    assert mask_count(11, 0.25) == 3  # 0.25 × 10 = 2.5 → 3
    assert mask_count(3, 0.15) == 1
    assert mask_count(1, 0.30) == 0
    assert mask(TokenSequence((2,)), (0.15, 0.30), 0).masked_positions == ()


def test_length_100_at_ratio_030_masks_30_positions():
    seq = TokenSequence(tuple(range(2, 102)))
    for seed in range(10):
        masked = mask(seq, (0.30, 0.30), seed)
        assert len(masked.masked_positions) == 30
        assert 0 not in masked.masked_positions



# ======================================================
# Entrenamiento y embeddings
# ======================================================
def test_train_rejects_bad_input():
    with pytest.raises(InvalidLogLabel):
        train(make_log([make_event()], "testing"), hyper=SMALL)
    with pytest.raises(EmptyTrainingSet):
        train(make_log([], "training"), hyper=SMALL)


def test_embeddings_are_deterministic_and_shared_per_sentence():
    model = train(_benign_log(), hyper=SMALL, seed=1)
    a = make_event("p1", "f1", ts=1, command_line="sleep 300", file_path="/dev/hpet0")
    b = make_event("p7", "f8", ts=5, command_line="sleep 300", file_path="/dev/hpet0")
    matrix = embed_events(model, [a, b, a], m=3, seed=7)
    assert matrix.shape == (3, SMALL.dim)
    np.testing.assert_array_equal(matrix[0], matrix[1])
    np.testing.assert_allclose(matrix[0], embed(model, a, m=3, seed=7).vector)
    np.testing.assert_array_equal(embed_events(model, [b, a], m=3, seed=7)[1], matrix[0])


def test_embedding_with_four_masks_is_the_mean_of_single_masks():
    model = train(_benign_log(), hyper=SMALL, seed=1)
    event = make_event(command_line="/usr/sbin/cron -f", file_path="/etc/crontab")
    singles = [embed(model, event, m=1, seed=11 + j).vector for j in range(4)]
    np.testing.assert_allclose(
        embed(model, event, m=4, seed=11).vector, np.mean(singles, axis=0), rtol=1e-5, atol=1e-6
    )
    np.testing.assert_array_equal(
        embed(model, event, m=1, seed=11).vector, embed(model, event, m=1, seed=11).vector
    )


def test_decoder_targets_cover_every_position_but_the_summary_token():
    model = train(_benign_log(), hyper=SMALL, seed=1)
    seqs = [model.tokenizer.tokenize("EVENT_READ sleep 300 /dev/hpet0")]
    _, _, mlm, targets = _collate(seqs, [0], [1], model.tokenizer, SMALL)
    assert targets[0, 0] == IGNORE_INDEX
    assert targets[0, 1:].tolist() == list(seqs[0].ids[1:])
    masked = [i for i, label in enumerate(mlm[0].tolist()) if label != IGNORE_INDEX]
    assert masked == list(mask(seqs[0], SMALL.encode_mask_range, 0).masked_positions)


@pytest.mark.slow
def test_embeddings_stay_finite_over_random_sentences():
    model = train(_benign_log(), hyper=SMALL, seed=1)
    rng = np.random.default_rng(5)
    alphabet = list("abcdefghijklmnopqrstuvwxyz0123456789/._-:\\ ")
    events = [
        make_event(
            command_line="".join(rng.choice(alphabet, size=int(rng.integers(0, 60)))),
            file_path="/" + "".join(rng.choice(alphabet[:36], size=8)),
        )
        for _ in range(10_000)
    ]
    matrix = embed_events(model, events, m=1, seed=0)
    assert matrix.shape == (10_000, SMALL.dim)
    assert np.isfinite(matrix).all()


@pytest.mark.slow
def test_single_repeated_sentence_drives_loss_towards_zero():
    events = [
        make_event("p1", "f1", "EVENT_READ", i, "sleep 300", file_path="/dev/hpet0")
        for i in range(200)
    ]
    hyper = MaeHyper(
        dim=16, layers=1, heads=2, max_seq_len=32, dropout=0.0, batch_size=16, lr=3e-3
    )
    model = train(make_log(events, "training"), hyper=hyper, epochs=30, seed=2)
    assert model.loss_history[-1] < 0.1 * model.loss_history[0]
    assert model.loss_history[-1] < 0.5


def test_checkpoint_round_trip(tmp_path):
    model = train(_benign_log(), hyper=SMALL, seed=1)
    path = save_model(model, tmp_path / "mae.pt")
    loaded = load_model(path)
    assert loaded.tokenizer.tokens == model.tokenizer.tokens
    event = make_event(command_line="sh /usr/libexec/save-entropy", file_path="/dev/urandom")
    np.testing.assert_allclose(
        embed(loaded, event, m=2).vector, embed(model, event, m=2).vector, rtol=1e-6
    )


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.pt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_model(path)
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "missing.pt")


def test_gradient_check_agrees_with_finite_differences():
    assert gradient_check(n_params=20) < 1e-3


@pytest.mark.slow
def test_held_out_loss_halves_after_training():
    rng = np.random.default_rng(0)
    commands = [
        ("EVENT_READ", "sh /usr/libexec/save-entropy", "/dev/urandom"),
        ("EVENT_WRITE", "sh /usr/libexec/save-entropy", "/var/db/entropy/saved-entropy.1"),
        ("EVENT_READ", "/usr/sbin/cron -f", "/etc/crontab"),
        ("EVENT_READ", "sleep 300", "/dev/hpet0"),
        ("EVENT_MMAP", "/usr/lib/firefox/firefox", "/usr/lib/firefox/libxul.so"),
    ]
    events = []
    for i, choice in enumerate(rng.integers(0, len(commands), size=1000)):
        event_type, cmd, path = commands[int(choice)]
        events.append(make_event(f"p{choice}", path, event_type, i, cmd, file_path=path))
    hyper = MaeHyper(dim=32, layers=2, heads=2, max_seq_len=32, lr=1e-3, epochs=10)
    model = train(make_log(events, "training"), hyper=hyper, seed=7)
    assert len(model.loss_history) == 11
    assert model.loss_history[-1] <= 0.5 * model.loss_history[0]
