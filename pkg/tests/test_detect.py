import math

import numpy as np
import pytest

from conftest import make_event, make_log
from shield.detect import (
    TimeWindow,
    WindowSelection,
    fit_boundary,
    mean_window_score,
    select_windows,
    top_k_count,
    window_scores,
)
from shield.errors import EmptyTrainingSet, InsufficientData


def _oracle(timestamps, scores, w_l, stride, k_pct):
    """Ventanas por fuerza bruta: recorre todos los inicios desde el primer timestamp."""
    first, last = min(timestamps), max(timestamps)
    windows = []
    j = 0
    while first + j * stride <= last:
        start = first + j * stride
        members = sorted(
            (t, i) for i, t in enumerate(timestamps) if start <= t < start + w_l
        )
        if members:
            ranked = sorted((scores[i] for _, i in members), reverse=True)
            k = max(1, math.ceil(round(k_pct * len(members), 9)))
            windows.append((start, tuple(i for _, i in members), sum(ranked[:k]) / k))
        j += 1
    return windows


@pytest.mark.parametrize("seed", range(100))
def test_window_scores_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 400))
    timestamps = [int(t) for t in rng.integers(0, 10_000, size=n)]
    scores = [float(s) for s in rng.normal(size=n)]
    w_l = int(rng.integers(50, 2_000))
    stride = int(rng.integers(w_l // 4, w_l + 1)) if seed % 2 else w_l
    k_pct = float(rng.choice([0.05, 0.1, 0.25, 1.0]))
    log = make_log(make_event(ts=t) for t in timestamps)

    got = window_scores(list(enumerate(scores)), log, w_l, stride, k_pct)
    expected = _oracle(timestamps, scores, w_l, stride, k_pct)
    assert [(w.start, w.event_indices) for w in got] == [(s, i) for s, i, _ in expected]
    for window, (_, _, score) in zip(got, expected):
        assert window.score == pytest.approx(score, abs=1e-12)


def test_top_k_count_guards_float_noise():
    assert top_k_count(30, 0.1) == 3
    assert top_k_count(5, 0.1) == 1
    assert top_k_count(31, 0.1) == 4


def test_window_scores_validates_arguments():
    log = make_log([make_event(ts=0)])
    with pytest.raises(ValueError):
        window_scores([(0, 1.0)], log, 0, 1, 0.1)
    with pytest.raises(ValueError):
        window_scores([(0, 1.0)], log, 10, 10, 0.0)
    assert window_scores([], log, 10, 10, 0.1) == []


def _window(start, score, indices=()):
    indices = indices or (start,)
    return TimeWindow(start, start + 10, tuple(indices), score, tuple(start for _ in indices))


def test_select_windows_keeps_at_most_c_above_threshold():
    windows = [_window(0, 0.1), _window(10, 0.9), _window(20, 0.5), _window(30, 0.7)]
    selection = select_windows(windows, t_ano=0.3, c=2)
    assert [w.start for w in selection.selected] == [10, 30]
    assert selection.truncated_events == (10, 30)
    assert selection.detected


def test_select_windows_breaks_ties_by_earliest_start():
    windows = [_window(40, 0.8), _window(0, 0.8), _window(20, 0.8)]
    selection = select_windows(windows, t_ano=0.0, c=2)
    assert [w.start for w in selection.selected] == [0, 20]


def test_select_windows_strictly_above_and_empty_means_no_attack():
    selection = select_windows([_window(0, 0.5)], t_ano=0.5, c=3)
    assert not selection.detected
    assert selection.truncated_events == ()


def test_truncated_events_are_deduplicated_in_time_order():
    a = TimeWindow(0, 10, (2, 3), 1.0, (5, 6))
    b = TimeWindow(5, 15, (3, 4), 0.9, (6, 12))
    selection = select_windows([a, b], t_ano=0.0, c=3)
    assert selection.truncated_events == (2, 3, 4)
    assert WindowSelection.from_dict(selection.to_dict()) == selection


def test_fit_boundary_gamma_and_score_direction():
    rng = np.random.default_rng(0)
    benign = rng.normal(0, 1, size=(300, 4))
    state = fit_boundary(benign)
    assert state.gamma == pytest.approx(1 / (4 * benign.var()))
    near, far = state.score(np.array([[0.0, 0.0, 0.0, 0.0], [8.0, 8.0, 8.0, 8.0]]))
    assert far > near


def test_fit_boundary_errors():
    with pytest.raises(InsufficientData):
        fit_boundary(np.zeros((1, 4)))
    with pytest.raises(EmptyTrainingSet):
        mean_window_score([])
    with pytest.raises(ValueError):
        fit_boundary(np.ones((5, 2))).with_t_ano(float("nan"))


@pytest.mark.slow
def test_random_string_events_separate_from_benign_templates():
    from sklearn.metrics import roc_auc_score

    from shield.config import MaeHyper
    from shield.detect import derive_t_ano, score_events
    from shield.mae.training import embed_events, train

    rng = np.random.default_rng(3)
    templates = [
        ("EVENT_READ", "sh /usr/libexec/save-entropy", "/dev/urandom"),
        ("EVENT_READ", "/usr/sbin/cron -f", "/etc/crontab"),
        ("EVENT_READ", "sleep 300", "/dev/hpet0"),
        ("EVENT_MMAP", "/usr/lib/firefox/firefox", "/usr/lib/firefox/libxul.so"),
        ("EVENT_WRITE", "/usr/bin/python3 /opt/backup/backup.py", "/var/backups/daily.tar"),
    ]

    def benign(n, start):
        picks = rng.integers(0, len(templates), size=n)
        return [
            make_event(f"p{c}", templates[c][2], templates[c][0], start + 60_000_000 * i,
                       templates[c][1], file_path=templates[c][2])
            for i, c in enumerate(int(p) for p in picks)
        ]

    def random_word():
        return "".join(rng.choice(list("abcdefghijklmnopqrstuvwxyz0123456789"), size=10))

    train_log = make_log(benign(600, 0), "training")
    test_events = benign(300, 10**12)
    injected_at = 10**12 + 60_000_000 * 150
    for i in range(20):
        path = f"/tmp/{random_word()}"
        test_events.append(
            make_event("px", path, "EVENT_EXECUTE", injected_at + i, f"./{random_word()} -x",
                       file_path=path)
        )
    test_events.sort(key=lambda e: e.timestamp)
    test_log = make_log(test_events)
    labels = [e.subject_id == "px" for e in test_events]

    hyper = MaeHyper(dim=32, layers=2, heads=2, max_seq_len=48, lr=1e-3, epochs=5)
    model = train(train_log, hyper=hyper, seed=7)
    state = fit_boundary(embed_events(model, train_log.events, 5, 7))
    w_l = 30 * 60_000_000
    state = state.with_t_ano(derive_t_ano(state, model, train_log, w_l, w_l, 0.1, 5, 7))
    scored = score_events(state, model, test_log, 5, 7)
    assert roc_auc_score(labels, [s for _, s in scored]) >= 0.8

    windows = window_scores(scored, test_log, w_l, w_l, 0.1)
    top = sorted(windows, key=lambda w: (-w.score, w.start))[:3]
    attack = {i for i, is_attack in enumerate(labels) if is_attack}
    assert any(attack & set(w.event_indices) for w in top)


def test_t_ano_is_the_mean_of_training_window_scores(monkeypatch):
    import shield.detect as detect

    monkeypatch.setattr(detect, "score_events", lambda *args, **kwargs: [(0, 0.1), (1, 0.3)])
    w_l = 1_800_000_000
    train_log = make_log([make_event(ts=0), make_event(ts=2 * w_l)], "training")
    t_ano = detect.derive_t_ano(None, None, train_log, w_l, w_l, k_pct=1.0)
    assert t_ano == pytest.approx(0.2)


def test_score_events_is_invariant_to_event_order():
    from shield.config import MaeHyper
    from shield.detect import score_events
    from shield.mae.training import embed_events, train

    commands = ["sleep 300", "/usr/sbin/cron -f", "sh /usr/libexec/save-entropy", "./gtcache"]
    train_log = make_log(
        [make_event(f"p{i % 3}", ts=i, command_line=commands[i % 3]) for i in range(45)],
        "training",
    )
    hyper = MaeHyper(dim=16, layers=1, heads=2, max_seq_len=32, batch_size=16, epochs=1)
    model = train(train_log, hyper=hyper, seed=1)
    state = fit_boundary(embed_events(model, train_log.events, m=2, seed=0))

    events = [make_event(f"q{i}", ts=i, command_line=commands[i % 4]) for i in range(12)]
    order = np.random.default_rng(9).permutation(len(events))
    forward = dict(score_events(state, model, make_log(events), m=2, seed=0))
    shuffled = score_events(state, model, make_log([events[i] for i in order]), m=2, seed=0)
    for position, score in shuffled:
        assert score == pytest.approx(forward[int(order[position])], abs=1e-9)
