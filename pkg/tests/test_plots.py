from conftest import make_event
from shield.detect import TimeWindow, select_windows
from shield.evidence import EvidenceNeighborhood
from shield.investigate import DetectionLabels
from shield.plots import (
    neighborhood_network,
    save_neighborhood_html,
    save_window_figure,
    window_figure,
)


def _selection():
    windows = [
        TimeWindow(0, 600_000_000, (0,), 0.2, (0,)),
        TimeWindow(600_000_000, 1_200_000_000, (1, 2), 0.9, (600_000_000, 600_000_001)),
    ]
    return select_windows(windows, t_ano=0.5, c=3)


def _neighborhood():
    events = (
        make_event("sh", "implant", "EVENT_EXECUTE", 1, "/bin/sh -c ./gtcache", "/bin/sh",
                   file_path="/tmp/vUgefal"),
        make_event("gtcache", "c2", "EVENT_SENDTO", 2, "./gtcache", "/tmp/vUgefal",
                   ip_address="146.153.68.151:443"),
        make_event("gtcache", "c2", "EVENT_SENDTO", 3, "./gtcache", "/tmp/vUgefal",
                   ip_address="146.153.68.151:443"),
    )
    return EvidenceNeighborhood((0, 1, 2), events, ("sh",), 1)


def test_window_figure_separates_selected_windows(tmp_path):
    fig = window_figure(_selection())
    assert [trace.name for trace in fig.data] == ["Ventana", "Ataque"]
    assert list(fig.data[1].y) == [0.9]
    assert fig.layout.shapes[0].y0 == 0.5
    path = save_window_figure(_selection().to_dict(), tmp_path / "windows.html")
    assert "plotly" in path.read_text("utf-8")


def test_neighborhood_network_marks_flagged_entities_and_seeds():
    labels = DetectionLabels(("c2",), {"c2": "146.153.68.151"}, (1, 2))
    net = neighborhood_network(_neighborhood(), labels)
    nodes = {node["id"]: node for node in net.nodes}
    assert set(nodes) == {"sh", "implant", "gtcache", "c2"}
    assert nodes["c2"]["label"] == "146.153.68.151"
    assert nodes["c2"]["color"] == "#E45756"
    assert nodes["sh"]["borderWidth"] == 4
    assert nodes["implant"]["shape"] == "ellipse"
    assert len(net.edges) == 2
    sendto = next(e for e in net.edges if e["to"] == "c2")
    assert sendto["value"] == 2


def test_save_neighborhood_html(tmp_path):
    path = save_neighborhood_html(_neighborhood(), tmp_path / "nbr.html")
    assert "146.153.68.151" in path.read_text("utf-8")
    empty = save_neighborhood_html(EvidenceNeighborhood((), (), (), 0), tmp_path / "empty.html")
    assert "Vecindario vacío" in empty.read_text("utf-8")
